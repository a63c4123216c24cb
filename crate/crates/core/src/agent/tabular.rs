//! Tabular Q-learning and double Q-learning. Used as reference learners for
//! the deep agent's behaviour on small problems.

use std::collections::HashMap;
use std::hash::Hash;

use rand::Rng;

#[derive(Clone, Debug)]
pub struct TabularQ<S> {
    values: HashMap<(S, usize), f64>,
    pub actions: usize,
    pub learning_rate: f64,
    pub gamma: f64,
}

impl<S: Clone + Eq + Hash> TabularQ<S> {
    pub fn new(actions: usize, learning_rate: f64, gamma: f64) -> Self {
        TabularQ { values: HashMap::new(), actions, learning_rate, gamma }
    }

    pub fn value(&self, s: &S, a: usize) -> f64 {
        self.values.get(&(s.clone(), a)).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, s: &S, a: usize, v: f64) {
        self.values.insert((s.clone(), a), v);
    }

    /// Greedy action, lowest index on ties.
    pub fn argmax(&self, s: &S) -> usize {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for a in 0..self.actions {
            let v = self.value(s, a);
            if v > best_v {
                best = a;
                best_v = v;
            }
        }
        best
    }

    pub fn max_value(&self, s: &S) -> f64 {
        self.value(s, self.argmax(s))
    }

    /// `Q(s,a) += lr * (r + gamma * max_a' Q(s',a') - Q(s,a))`; `next = None`
    /// marks a terminal transition.
    pub fn update(&mut self, s: &S, a: usize, r: f64, next: Option<&S>) {
        let bootstrap = next.map_or(0.0, |n| self.max_value(n));
        self.move_towards(s, a, r + self.gamma * bootstrap);
    }

    fn move_towards(&mut self, s: &S, a: usize, target: f64) {
        let q = self.value(s, a);
        self.set(s, a, q + self.learning_rate * (target - q));
    }
}

/// Tabular Q update.
pub fn tabular_q_update<S: Clone + Eq + Hash>(tab: &mut TabularQ<S>, s: &S, a: usize, r: f64, next: Option<&S>) {
    tab.update(s, a, r, next)
}

/// Two tables; each update picks one at random, selects the next action with
/// it and evaluates that action with the other.
#[derive(Clone, Debug)]
pub struct DoubleTabularQ<S> {
    pub first: TabularQ<S>,
    pub second: TabularQ<S>,
}

impl<S: Clone + Eq + Hash> DoubleTabularQ<S> {
    pub fn new(actions: usize, learning_rate: f64, gamma: f64) -> Self {
        DoubleTabularQ {
            first: TabularQ::new(actions, learning_rate, gamma),
            second: TabularQ::new(actions, learning_rate, gamma),
        }
    }

    pub fn update<R: Rng + ?Sized>(&mut self, s: &S, a: usize, r: f64, next: Option<&S>, rng: &mut R) {
        let (update, eval) =
            if rng.random_bool(0.5) { (&mut self.first, &self.second) } else { (&mut self.second, &self.first) };
        let bootstrap = next.map_or(0.0, |n| eval.value(n, update.argmax(n)));
        let target = r + update.gamma * bootstrap;
        update.move_towards(s, a, target);
    }

    /// Mean of the two tables.
    pub fn value(&self, s: &S, a: usize) -> f64 {
        0.5 * (self.first.value(s, a) + self.second.value(s, a))
    }

    pub fn max_value(&self, s: &S) -> f64 {
        (0..self.first.actions).map(|a| self.value(s, a)).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Tabular double Q update.
pub fn tabular_double_q_update<S: Clone + Eq + Hash, R: Rng + ?Sized>(
    tab: &mut DoubleTabularQ<S>,
    s: &S,
    a: usize,
    r: f64,
    next: Option<&S>,
    rng: &mut R,
) {
    tab.update(s, a, r, next, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_step_full_rate() {
        let mut q = TabularQ::new(2, 1.0, 0.0);
        tabular_q_update(&mut q, &0u8, 1, 5.0, Some(&1u8));
        assert_eq!(q.value(&0, 1), 5.0);
    }

    #[test]
    fn zero_rate_is_noop() {
        let mut q = TabularQ::new(2, 0.0, 0.9);
        q.set(&1u8, 0, 3.0);
        tabular_q_update(&mut q, &0u8, 0, 5.0, Some(&1u8));
        assert_eq!(q.value(&0, 0), 0.0);

        let mut d = DoubleTabularQ::new(2, 0.0, 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        tabular_double_q_update(&mut d, &0u8, 0, 5.0, Some(&1u8), &mut rng);
        assert_eq!(d.value(&0, 0), 0.0);
    }

    #[test]
    fn equal_tables_match_single_update() {
        let mut d = DoubleTabularQ::new(2, 0.5, 0.9);
        let mut single = TabularQ::new(2, 0.5, 0.9);
        for (s, a, v) in [(1u8, 0, 2.0), (1, 1, 4.0), (0, 0, 1.0)] {
            d.first.set(&s, a, v);
            d.second.set(&s, a, v);
            single.set(&s, a, v);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        tabular_double_q_update(&mut d, &0u8, 0, 1.0, Some(&1u8), &mut rng);
        single.update(&0u8, 0, 1.0, Some(&1u8));
        // Whichever table moved, it moved exactly like the single table.
        let moved = if d.first.value(&0, 0) != 1.0 { &d.first } else { &d.second };
        assert_eq!(moved.value(&0, 0), single.value(&0, 0));
    }

    #[test]
    fn argmax_ties_to_lowest() {
        let mut q = TabularQ::new(3, 0.1, 0.9);
        q.set(&0u8, 1, 2.0);
        q.set(&0u8, 2, 2.0);
        assert_eq!(q.argmax(&0), 1);
    }
}
