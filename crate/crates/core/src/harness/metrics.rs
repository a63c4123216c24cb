//! Per-step metrics and committed-transition traces as CSV.
//!
//! Metrics columns, in order: `step, tick, warmup, routed, leader, action,
//! edge, explored, epsilon, beta, util_0 .. util_{C-1}, loss, mean_abs_td,
//! signal, local_reward, reward, discounted_return`. Empty cells mean "not
//! applicable at this step".

use std::fs::File;
use std::path::Path;
use std::str::FromStr;

use super::HarnessError;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    /// Network clock when the request arrived.
    pub tick: u64,
    pub warmup: bool,
    pub routed: bool,
    /// Group whose leader made the top-level choice.
    pub leader: Option<u32>,
    pub action: Option<usize>,
    pub edge: Option<u32>,
    pub explored: Option<bool>,
    pub epsilon: Option<f64>,
    pub beta: Option<f64>,
    /// Decision-time utilization of each candidate slot.
    pub utilization: Vec<Option<f64>>,
    pub loss: Option<f64>,
    pub mean_abs_td: Option<f64>,
    pub signal: Option<f64>,
    pub local_reward: Option<f64>,
    /// `w1 * y + r_local` of the top-level decision.
    pub reward: Option<f64>,
    pub discounted_return: f64,
}

pub(crate) fn metrics_header(slots: usize) -> Vec<String> {
    let mut h: Vec<String> =
        ["step", "tick", "warmup", "routed", "leader", "action", "edge", "explored", "epsilon", "beta"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    h.extend((0..slots).map(|i| format!("util_{i}")));
    h.extend(["loss", "mean_abs_td", "signal", "local_reward", "reward", "discounted_return"].map(String::from));
    h
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

impl MetricsRecord {
    pub(crate) fn to_row(&self) -> Vec<String> {
        let mut r = vec![
            self.step.to_string(),
            self.tick.to_string(),
            flag(self.warmup),
            flag(self.routed),
            opt(self.leader),
            opt(self.action),
            opt(self.edge),
            opt(self.explored.map(flag)),
            opt(self.epsilon),
            opt(self.beta),
        ];
        r.extend(self.utilization.iter().map(|u| opt(*u)));
        r.extend([
            opt(self.loss),
            opt(self.mean_abs_td),
            opt(self.signal),
            opt(self.local_reward),
            opt(self.reward),
            self.discounted_return.to_string(),
        ]);
        r
    }
}

/// One committed transition. `reward` is what entered the replay memory.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TransitionRecord {
    pub leader: u32,
    pub decision_step: u64,
    pub commit_step: u64,
    pub action: usize,
    pub signal: Option<f64>,
    pub local_reward: f64,
    pub reward: f64,
}

fn corrupt(path: &Path, message: impl Into<String>) -> HarnessError {
    HarnessError::Metrics { path: path.display().to_string(), message: message.into() }
}

fn open(path: &Path) -> Result<csv::Reader<File>, HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::Reader::from_reader(file))
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>, HarnessError> {
    let path = path.as_ref();
    let mut reader = open(path)?;
    let header: Vec<String> =
        reader.headers().map_err(|e| corrupt(path, e.to_string()))?.iter().map(String::from).collect();
    let slots = header.iter().filter(|h| h.starts_with("util_")).count();
    if header != metrics_header(slots) {
        return Err(corrupt(path, "unexpected metrics header"));
    }
    let mut out = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| corrupt(path, e.to_string()))?;
        let bad = |col: &str| corrupt(path, format!("row {}: bad {col}", line + 1));
        let cell = |i: usize| row.get(i).unwrap_or("");
        fn parse<T: FromStr>(s: &str) -> Result<Option<T>, ()> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| ())
            }
        }
        let req = |i: usize| -> Result<String, HarnessError> {
            let s = cell(i);
            if s.is_empty() {
                Err(bad(&header[i]))
            } else {
                Ok(s.to_string())
            }
        };
        let b = |s: &str| s == "1";
        let base = 10;
        let rec = MetricsRecord {
            step: req(0)?.parse().map_err(|_| bad("step"))?,
            tick: req(1)?.parse().map_err(|_| bad("tick"))?,
            warmup: b(&req(2)?),
            routed: b(&req(3)?),
            leader: parse(cell(4)).map_err(|_| bad("leader"))?,
            action: parse(cell(5)).map_err(|_| bad("action"))?,
            edge: parse(cell(6)).map_err(|_| bad("edge"))?,
            explored: parse::<u8>(cell(7)).map_err(|_| bad("explored"))?.map(|v| v == 1),
            epsilon: parse(cell(8)).map_err(|_| bad("epsilon"))?,
            beta: parse(cell(9)).map_err(|_| bad("beta"))?,
            utilization: (0..slots)
                .map(|i| parse(cell(base + i)).map_err(|_| bad("utilization")))
                .collect::<Result<_, _>>()?,
            loss: parse(cell(base + slots)).map_err(|_| bad("loss"))?,
            mean_abs_td: parse(cell(base + slots + 1)).map_err(|_| bad("mean_abs_td"))?,
            signal: parse(cell(base + slots + 2)).map_err(|_| bad("signal"))?,
            local_reward: parse(cell(base + slots + 3)).map_err(|_| bad("local_reward"))?,
            reward: parse(cell(base + slots + 4)).map_err(|_| bad("reward"))?,
            discounted_return: req(base + slots + 5)?.parse().map_err(|_| bad("discounted_return"))?,
        };
        out.push(rec);
    }
    Ok(out)
}

pub fn read_transitions(path: impl AsRef<Path>) -> Result<Vec<TransitionRecord>, HarnessError> {
    let path = path.as_ref();
    open(path)?.deserialize().map(|r| r.map_err(|e| corrupt(path, e.to_string()))).collect()
}
