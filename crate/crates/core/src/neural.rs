//! Small dense action-value network with hand-written backpropagation.
//!
//! Hidden layers use the rectifier, the output layer is linear. Everything is
//! `f64`. The training signal is the Huber loss on a single chosen action's
//! output, so a TD gradient only flows through that output unit.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("expected input of width {expected}, got {got}")]
    InputWidth { expected: usize, got: usize },
    #[error("action {action} out of range for {outputs} outputs")]
    ActionRange { action: usize, outputs: usize },
    #[error("architectures differ: {0:?} vs {1:?}")]
    Architecture(Vec<usize>, Vec<usize>),
    #[error("network needs at least an input and an output layer, got {0:?}")]
    TooFewLayers(Vec<usize>),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fully connected layer; `weights` is `outputs x inputs`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense { inputs, outputs, weights: vec![0.0; inputs * outputs], biases: vec![0.0; outputs] }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.biases)
                .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b),
        );
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    layers: Vec<Dense>,
}

/// Same shape as a network's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &QNetwork) -> Self {
        Gradients { layers: net.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect() }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.biases.iter_mut().zip(&b.biases).for_each(|(x, y)| *x += y);
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases).copied())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|v| v == 0.0)
    }
}

/// Huber loss with a configurable threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Huber {
    pub threshold: f64,
}

impl Default for Huber {
    fn default() -> Self {
        Huber { threshold: 1.0 }
    }
}

impl Huber {
    pub fn loss(&self, delta: f64) -> f64 {
        let a = delta.abs();
        if a <= self.threshold {
            0.5 * delta * delta
        } else {
            self.threshold * (a - 0.5 * self.threshold)
        }
    }

    /// Negative derivative of the loss with respect to the prediction, i.e.
    /// the error clipped to `[-threshold, threshold]`.
    pub fn clipped(&self, delta: f64) -> f64 {
        delta.clamp(-self.threshold, self.threshold)
    }
}

impl QNetwork {
    /// Network with uniform fan-in/fan-out scaled weights and zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self, NeuralError> {
        let mut net = Self::zeros(sizes)?;
        for layer in &mut net.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self, NeuralError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NeuralError::TooFewLayers(sizes.to_vec()));
        }
        Ok(QNetwork { layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect() })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self, NeuralError> {
        let sizes: Vec<usize> =
            layers.first().map(|l| l.inputs).into_iter().chain(layers.iter().map(|l| l.outputs)).collect();
        let consistent = layers.windows(2).all(|w| w[0].outputs == w[1].inputs)
            && layers.iter().all(|l| l.weights.len() == l.inputs * l.outputs && l.biases.len() == l.outputs);
        if layers.is_empty() || !consistent {
            return Err(NeuralError::TooFewLayers(sizes));
        }
        Ok(QNetwork { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_width()).chain(self.layers.iter().map(|l| l.outputs)).collect()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Parameters flattened layer-major, weights (row-major) before biases.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases).copied()).collect()
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<(), NeuralError> {
        if values.len() != self.parameter_count() {
            return Err(NeuralError::Checkpoint(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                values.len()
            )));
        }
        let slots = self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()));
        for (p, v) in slots.zip(values) {
            *p = *v;
        }
        Ok(())
    }

    fn check_input(&self, s: &[f64]) -> Result<(), NeuralError> {
        if s.len() != self.input_width() {
            return Err(NeuralError::InputWidth { expected: self.input_width(), got: s.len() });
        }
        Ok(())
    }

    /// Action values for observation `s`.
    pub fn forward(&self, s: &[f64]) -> Result<Vec<f64>, NeuralError> {
        self.check_input(s)?;
        let mut x = s.to_vec();
        let mut y = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&x, &mut y);
            if i < last {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut x, &mut y);
        }
        Ok(x)
    }

    /// Layer inputs (post-activation) for every layer plus the final output.
    fn activations(&self, s: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(s.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = Vec::with_capacity(layer.outputs);
            layer.apply(acts.last().expect("non-empty"), &mut y);
            if i < last {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(y);
        }
        acts
    }

    /// Ascent direction `w * clip(y - Q(s, a)) * grad Q(s, a)` for one TD
    /// sample, together with the raw TD error and its Huber loss.
    pub fn td_backward(
        &self,
        s: &[f64],
        action: usize,
        target: f64,
        weight: f64,
        huber: Huber,
    ) -> Result<TdGradient, NeuralError> {
        self.check_input(s)?;
        if action >= self.output_width() {
            return Err(NeuralError::ActionRange { action, outputs: self.output_width() });
        }
        let acts = self.activations(s);
        let q = acts.last().expect("output")[action];
        let delta = target - q;
        let scale = weight * huber.clipped(delta);

        let mut grad = Gradients::zeros_like(self);
        // Error signal at the current layer's outputs.
        let mut err = vec![0.0; self.output_width()];
        err[action] = scale;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[i];
            let g = &mut grad.layers[i];
            for (o, &e) in err.iter().enumerate() {
                if e == 0.0 {
                    continue;
                }
                g.biases[o] = e;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(input).for_each(|(gw, x)| *gw = e * x);
            }
            if i == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.inputs];
            for (o, &e) in err.iter().enumerate() {
                if e == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += e * w);
            }
            // Rectifier derivative, evaluated on the post-activation value.
            prev.iter_mut().zip(input).for_each(|(p, &x)| {
                if x <= 0.0 {
                    *p = 0.0
                }
            });
            err = prev;
        }
        Ok(TdGradient { gradients: grad, td_error: delta, loss: huber.loss(delta) })
    }

    /// Copies every parameter of `src` into `self`.
    pub fn copy_parameters_from(&mut self, src: &QNetwork) -> Result<(), NeuralError> {
        if self.layer_sizes() != src.layer_sizes() {
            return Err(NeuralError::Architecture(src.layer_sizes(), self.layer_sizes()));
        }
        self.layers.clone_from(&src.layers);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// Writes the checkpoint text layout: a magic line, a `layers` line with
    /// the widths, then one parameter per line as the hex of its IEEE-754
    /// bits, layer-major with each layer's weights (row-major) before its
    /// biases.
    pub fn save<W: Write>(&self, mut out: W) -> Result<(), NeuralError> {
        writeln!(out, "{CHECKPOINT_MAGIC}")?;
        let sizes: Vec<String> = self.layer_sizes().iter().map(usize::to_string).collect();
        writeln!(out, "layers {}", sizes.join(" "))?;
        for v in self.parameters() {
            writeln!(out, "{:016x}", v.to_bits())?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(input: R) -> Result<Self, NeuralError> {
        let mut lines = input.lines();
        let mut next = || -> Result<String, NeuralError> {
            lines.next().transpose()?.ok_or_else(|| NeuralError::Checkpoint("unexpected end of file".into()))
        };
        if next()?.trim() != CHECKPOINT_MAGIC {
            return Err(NeuralError::Checkpoint("bad magic line".into()));
        }
        let header = next()?;
        let sizes = header
            .strip_prefix("layers ")
            .ok_or_else(|| NeuralError::Checkpoint("missing layers line".into()))?
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| NeuralError::Checkpoint(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let mut net = QNetwork::zeros(&sizes)?;
        let mut values = Vec::with_capacity(net.parameter_count());
        for _ in 0..net.parameter_count() {
            let line = next()?;
            let bits = u64::from_str_radix(line.trim(), 16).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
            values.push(f64::from_bits(bits));
        }
        net.set_parameters(&values)?;
        Ok(net)
    }
}

const CHECKPOINT_MAGIC: &str = "hdqr-qnetwork v1";

/// Copies `src` into `dst`; both must share an architecture.
pub fn copy_parameters(src: &QNetwork, dst: &mut QNetwork) -> Result<(), NeuralError> {
    dst.copy_parameters_from(src)
}

#[derive(Clone, Debug)]
pub struct TdGradient {
    pub gradients: Gradients,
    pub td_error: f64,
    pub loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub stabilizer: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig { learning_rate: 1e-3, decay: 0.9, stabilizer: 1e-7 }
    }
}

/// RMSprop state: decayed running mean of squared gradients per parameter.
#[derive(Clone, Debug)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    accumulator: Gradients,
}

impl RmsProp {
    pub fn new(config: RmsPropConfig, net: &QNetwork) -> Self {
        RmsProp { config, accumulator: Gradients::zeros_like(net) }
    }

    pub fn accumulator(&self) -> &Gradients {
        &self.accumulator
    }

    /// Moves the parameters along `grad` (an ascent direction):
    /// `theta += lr * g / sqrt(acc + stabilizer)`.
    pub fn apply_update(&mut self, net: &mut QNetwork, grad: &Gradients) -> Result<(), NeuralError> {
        if grad.layers.len() != net.layers.len()
            || grad.layers.iter().zip(&net.layers).any(|(g, l)| g.inputs != l.inputs || g.outputs != l.outputs)
        {
            return Err(NeuralError::Architecture(net.layer_sizes(), grad_sizes(grad)));
        }
        if !grad.is_finite() {
            return Err(NeuralError::NonFinite("gradient"));
        }
        let RmsPropConfig { learning_rate, decay, stabilizer } = self.config;
        let params = net.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()));
        for ((p, acc), g) in params.zip(self.accumulator.values_mut()).zip(grad.values()) {
            *acc = decay * *acc + (1.0 - decay) * g * g;
            *p += learning_rate * g / (*acc + stabilizer).sqrt();
        }
        if !net.is_finite() {
            return Err(NeuralError::NonFinite("parameters"));
        }
        Ok(())
    }
}

fn grad_sizes(g: &Gradients) -> Vec<usize> {
    g.layers.first().map(|l| l.inputs).into_iter().chain(g.layers.iter().map(|l| l.outputs)).collect()
}
