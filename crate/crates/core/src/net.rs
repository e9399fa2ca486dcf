//! Dense feed-forward networks.
//!
//! Layer `k` maps the activations of layer `k` (layer 0 is the input) to those
//! of layer `k + 1`: `z = W h + b`, `h' = activation(z)`. Weights are stored
//! row-major with shape `(fan_out, fan_in)`, so row `i` holds the incoming
//! weights of unit `i` and column `i` of the next layer holds its outgoing
//! weights.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{ensure_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu { slope: f64 },
    Elu { alpha: f64 },
    Swish,
    Linear,
}

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
pub const DEFAULT_ELU_ALPHA: f64 = 1.0;

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Activation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Activation::LeakyRelu { slope } if !(slope > 0.0 && slope < 1.0) => Err(Error::Config(
                format!("leaky_relu slope must be in (0,1), got {slope}"),
            )),
            Activation::Elu { alpha } if !(alpha > 0.0 && alpha.is_finite()) => Err(Error::Config(
                format!("elu alpha must be positive, got {alpha}"),
            )),
            _ => Ok(()),
        }
    }

    /// Kaiming gain that keeps the magnitude of activations stable across layers.
    pub fn gain(&self) -> f64 {
        match *self {
            Activation::Tanh => 5.0 / 3.0,
            Activation::Sigmoid | Activation::Linear => 1.0,
            Activation::Relu | Activation::Elu { .. } | Activation::Swish => 2f64.sqrt(),
            Activation::LeakyRelu { slope } => (2.0 / (1.0 + slope * slope)).sqrt(),
        }
    }

    #[inline]
    pub fn apply(&self, z: f64) -> f64 {
        match *self {
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if z > 0.0 {
                    z
                } else {
                    slope * z
                }
            }
            Activation::Elu { alpha } => {
                if z > 0.0 {
                    z
                } else {
                    alpha * z.exp_m1()
                }
            }
            Activation::Swish => z * sigmoid(z),
            Activation::Linear => z,
        }
    }

    /// Derivative with respect to the pre-activation. Kinks take the left branch,
    /// so `relu'(0) = 0`.
    #[inline]
    pub fn derivative(&self, z: f64) -> f64 {
        match *self {
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if z > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Elu { alpha } => {
                if z > 0.0 {
                    1.0
                } else {
                    alpha * z.exp()
                }
            }
            Activation::Swish => {
                let s = sigmoid(z);
                s + z * s * (1.0 - s)
            }
            Activation::Linear => 1.0,
        }
    }

    /// Extreme values `(lo, hi)` of bounded activations.
    pub fn extremes(&self) -> Option<(f64, f64)> {
        match self {
            Activation::Sigmoid => Some((0.0, 1.0)),
            Activation::Tanh => Some((-1.0, 1.0)),
            _ => None,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Sigmoid => f.write_str("sigmoid"),
            Activation::Tanh => f.write_str("tanh"),
            Activation::Relu => f.write_str("relu"),
            Activation::LeakyRelu { slope } => write!(f, "leaky_relu({slope})"),
            Activation::Elu { alpha } => write!(f, "elu({alpha})"),
            Activation::Swish => f.write_str("swish"),
            Activation::Linear => f.write_str("linear"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    /// Accepts `tanh`, `relu`, `leaky_relu`, `leaky_relu(0.1)`, `elu(0.5)`, ...
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, param) = match s.find('(') {
            Some(open) => {
                let close = s.strip_suffix(')').ok_or_else(|| {
                    Error::Config(format!("unbalanced parenthesis in activation `{s}`"))
                })?;
                let value: f64 = close[open + 1..]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad activation parameter in `{s}`")))?;
                (&s[..open], Some(value))
            }
            None => (s, None),
        };
        let act = match (name, param) {
            ("sigmoid", None) => Activation::Sigmoid,
            ("tanh", None) => Activation::Tanh,
            ("relu", None) => Activation::Relu,
            ("swish", None) => Activation::Swish,
            ("linear", None) => Activation::Linear,
            ("leaky_relu", p) => Activation::LeakyRelu {
                slope: p.unwrap_or(DEFAULT_LEAKY_SLOPE),
            },
            ("elu", p) => Activation::Elu {
                alpha: p.unwrap_or(DEFAULT_ELU_ALPHA),
            },
            _ => return Err(Error::Config(format!("unknown activation `{s}`"))),
        };
        act.validate()?;
        Ok(act)
    }
}

impl Serialize for Activation {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Activation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    fan_in: usize,
    fan_out: usize,
    /// Row-major `(fan_out, fan_in)`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
    /// Bound `b` of the `U(-b, b)` distribution the weights were drawn from.
    pub init_bound: f64,
}

impl Layer {
    /// A layer with all weights and biases zero.
    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Self {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
            activation,
            init_bound: kaiming_bound(activation, fan_in),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.fan_in
    }

    pub fn fan_out(&self) -> usize {
        self.fan_out
    }

    #[inline]
    pub fn row(&self, unit: usize) -> &[f64] {
        &self.weights[unit * self.fan_in..(unit + 1) * self.fan_in]
    }

    #[inline]
    pub fn row_mut(&mut self, unit: usize) -> &mut [f64] {
        &mut self.weights[unit * self.fan_in..(unit + 1) * self.fan_in]
    }

    #[inline]
    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.fan_in + inp]
    }

    /// Sum of `|w|` over the column of weights leaving input `inp`.
    pub fn column_abs_sum(&self, inp: usize) -> f64 {
        (0..self.fan_out)
            .map(|k| self.weights[k * self.fan_in + inp].abs())
            .sum()
    }
}

/// `b = gain * sqrt(3 / fan_in)`.
pub fn kaiming_bound(activation: Activation, fan_in: usize) -> f64 {
    activation.gain() * (3.0 / fan_in as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

/// Activations recorded during a forward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    /// Pre-activations `z` per layer.
    pub pre: Vec<Vec<f64>>,
    /// Post-activations `h` per layer (after dropout masking, if any).
    pub post: Vec<Vec<f64>>,
    /// Per hidden layer dropout multipliers: `0` for dropped units and
    /// `1 / (1 - p)` for kept ones.
    pub masks: Option<Vec<Vec<f64>>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&self.input)
    }

    /// Activations of hidden layer `hidden` (0-based).
    pub fn hidden(&self, hidden: usize) -> &[f64] {
        &self.post[hidden]
    }
}

/// Loss gradients with the same shapes as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.weights.iter_mut().for_each(|w| w.fill(value));
        self.biases.iter_mut().for_each(|b| b.fill(value));
    }

    pub(crate) fn check_congruent(&self, net: &Network) -> Result<()> {
        ensure_len("gradient layers", net.layers.len(), self.weights.len())?;
        ensure_len("gradient layers", net.layers.len(), self.biases.len())?;
        for (layer, (w, b)) in net.layers.iter().zip(self.weights.iter().zip(&self.biases)) {
            ensure_len("weight gradient", layer.weights.len(), w.len())?;
            ensure_len("bias gradient", layer.bias.len(), b.len())?;
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl Network {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            ensure_len("adjacent layer dims", pair[0].fan_out, pair[1].fan_in)?;
        }
        for layer in &layers {
            ensure_len(
                "layer weights",
                layer.fan_in * layer.fan_out,
                layer.weights.len(),
            )?;
            ensure_len("layer bias", layer.fan_out, layer.bias.len())?;
            layer.activation.validate()?;
        }
        Ok(Self { layers })
    }

    /// Kaiming-uniform initialization: every weight of layer `l` is drawn from
    /// `U(-b, b)` with `b = gain(activation_l) * sqrt(3 / fan_in_l)`; biases are 0.
    ///
    /// `dims` lists layer widths from input to output and `activations` has one
    /// entry per weight layer.
    pub fn init_kaiming_uniform<R: Rng + ?Sized>(
        dims: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!(
                "need at least input and output sizes, got {} dims",
                dims.len()
            )));
        }
        if let Some(&d) = dims.iter().find(|&&d| d == 0) {
            return Err(Error::Config(format!("layer sizes must be >= 1, got {d}")));
        }
        ensure_len("activations per layer", dims.len() - 1, activations.len())?;
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (pair, &act) in dims.windows(2).zip(activations) {
            act.validate()?;
            let mut layer = Layer::zeros(pair[0], pair[1], act);
            let b = layer.init_bound;
            for w in &mut layer.weights {
                *w = rng.random_range(-b..=b);
            }
            layers.push(layer);
        }
        Ok(Self { layers })
    }

    /// Shorthand for a multilayer perceptron with one activation on every hidden
    /// layer and a linear output.
    pub fn mlp<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input);
        dims.extend_from_slice(hidden);
        dims.push(output);
        let mut acts = vec![activation; hidden.len()];
        acts.push(Activation::Linear);
        Self::init_kaiming_uniform(&dims, &acts, rng)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    pub fn num_hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn hidden_width(&self, hidden: usize) -> usize {
        self.layers[hidden].fan_out
    }

    pub fn num_weights(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardTrace> {
        let mut trace = ForwardTrace::default();
        self.forward_into(input, &mut trace)?;
        Ok(trace)
    }

    /// Forward pass reusing the buffers of `trace`.
    pub fn forward_into(&self, input: &[f64], trace: &mut ForwardTrace) -> Result<()> {
        ensure_len("network input", self.input_size(), input.len())?;
        trace.input.clear();
        trace.input.extend_from_slice(input);
        trace.pre.resize_with(self.layers.len(), Vec::new);
        trace.post.resize_with(self.layers.len(), Vec::new);
        trace.masks = None;
        for (k, layer) in self.layers.iter().enumerate() {
            let (done, rest) = trace.post.split_at_mut(k);
            let x: &[f64] = if k == 0 { &trace.input } else { &done[k - 1] };
            let z = &mut trace.pre[k];
            z.clear();
            z.extend(
                layer
                    .weights
                    .chunks_exact(layer.fan_in)
                    .zip(&layer.bias)
                    .map(|(row, b)| dot(row, x) + b),
            );
            let h = &mut rest[0];
            h.clear();
            h.extend(z.iter().map(|&v| layer.activation.apply(v)));
        }
        Ok(())
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.output().to_vec())
    }

    pub fn backward(&self, trace: &ForwardTrace, output_grad: &[f64]) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(trace, output_grad, &mut grads)?;
        Ok(grads)
    }

    /// Reverse-mode gradients of a scalar loss whose gradient with respect to the
    /// network output is `output_grad`. Overwrites `grads`.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        output_grad: &[f64],
        grads: &mut Gradients,
    ) -> Result<()> {
        ensure_len("output gradient", self.output_size(), output_grad.len())?;
        ensure_len("trace layers", self.layers.len(), trace.pre.len())?;
        grads.check_congruent(self)?;

        let mut delta = output_grad.to_vec();
        let mut dz = Vec::new();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            dz.clear();
            dz.extend(
                delta
                    .iter()
                    .zip(&trace.pre[k])
                    .map(|(&d, &z)| d * layer.activation.derivative(z)),
            );
            if k + 1 < self.layers.len() {
                if let Some(masks) = &trace.masks {
                    for (g, m) in dz.iter_mut().zip(&masks[k]) {
                        *g *= m;
                    }
                }
            }
            let x: &[f64] = if k == 0 {
                &trace.input
            } else {
                &trace.post[k - 1]
            };
            for ((grow, &g), gb) in grads.weights[k]
                .chunks_exact_mut(layer.fan_in)
                .zip(&dz)
                .zip(grads.biases[k].iter_mut())
            {
                *gb = g;
                for (gw, &xi) in grow.iter_mut().zip(x) {
                    *gw = g * xi;
                }
            }
            if k > 0 {
                delta.clear();
                delta.resize(layer.fan_in, 0.0);
                for (row, &g) in layer.weights.chunks_exact(layer.fan_in).zip(&dz) {
                    if g != 0.0 {
                        for (d, &w) in delta.iter_mut().zip(row) {
                            *d += g * w;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// `loss = Σ (pred - target)²`, `grad = 2 (pred - target)`.
pub fn loss_squared_error(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    ensure_len("squared error target", pred.len(), target.len())?;
    let grad: Vec<f64> = pred
        .iter()
        .zip(target)
        .map(|(p, t)| 2.0 * (p - t))
        .collect();
    let loss = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((loss, grad))
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `loss = -log softmax(logits)[label]`, `grad = softmax(logits) - onehot(label)`.
pub fn loss_softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::Index {
            context: "class label",
            index: label,
            len: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    let log_sum = sum.ln();
    let loss = -(logits[label] - max - log_sum);
    let mut grad: Vec<f64> = logits.iter().map(|&z| (z - max - log_sum).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
