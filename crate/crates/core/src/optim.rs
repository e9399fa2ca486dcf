//! Per-example weight updates and regularizers.
//!
//! Weight decay, perturbation noise and dropout only touch weights and hidden
//! units; biases are never decayed or perturbed.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{ForwardTrace, Gradients, Network};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub step_size: f64,
    pub momentum: f64,
}

impl SgdConfig {
    pub fn new(step_size: f64) -> Self {
        Self {
            step_size,
            momentum: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Classic momentum: `buf <- μ buf + g`, `w <- w - α buf`. With `μ = 0` the
/// buffer is bypassed and the update is exactly `w - α g`.
pub fn sgd_step(
    net: &mut Network,
    grads: &Gradients,
    cfg: &SgdConfig,
    momentum_buffers: &mut Gradients,
) -> Result<()> {
    grads.check_congruent(net)?;
    momentum_buffers.check_congruent(net)?;
    let alpha = cfg.step_size;
    let mu = cfg.momentum;
    for (k, layer) in net.layers_mut().iter_mut().enumerate() {
        let params = [
            (
                &mut layer.weights,
                &grads.weights[k],
                &mut momentum_buffers.weights[k],
            ),
            (
                &mut layer.bias,
                &grads.biases[k],
                &mut momentum_buffers.biases[k],
            ),
        ];
        for (w, g, buf) in params {
            if mu == 0.0 {
                for (w, &g) in w.iter_mut().zip(g.iter()) {
                    *w -= alpha * g;
                }
            } else {
                for ((w, &g), b) in w.iter_mut().zip(g.iter()).zip(buf.iter_mut()) {
                    *b = mu * *b + g;
                    *w -= alpha * *b;
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub config: SgdConfig,
    buffers: Gradients,
}

impl Sgd {
    pub fn new(config: SgdConfig, net: &Network) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            buffers: Gradients::zeros_like(net),
        })
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        sgd_step(net, grads, &self.config, &mut self.buffers)
    }

    pub fn buffers(&self) -> &Gradients {
        &self.buffers
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(step_size: f64) -> Self {
        Self {
            step_size,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        for (name, b) in [("adam_beta1", self.beta1), ("adam_beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0,1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!(
                "adam_eps must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Adam moments plus a step counter for every individual parameter, so that a
/// reinitialized weight restarts its bias correction from scratch.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Gradients,
    pub v: Gradients,
    pub t_weights: Vec<Vec<u64>>,
    pub t_biases: Vec<Vec<u64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, net: &Network) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            t_weights: net
                .layers()
                .iter()
                .map(|l| vec![0; l.weights.len()])
                .collect(),
            t_biases: net.layers().iter().map(|l| vec![0; l.bias.len()]).collect(),
        })
    }
}

#[inline]
fn pow_saturating(base: f64, exp: u64) -> f64 {
    base.powi(exp.min(i32::MAX as u64) as i32)
}

pub fn adam_step(net: &mut Network, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    grads.check_congruent(net)?;
    let AdamConfig {
        step_size: alpha,
        beta1,
        beta2,
        eps,
    } = state.config;
    for (k, layer) in net.layers_mut().iter_mut().enumerate() {
        let params = [
            (
                &mut layer.weights,
                &grads.weights[k],
                &mut state.m.weights[k],
                &mut state.v.weights[k],
                &mut state.t_weights[k],
            ),
            (
                &mut layer.bias,
                &grads.biases[k],
                &mut state.m.biases[k],
                &mut state.v.biases[k],
                &mut state.t_biases[k],
            ),
        ];
        for (w, g, m, v, t) in params {
            for i in 0..w.len() {
                let gi = g[i];
                t[i] += 1;
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / (1.0 - pow_saturating(beta1, t[i]));
                let v_hat = v[i] / (1.0 - pow_saturating(beta2, t[i]));
                w[i] -= alpha * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd(Sgd),
    Adam(AdamState),
}

impl Optimizer {
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        match self {
            Optimizer::Sgd(sgd) => sgd.step(net, grads),
            Optimizer::Adam(state) => adam_step(net, grads, state),
        }
    }

    /// Zeroes all optimizer state attached to hidden unit `unit` of hidden layer
    /// `hidden`: its incoming weights and bias (layer `hidden`) and its outgoing
    /// weights (column `unit` of layer `hidden + 1`).
    pub fn reset_unit(&mut self, net: &Network, hidden: usize, unit: usize) {
        let fan_in = net.layers()[hidden].fan_in();
        let next_in = net.layers()[hidden + 1].fan_in();
        let next_out = net.layers()[hidden + 1].fan_out();
        let incoming = unit * fan_in..(unit + 1) * fan_in;
        let outgoing = (0..next_out).map(move |k| k * next_in + unit);
        let clear = |g: &mut Gradients| {
            g.weights[hidden][incoming.clone()].fill(0.0);
            g.biases[hidden][unit] = 0.0;
            for idx in outgoing.clone() {
                g.weights[hidden + 1][idx] = 0.0;
            }
        };
        match self {
            Optimizer::Sgd(sgd) => clear(&mut sgd.buffers),
            Optimizer::Adam(state) => {
                clear(&mut state.m);
                clear(&mut state.v);
                state.t_weights[hidden][incoming.clone()].fill(0);
                state.t_biases[hidden][unit] = 0;
                for idx in outgoing {
                    state.t_weights[hidden + 1][idx] = 0;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegularizerConfig {
    /// λ of the penalty `½ λ ‖w‖²`.
    pub weight_decay: f64,
    /// σ² of the Gaussian noise added to every weight after each update.
    pub perturb_variance: f64,
    pub dropout: f64,
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(self.perturb_variance >= 0.0 && self.perturb_variance.is_finite()) {
            return Err(Error::Config(format!(
                "perturb_variance must be >= 0, got {}",
                self.perturb_variance
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Adds the gradient of `½ λ ‖w‖²` (that is `λ w`) to the weight gradients.
/// Bias gradients are left alone.
pub fn apply_l2(grads: &mut Gradients, net: &Network, lambda: f64) -> Result<()> {
    grads.check_congruent(net)?;
    if lambda == 0.0 {
        return Ok(());
    }
    for (g, layer) in grads.weights.iter_mut().zip(net.layers()) {
        for (g, &w) in g.iter_mut().zip(&layer.weights) {
            *g += lambda * w;
        }
    }
    Ok(())
}

/// Adds independent `N(0, variance)` noise to every weight.
pub fn perturb_weights<R: Rng + ?Sized>(net: &mut Network, variance: f64, rng: &mut R) {
    if variance == 0.0 {
        return;
    }
    let sd = variance.sqrt();
    for layer in net.layers_mut() {
        for w in &mut layer.weights {
            let n: f64 = rng.sample(StandardNormal);
            *w += sd * n;
        }
    }
}

/// One shrink-and-perturb update: SGD on the L2-penalized gradient, then
/// Gaussian weight noise. The noise is added after the gradient step.
pub fn shrink_and_perturb_step<R: Rng + ?Sized>(
    net: &mut Network,
    grads: &Gradients,
    sgd: &mut Sgd,
    reg: &RegularizerConfig,
    rng: &mut R,
) -> Result<()> {
    let mut penalized = grads.clone();
    apply_l2(&mut penalized, net, reg.weight_decay)?;
    sgd.step(net, &penalized)?;
    perturb_weights(net, reg.perturb_variance, rng);
    Ok(())
}

/// Forward pass with inverted dropout on every hidden layer.
///
/// Each hidden unit is zeroed with probability `p`; survivors are scaled by
/// `1 / (1 - p)`. The masks are kept in the trace so that `backward` only routes
/// gradient through surviving units. The output layer is never dropped.
pub fn dropout_forward<R: Rng + ?Sized>(
    net: &Network,
    input: &[f64],
    p: f64,
    rng: &mut R,
) -> Result<ForwardTrace> {
    let mut trace = ForwardTrace::default();
    dropout_forward_into(net, input, p, rng, &mut trace)?;
    Ok(trace)
}

pub fn dropout_forward_into<R: Rng + ?Sized>(
    net: &Network,
    input: &[f64],
    p: f64,
    rng: &mut R,
    trace: &mut ForwardTrace,
) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout must be in [0,1), got {p}")));
    }
    if p == 0.0 {
        return net.forward_into(input, trace);
    }
    let masks: Vec<Vec<f64>> = (0..net.num_hidden_layers())
        .map(|h| {
            (0..net.hidden_width(h))
                .map(|_| {
                    if rng.random::<f64>() < p {
                        0.0
                    } else {
                        1.0 / (1.0 - p)
                    }
                })
                .collect()
        })
        .collect();
    forward_with_masks(net, input, masks, trace)
}

/// Forward pass with caller-supplied dropout multipliers (one vector per hidden
/// layer).
pub fn forward_with_masks(
    net: &Network,
    input: &[f64],
    masks: Vec<Vec<f64>>,
    trace: &mut ForwardTrace,
) -> Result<()> {
    crate::error::ensure_len("dropout masks", net.num_hidden_layers(), masks.len())?;
    for (h, m) in masks.iter().enumerate() {
        crate::error::ensure_len("dropout mask", net.hidden_width(h), m.len())?;
    }
    let layers = net.layers();
    trace.input.clear();
    trace.input.extend_from_slice(input);
    crate::error::ensure_len("network input", net.input_size(), input.len())?;
    trace.pre.resize_with(layers.len(), Vec::new);
    trace.post.resize_with(layers.len(), Vec::new);
    for (k, layer) in layers.iter().enumerate() {
        let x: Vec<f64> = if k == 0 {
            trace.input.clone()
        } else {
            trace.post[k - 1].clone()
        };
        let z: Vec<f64> = (0..layer.fan_out())
            .map(|i| crate::net::dot(layer.row(i), &x) + layer.bias[i])
            .collect();
        let mut h: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
        if k < masks.len() {
            for (h, m) in h.iter_mut().zip(&masks[k]) {
                *h *= m;
            }
        }
        trace.pre[k] = z;
        trace.post[k] = h;
    }
    trace.masks = Some(masks);
    Ok(())
}
