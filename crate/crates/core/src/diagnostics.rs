//! Plasticity correlates measured on a fixed probe sample: dead and saturated
//! hidden units, average weight magnitude and the effective rank of a hidden
//! representation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Activation, ForwardTrace, Network};

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Number of probe examples drawn at each measurement point.
    pub sample_size: usize,
    pub saturation_epsilon: f64,
    /// Hidden layers whose effective rank is measured; empty means all.
    pub layers: Vec<usize>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            sample_size: 2000,
            saturation_epsilon: 0.01,
            layers: Vec::new(),
        }
    }
}

impl DiagnosticsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_size == 0 {
            return Err(Error::Config("diagnostics.sample_size must be >= 1".into()));
        }
        if !(self.saturation_epsilon > 0.0 && self.saturation_epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "diagnostics.saturation_epsilon must be > 0, got {}",
                self.saturation_epsilon
            )));
        }
        Ok(())
    }

    fn probed_layers(&self, net: &Network) -> Result<Vec<usize>> {
        let n = net.num_hidden_layers();
        if self.layers.is_empty() {
            return Ok((0..n).collect());
        }
        for &l in &self.layers {
            if l >= n {
                return Err(Error::Index {
                    context: "hidden layer",
                    index: l,
                    len: n,
                });
            }
        }
        Ok(self.layers.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    /// Task or bin index at which the measurement was taken.
    pub index: usize,
    pub step: u64,
    /// Fraction of dead units over all hidden layers (relu networks only).
    pub dead_fraction: Option<f64>,
    /// Fraction of saturated units over all hidden layers (sigmoid/tanh only).
    pub saturated_fraction: Option<f64>,
    pub avg_weight_magnitude: f64,
    /// `(hidden layer, effective rank)` for every probed layer.
    pub effective_rank: Vec<(usize, f64)>,
}

impl DiagnosticsRecord {
    /// Mean effective rank over the probed layers.
    pub fn mean_effective_rank(&self) -> Option<f64> {
        if self.effective_rank.is_empty() {
            None
        } else {
            let sum: f64 = self.effective_rank.iter().map(|(_, r)| r).sum();
            Some(sum / self.effective_rank.len() as f64)
        }
    }
}

/// Runs `f` on the forward trace of every probe example.
fn for_each_trace(
    net: &Network,
    probe: &[Vec<f64>],
    mut f: impl FnMut(usize, &ForwardTrace),
) -> Result<()> {
    let mut trace = ForwardTrace::default();
    for (s, x) in probe.iter().enumerate() {
        net.forward_into(x, &mut trace)?;
        f(s, &trace);
    }
    Ok(())
}

/// Per hidden layer fraction of units for which `flag(unit, h)` held on every
/// probe example.
fn always_fraction(
    net: &Network,
    probe: &[Vec<f64>],
    flag: impl Fn(usize, f64) -> bool,
) -> Result<Vec<f64>> {
    let mut always: Vec<Vec<bool>> = (0..net.num_hidden_layers())
        .map(|h| vec![true; net.hidden_width(h)])
        .collect();
    for_each_trace(net, probe, |_, trace| {
        for (h, flags) in always.iter_mut().enumerate() {
            for (ok, &v) in flags.iter_mut().zip(trace.hidden(h)) {
                *ok = *ok && flag(h, v);
            }
        }
    })?;
    Ok(always
        .iter()
        .map(|flags| flags.iter().filter(|&&b| b).count() as f64 / flags.len() as f64)
        .collect())
}

/// Fraction of relu units in each hidden layer that output exactly zero on every
/// probe example.
pub fn count_dead_relu_units(net: &Network, probe: &[Vec<f64>]) -> Result<Vec<f64>> {
    for layer in &net.layers()[..net.num_hidden_layers()] {
        if layer.activation != Activation::Relu {
            return Err(Error::UnsupportedMeasure {
                measure: "dead-unit fraction",
                activation: layer.activation.to_string(),
            });
        }
    }
    always_fraction(net, probe, |_, v| v == 0.0)
}

/// Fraction of sigmoid/tanh units in each hidden layer that stay strictly
/// within `epsilon` of one of the activation's extremes on every probe example.
pub fn count_saturated_units(net: &Network, probe: &[Vec<f64>], epsilon: f64) -> Result<Vec<f64>> {
    let hidden = &net.layers()[..net.num_hidden_layers()];
    let mut extremes = Vec::with_capacity(hidden.len());
    for layer in hidden {
        match (layer.activation, layer.activation.extremes()) {
            (Activation::Sigmoid | Activation::Tanh, Some(e)) => extremes.push(e),
            _ => {
                return Err(Error::UnsupportedMeasure {
                    measure: "saturated-unit fraction",
                    activation: layer.activation.to_string(),
                })
            }
        }
    }
    always_fraction(net, probe, |h, v| {
        let (lo, hi) = extremes[h];
        (v - hi).abs() < epsilon || (v - lo).abs() < epsilon
    })
}

/// Mean absolute value over all weight-matrix entries; biases are excluded.
pub fn average_weight_magnitude(net: &Network) -> f64 {
    let total: f64 = net
        .layers()
        .iter()
        .flat_map(|l| l.weights.iter())
        .map(|w| w.abs())
        .sum();
    total / net.num_weights() as f64
}

/// `exp` of the Shannon entropy (natural log) of the normalized singular values.
pub fn effective_rank(phi: &DMatrix<f64>) -> Result<f64> {
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::UndefinedRank("a matrix with non-finite entries"));
    }
    if phi.iter().all(|&v| v == 0.0) {
        return Err(Error::UndefinedRank("the all-zero matrix"));
    }
    let sv = phi.clone().svd(false, false).singular_values;
    Ok(effective_rank_from_singular_values(sv.as_slice()))
}

/// Entropy step of [`effective_rank`], exposed for callers that already hold
/// singular values. Values below `RANK_TOLERANCE · σ_max` are dropped.
pub fn effective_rank_from_singular_values(singular_values: &[f64]) -> f64 {
    let max = singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = RANK_TOLERANCE * max;
    let kept: Vec<f64> = singular_values
        .iter()
        .cloned()
        .filter(|&s| s > cutoff)
        .collect();
    let total: f64 = kept.iter().sum();
    let entropy: f64 = kept
        .iter()
        .map(|&s| {
            let p = s / total;
            -p * p.ln()
        })
        .sum();
    entropy.exp()
}

/// Rows are the post-activations of hidden layer `hidden` for each probe example.
pub fn representation_matrix(
    net: &Network,
    probe: &[Vec<f64>],
    hidden: usize,
) -> Result<DMatrix<f64>> {
    let n = net.num_hidden_layers();
    if hidden >= n {
        return Err(Error::Index {
            context: "hidden layer",
            index: hidden,
            len: n,
        });
    }
    let mut phi = DMatrix::zeros(probe.len(), net.hidden_width(hidden));
    for_each_trace(net, probe, |s, trace| {
        for (j, &v) in trace.hidden(hidden).iter().enumerate() {
            phi[(s, j)] = v;
        }
    })?;
    Ok(phi)
}

fn network_fraction(net: &Network, per_layer: &[f64]) -> f64 {
    let mut units = 0.0;
    let mut flagged = 0.0;
    for (h, frac) in per_layer.iter().enumerate() {
        let w = net.hidden_width(h) as f64;
        units += w;
        flagged += frac * w;
    }
    flagged / units
}

/// All diagnostics that apply to `net` on one probe sample. Measures that are
/// undefined for the hidden activation are left empty.
pub fn diagnose(
    net: &Network,
    probe: &[Vec<f64>],
    config: &DiagnosticsConfig,
    index: usize,
    step: u64,
) -> Result<DiagnosticsRecord> {
    if net.num_hidden_layers() == 0 {
        return Ok(DiagnosticsRecord {
            index,
            step,
            dead_fraction: None,
            saturated_fraction: None,
            avg_weight_magnitude: average_weight_magnitude(net),
            effective_rank: Vec::new(),
        });
    }
    let dead_fraction = match count_dead_relu_units(net, probe) {
        Ok(f) => Some(network_fraction(net, &f)),
        Err(Error::UnsupportedMeasure { .. }) => None,
        Err(e) => return Err(e),
    };
    let saturated_fraction = match count_saturated_units(net, probe, config.saturation_epsilon) {
        Ok(f) => Some(network_fraction(net, &f)),
        Err(Error::UnsupportedMeasure { .. }) => None,
        Err(e) => return Err(e),
    };
    let mut ranks = Vec::new();
    for h in config.probed_layers(net)? {
        let phi = representation_matrix(net, probe, h)?;
        // A layer with every unit silent has no representation left; report
        // rank 0 rather than aborting the whole record.
        let r = match effective_rank(&phi) {
            Ok(r) => r,
            Err(Error::UndefinedRank(_)) => 0.0,
            Err(e) => return Err(e),
        };
        ranks.push((h, r));
    }
    Ok(DiagnosticsRecord {
        index,
        step,
        dead_fraction,
        saturated_fraction,
        avg_weight_magnitude: average_weight_magnitude(net),
        effective_rank: ranks,
    })
}
