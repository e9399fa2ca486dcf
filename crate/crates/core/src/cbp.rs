//! Continual backpropagation: gradient descent plus selective reinitialization
//! of low-utility hidden units.
//!
//! Every hidden unit carries an age, a decayed running average of its
//! activation and a decayed utility trace. After each gradient step, each
//! hidden layer ages its units, updates their utilities, picks the
//! lowest-utility mature units (at a rate of `replacement_rate` units per unit
//! per example) and reinitializes them: fresh incoming weights from the layer's
//! initial distribution, zero outgoing weights, and the unit's mean
//! contribution folded into the biases of its consumers.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::learner::{loss_and_grad, StepOutcome, Target};
use crate::net::{ForwardTrace, Network};
use crate::optim::Optimizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UtilityKind {
    /// Fresh `U[0,1]` draw every step.
    Random,
    /// Running average of `Σ|w_out|`.
    WeightMagnitude,
    /// Running average of `|h| Σ|w_out|`.
    Contribution,
    /// Running average of `|h - f̂| Σ|w_out|`.
    MeanCorrectedContribution,
    /// Running average of `1 / Σ|w_in|`.
    Adaptation,
    /// Running average of `|h - f̂| Σ|w_out| / Σ|w_in|`.
    Overall,
}

impl UtilityKind {
    pub const ALL: [UtilityKind; 6] = [
        UtilityKind::Random,
        UtilityKind::WeightMagnitude,
        UtilityKind::Contribution,
        UtilityKind::MeanCorrectedContribution,
        UtilityKind::Adaptation,
        UtilityKind::Overall,
    ];

    fn name(&self) -> &'static str {
        match self {
            UtilityKind::Random => "random",
            UtilityKind::WeightMagnitude => "weight_magnitude",
            UtilityKind::Contribution => "contribution",
            UtilityKind::MeanCorrectedContribution => "mean_corrected_contribution",
            UtilityKind::Adaptation => "adaptation",
            UtilityKind::Overall => "overall",
        }
    }
}

impl fmt::Display for UtilityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UtilityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UtilityKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown utility kind `{s}`")))
    }
}

impl Serialize for UtilityKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for UtilityKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbpConfig {
    /// Expected fraction of a layer's units replaced per example (ρ).
    pub replacement_rate: f64,
    /// Decay of the running averages (η).
    pub decay_rate: f64,
    /// A unit is eligible for replacement only once its age exceeds this.
    pub maturity_threshold: u64,
    pub utility: UtilityKind,
}

impl Default for CbpConfig {
    fn default() -> Self {
        Self {
            replacement_rate: 1e-4,
            decay_rate: 0.99,
            maturity_threshold: 100,
            utility: UtilityKind::Overall,
        }
    }
}

impl CbpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.replacement_rate >= 0.0 && self.replacement_rate.is_finite()) {
            return Err(Error::Config(format!(
                "replacement_rate must be >= 0, got {}",
                self.replacement_rate
            )));
        }
        if !(0.0..1.0).contains(&self.decay_rate) {
            return Err(Error::Config(format!(
                "decay_rate must be in [0,1), got {}",
                self.decay_rate
            )));
        }
        Ok(())
    }
}

/// `1 - η^age`, saturating to 1 once `η^age` underflows.
pub fn bias_correction(decay: f64, age: u64) -> f64 {
    if decay == 0.0 {
        return 1.0;
    }
    let log = age as f64 * decay.ln();
    if log < -745.0 {
        1.0
    } else {
        1.0 - decay.powi(age.min(i32::MAX as u64) as i32)
    }
}

/// Per-unit bookkeeping for one hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    /// Running utility trace of the configured kind (`u`, `c`, `z`, ... ).
    pub utility: Vec<f64>,
    /// Bias-corrected utility used for ranking (`û`).
    pub ranking: Vec<f64>,
    /// Running average of the unit's activation (`f`).
    pub mean_activation: Vec<f64>,
    /// Bias-corrected activation average from the latest update (`f̂`).
    pub mean_activation_hat: Vec<f64>,
    pub age: Vec<u64>,
    steps: u64,
    replaced: u64,
}

impl LayerState {
    pub fn new(width: usize) -> Self {
        Self {
            utility: vec![0.0; width],
            ranking: vec![0.0; width],
            mean_activation: vec![0.0; width],
            mean_activation_hat: vec![0.0; width],
            age: vec![0; width],
            steps: 0,
            replaced: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.age.len()
    }

    /// Fractional replacements owed but not yet taken, in `[0, 1)`.
    pub fn accumulator(&self, cfg: &CbpConfig) -> f64 {
        let owed = self.steps as f64 * (self.width() as f64 * cfg.replacement_rate);
        (owed - self.replaced as f64).max(0.0)
    }

    /// Total number of units this layer has reinitialized.
    pub fn total_replaced(&self) -> u64 {
        self.replaced
    }

    fn reset_unit(&mut self, unit: usize) {
        self.utility[unit] = 0.0;
        self.ranking[unit] = 0.0;
        self.mean_activation[unit] = 0.0;
        self.mean_activation_hat[unit] = 0.0;
        self.age[unit] = 0;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CbpState {
    pub layers: Vec<LayerState>,
}

impl CbpState {
    pub fn new(net: &Network) -> Self {
        Self {
            layers: (0..net.num_hidden_layers())
                .map(|h| LayerState::new(net.hidden_width(h)))
                .collect(),
        }
    }

    pub fn total_replaced(&self) -> u64 {
        self.layers.iter().map(LayerState::total_replaced).sum()
    }

    fn layer_mut(&mut self, hidden: usize) -> Result<&mut LayerState> {
        let len = self.layers.len();
        self.layers.get_mut(hidden).ok_or(Error::Index {
            context: "hidden layer",
            index: hidden,
            len,
        })
    }

    pub fn increment_ages(&mut self, hidden: usize) -> Result<()> {
        for a in &mut self.layer_mut(hidden)?.age {
            *a += 1;
        }
        Ok(())
    }

    /// Updates the activation averages and utilities of hidden layer `hidden`
    /// from the activations in `trace` and the current weights of `net`.
    /// Ages must already have been incremented for this step.
    pub fn update_utilities<R: Rng + ?Sized>(
        &mut self,
        hidden: usize,
        trace: &ForwardTrace,
        net: &Network,
        cfg: &CbpConfig,
        rng: &mut R,
    ) -> Result<()> {
        if hidden + 1 >= net.layers().len() {
            return Err(Error::Index {
                context: "hidden layer",
                index: hidden,
                len: net.num_hidden_layers(),
            });
        }
        let incoming = &net.layers()[hidden];
        let outgoing = &net.layers()[hidden + 1];
        let acts = trace.hidden(hidden);
        let eta = cfg.decay_rate;
        let kind = cfg.utility;
        let state = self.layer_mut(hidden)?;
        crate::error::ensure_len("hidden activations", state.width(), acts.len())?;

        // Σ_k |w_out| for every unit, accumulated row by row for cache locality.
        let needs_out = !matches!(kind, UtilityKind::Random | UtilityKind::Adaptation);
        let mut out_sum = vec![0.0; state.width()];
        if needs_out {
            for row in outgoing.weights.chunks_exact(outgoing.fan_in()) {
                for (s, w) in out_sum.iter_mut().zip(row) {
                    *s += w.abs();
                }
            }
        }

        for i in 0..state.width() {
            let h = acts[i];
            let age = state.age[i];
            debug_assert!(age >= 1, "utilities updated before ages were incremented");
            let correction = bias_correction(eta, age);

            let f_prev = state.mean_activation[i];
            state.mean_activation[i] = eta * f_prev + (1.0 - eta) * h;
            let f_hat = f_prev / correction;
            state.mean_activation_hat[i] = f_hat;

            let in_sum = || -> f64 {
                incoming
                    .row(i)
                    .iter()
                    .map(|w| w.abs())
                    .sum::<f64>()
                    .max(f64::MIN_POSITIVE)
            };

            let instant = match kind {
                UtilityKind::Random => {
                    let r: f64 = rng.random();
                    state.utility[i] = r;
                    state.ranking[i] = r;
                    continue;
                }
                UtilityKind::WeightMagnitude => out_sum[i],
                UtilityKind::Contribution => h.abs() * out_sum[i],
                UtilityKind::MeanCorrectedContribution => (h - f_hat).abs() * out_sum[i],
                UtilityKind::Adaptation => 1.0 / in_sum(),
                UtilityKind::Overall => (h - f_hat).abs() * out_sum[i] / in_sum(),
            };
            let u_prev = state.utility[i];
            state.utility[i] = eta * u_prev + (1.0 - eta) * instant;
            state.ranking[i] = u_prev / correction;
        }
        Ok(())
    }

    /// Picks the units of hidden layer `hidden` to reinitialize this step.
    ///
    /// `width · ρ` replacements accrue per step; whole ones are taken. Only
    /// units older than the maturity threshold are eligible, the ones with the
    /// smallest bias-corrected utility go first (ties to the lower index), and
    /// any shortfall of eligible units is forgiven.
    pub fn select_units_to_reinit(&mut self, hidden: usize, cfg: &CbpConfig) -> Result<Vec<usize>> {
        let state = self.layer_mut(hidden)?;
        state.steps += 1;
        let owed = (state.steps as f64 * (state.width() as f64 * cfg.replacement_rate)).floor();
        let k = (owed as u64).saturating_sub(state.replaced);
        if k == 0 {
            return Ok(Vec::new());
        }
        state.replaced += k;
        let mut eligible: Vec<usize> = (0..state.width())
            .filter(|&i| state.age[i] > cfg.maturity_threshold)
            .collect();
        eligible.sort_by(|&a, &b| {
            state.ranking[a]
                .total_cmp(&state.ranking[b])
                .then(a.cmp(&b))
        });
        eligible.truncate(k as usize);
        Ok(eligible)
    }
}

/// Reinitializes `units` of hidden layer `hidden`.
///
/// For each unit: its mean contribution `f̂ · w_out` is added to the biases of
/// the next layer, its outgoing weights are zeroed, its incoming weights are
/// resampled from `U(-b, b)` with the layer's initial bound, its own bias is
/// set to 0, its traces and age are reset, and any optimizer state attached to
/// the touched weights is cleared.
pub fn reinit_units<R: Rng + ?Sized>(
    net: &mut Network,
    state: &mut CbpState,
    hidden: usize,
    units: &[usize],
    rng: &mut R,
    optimizer: Option<&mut Optimizer>,
) -> Result<()> {
    if hidden + 1 >= net.layers().len() {
        return Err(Error::Index {
            context: "hidden layer",
            index: hidden,
            len: net.num_hidden_layers(),
        });
    }
    let width = net.hidden_width(hidden);
    if let Some(&bad) = units.iter().find(|&&u| u >= width) {
        return Err(Error::Index {
            context: "hidden unit",
            index: bad,
            len: width,
        });
    }
    let layer_state = state.layer_mut(hidden)?;
    let (head, tail) = net.layers_mut().split_at_mut(hidden + 1);
    let incoming = &mut head[hidden];
    let outgoing = &mut tail[0];
    let next_in = outgoing.fan_in();
    let bound = incoming.init_bound;
    for &unit in units {
        let f_hat = layer_state.mean_activation_hat[unit];
        for k in 0..outgoing.fan_out() {
            let w = &mut outgoing.weights[k * next_in + unit];
            outgoing.bias[k] += f_hat * *w;
            *w = 0.0;
        }
        for w in incoming.row_mut(unit) {
            *w = rng.random_range(-bound..=bound);
        }
        incoming.bias[unit] = 0.0;
        layer_state.reset_unit(unit);
    }
    if let Some(opt) = optimizer {
        for &unit in units {
            opt.reset_unit(net, hidden, unit);
        }
    }
    Ok(())
}

/// Runs the selective-reinitialization half of a continual backpropagation
/// step on every hidden layer, in order: age, utility, selection, reinit.
/// `trace` must come from the forward pass of the current example; the
/// gradient step must already have been applied to `net`. Returns the number
/// of units replaced.
pub fn selective_reinit<R: Rng + ?Sized>(
    net: &mut Network,
    state: &mut CbpState,
    trace: &ForwardTrace,
    cfg: &CbpConfig,
    rng: &mut R,
    mut optimizer: Option<&mut Optimizer>,
) -> Result<usize> {
    let mut replaced = 0;
    for hidden in 0..net.num_hidden_layers() {
        state.increment_ages(hidden)?;
        state.update_utilities(hidden, trace, net, cfg, rng)?;
        let units = state.select_units_to_reinit(hidden, cfg)?;
        if !units.is_empty() {
            reinit_units(net, state, hidden, &units, rng, optimizer.as_deref_mut())?;
            replaced += units.len();
        }
    }
    Ok(replaced)
}

/// A full continual backpropagation step on one example: forward, loss,
/// backward, optimizer update, then [`selective_reinit`].
pub fn cbp_train_step<R: Rng + ?Sized>(
    net: &mut Network,
    state: &mut CbpState,
    optimizer: &mut Optimizer,
    input: &[f64],
    target: Target<'_>,
    cfg: &CbpConfig,
    rng: &mut R,
) -> Result<StepOutcome> {
    let trace = net.forward(input)?;
    let (loss, output_grad, correct) = loss_and_grad(trace.output(), target)?;
    let grads = net.backward(&trace, &output_grad)?;
    optimizer.step(net, &grads)?;
    let replaced = selective_reinit(net, state, &trace, cfg, rng, Some(optimizer))?;
    Ok(StepOutcome {
        loss,
        correct,
        replaced,
    })
}
