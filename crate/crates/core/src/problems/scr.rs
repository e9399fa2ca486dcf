//! Slowly-Changing Regression.
//!
//! Inputs are `m` binary bits plus a constant 1. The first `f` bits change
//! slowly: every `flip_period` steps one of them, chosen uniformly, is flipped.
//! The remaining `m - f` bits are fresh coin flips on every example. The
//! target is produced by a frozen network of linear threshold units with
//! `±1` weights.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::rng::{stream_rng, RunRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScrConfig {
    /// Input bits, excluding the constant bias bit.
    pub m: usize,
    /// Slowly flipping bits (the first `f` of the `m`).
    pub f: usize,
    /// Hidden LTUs in the target network.
    pub n: usize,
    /// Steps between bit flips.
    pub flip_period: u64,
    /// Threshold proportion.
    pub beta: f64,
    pub total_steps: u64,
}

impl Default for ScrConfig {
    fn default() -> Self {
        Self {
            m: 21,
            f: 15,
            n: 100,
            flip_period: 10_000,
            beta: 0.7,
            total_steps: 3_000_000,
        }
    }
}

impl ScrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.f > self.m {
            return Err(Error::Config(format!(
                "scr.f ({}) must not exceed scr.m ({})",
                self.f, self.m
            )));
        }
        if self.m + 1 > 64 {
            return Err(Error::Config(format!(
                "scr.m must be at most 63, got {}",
                self.m
            )));
        }
        if self.n == 0 {
            return Err(Error::Config("scr.n must be >= 1".into()));
        }
        if self.flip_period == 0 {
            return Err(Error::Config("scr.flip_period must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!(
                "scr.beta must be in [0,1], got {}",
                self.beta
            )));
        }
        Ok(())
    }

    /// Length of an input vector, including the bias bit.
    pub fn input_size(&self) -> usize {
        self.m + 1
    }
}

/// The frozen target network. Row `i` of the hidden weights is stored as two
/// bitmasks over input positions: `positive[i]` where the weight is `+1` and
/// `negative[i]` where it is `-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScrTargetNet {
    inputs: usize,
    positive: Vec<u64>,
    negative: Vec<u64>,
    thresholds: Vec<f64>,
    output_weights: Vec<f64>,
    output_bias: f64,
}

impl ScrTargetNet {
    fn sample<R: Rng + ?Sized>(cfg: &ScrConfig, rng: &mut R) -> Self {
        let inputs = cfg.input_size();
        let mut positive = Vec::with_capacity(cfg.n);
        let mut negative = Vec::with_capacity(cfg.n);
        let mut thresholds = Vec::with_capacity(cfg.n);
        for _ in 0..cfg.n {
            let mut neg = 0u64;
            for j in 0..inputs {
                if rng.random::<bool>() {
                    neg |= 1 << j;
                }
            }
            let pos = !neg & input_mask(inputs);
            positive.push(pos);
            negative.push(neg);
            thresholds.push(inputs as f64 * cfg.beta - neg.count_ones() as f64);
        }
        let output_weights = (0..cfg.n).map(|_| sign(rng.random())).collect();
        let output_bias = sign(rng.random());
        Self {
            inputs,
            positive,
            negative,
            thresholds,
            output_weights,
            output_bias,
        }
    }

    pub fn num_hidden(&self) -> usize {
        self.thresholds.len()
    }

    pub fn input_size(&self) -> usize {
        self.inputs
    }

    /// Row `i` of the hidden weights as `±1` values.
    pub fn hidden_weights(&self, i: usize) -> Vec<f64> {
        (0..self.inputs)
            .map(|j| {
                if self.negative[i] >> j & 1 == 1 {
                    -1.0
                } else {
                    1.0
                }
            })
            .collect()
    }

    /// Number of negative entries in row `i`.
    pub fn negative_count(&self, i: usize) -> u32 {
        self.negative[i].count_ones()
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn output_weights(&self) -> &[f64] {
        &self.output_weights
    }

    pub fn output_bias(&self) -> f64 {
        self.output_bias
    }

    /// Output for an input given as a bitmask over input positions.
    pub fn forward_bits(&self, bits: u64) -> f64 {
        let mut out = self.output_bias;
        for i in 0..self.thresholds.len() {
            let z = (self.positive[i] & bits).count_ones() as f64
                - (self.negative[i] & bits).count_ones() as f64;
            if z > self.thresholds[i] {
                out += self.output_weights[i];
            }
        }
        out
    }
}

fn sign(b: bool) -> f64 {
    if b {
        1.0
    } else {
        -1.0
    }
}

fn input_mask(inputs: usize) -> u64 {
    if inputs == 64 {
        u64::MAX
    } else {
        (1u64 << inputs) - 1
    }
}

/// Target of `net` for a `{0,1}` input vector: each LTU fires iff its weighted
/// input sum exceeds its threshold, and the output is the `±1`-weighted sum of
/// the firing units plus the output bias weight.
pub fn ltu_forward(net: &ScrTargetNet, input: &[f64]) -> Result<f64> {
    ensure_len("target network input", net.inputs, input.len())?;
    let mut bits = 0u64;
    for (j, &x) in input.iter().enumerate() {
        if x == 1.0 {
            bits |= 1 << j;
        } else if x != 0.0 {
            return Err(Error::Config(format!(
                "target network inputs must be 0 or 1, got {x}"
            )));
        }
    }
    Ok(net.forward_bits(bits))
}

#[derive(Debug, Clone)]
pub struct ScrStream {
    cfg: ScrConfig,
    target: ScrTargetNet,
    slow_bits: u64,
    step: u64,
    flips: u64,
    rng: RunRng,
}

/// Samples a target network and an input stream from `seed`.
pub fn scr_new(cfg: &ScrConfig, seed: u64) -> Result<(ScrTargetNet, ScrStream)> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, Stream::Data);
    let target = ScrTargetNet::sample(cfg, &mut rng);
    let mut slow_bits = 0u64;
    for j in 0..cfg.f {
        if rng.random::<bool>() {
            slow_bits |= 1 << j;
        }
    }
    let stream = ScrStream {
        cfg: *cfg,
        target: target.clone(),
        slow_bits,
        step: 0,
        flips: 0,
        rng,
    };
    Ok((target, stream))
}

impl ScrStream {
    pub fn config(&self) -> &ScrConfig {
        &self.cfg
    }

    pub fn target(&self) -> &ScrTargetNet {
        &self.target
    }

    /// Examples emitted so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn flips(&self) -> u64 {
        self.flips
    }

    /// Emits the next example as a bitmask over input positions and its target.
    pub fn next_bits(&mut self) -> (u64, f64) {
        self.step += 1;
        if self.step % self.cfg.flip_period == 0 && self.cfg.f > 0 {
            let j = self.rng.random_range(0..self.cfg.f);
            self.slow_bits ^= 1 << j;
            self.flips += 1;
        }
        let fast = self.cfg.m - self.cfg.f;
        let fresh = if fast == 0 {
            0
        } else {
            self.rng.random::<u64>() & input_mask(fast)
        };
        let bits = self.slow_bits | fresh << self.cfg.f | 1 << self.cfg.m;
        (bits, self.target.forward_bits(bits))
    }

    /// Writes the next input into `input` (length `m + 1`) and returns its target.
    pub fn next_into(&mut self, input: &mut [f64]) -> Result<f64> {
        ensure_len("scr input buffer", self.cfg.input_size(), input.len())?;
        let (bits, target) = self.next_bits();
        for (j, x) in input.iter_mut().enumerate() {
            *x = (bits >> j & 1) as f64;
        }
        Ok(target)
    }

    /// `n` inputs sharing the current slow bits, with fast bits drawn from
    /// `rng`. The stream itself does not advance.
    pub fn probe_inputs<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let fast = self.cfg.m - self.cfg.f;
        (0..n)
            .map(|_| {
                let fresh = if fast == 0 {
                    0
                } else {
                    rng.random::<u64>() & input_mask(fast)
                };
                let bits = self.slow_bits | fresh << self.cfg.f | 1 << self.cfg.m;
                (0..self.cfg.input_size())
                    .map(|j| (bits >> j & 1) as f64)
                    .collect()
            })
            .collect()
    }

    pub fn scr_next(&mut self) -> (Vec<f64>, f64) {
        let mut input = vec![0.0; self.cfg.input_size()];
        let target = self
            .next_into(&mut input)
            .expect("buffer sized from config");
        (input, target)
    }
}
