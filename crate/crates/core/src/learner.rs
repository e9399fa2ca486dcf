//! One online training step: forward, loss, backward, regularize, update and
//! (optionally) selective reinitialization.

use serde::{Deserialize, Serialize};

use crate::cbp::{selective_reinit, CbpConfig, CbpState};
use crate::error::{Error, Result};
use crate::net::{
    argmax, loss_softmax_cross_entropy, loss_squared_error, ForwardTrace, Gradients, Network,
};
use crate::optim::{
    apply_l2, dropout_forward_into, perturb_weights, AdamConfig, AdamState, Optimizer,
    RegularizerConfig, Sgd, SgdConfig,
};
use crate::rng::{stream_rng, RunRng, Stream};

#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    /// Squared-error regression target.
    Regression(&'a [f64]),
    /// Softmax cross-entropy class label.
    Class(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    /// Whether the highest logit matched the label (classification only).
    pub correct: Option<bool>,
    /// Units reinitialized during this step.
    pub replaced: usize,
}

pub(crate) fn loss_and_grad(
    output: &[f64],
    target: Target<'_>,
) -> Result<(f64, Vec<f64>, Option<bool>)> {
    match target {
        Target::Regression(t) => {
            let (loss, grad) = loss_squared_error(output, t)?;
            Ok((loss, grad, None))
        }
        Target::Class(label) => {
            let (loss, grad) = loss_softmax_cross_entropy(output, label)?;
            Ok((loss, grad, Some(argmax(output) == label)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd(SgdConfig),
    Adam(AdamConfig),
}

impl OptimizerConfig {
    pub fn build(&self, net: &Network) -> Result<Optimizer> {
        Ok(match *self {
            OptimizerConfig::Sgd(cfg) => Optimizer::Sgd(Sgd::new(cfg, net)?),
            OptimizerConfig::Adam(cfg) => Optimizer::Adam(AdamState::new(cfg, net)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerConfig {
    pub optimizer: OptimizerConfig,
    pub regularizer: RegularizerConfig,
    pub cbp: Option<CbpConfig>,
}

/// A network together with everything needed to train it online.
#[derive(Debug, Clone)]
pub struct Learner {
    net: Network,
    optimizer: Optimizer,
    regularizer: RegularizerConfig,
    cbp: Option<(CbpConfig, CbpState)>,
    trace: ForwardTrace,
    grads: Gradients,
    dropout_rng: RunRng,
    perturb_rng: RunRng,
    cbp_rng: RunRng,
}

impl Learner {
    /// Builds a learner; `seed` feeds the dropout, perturbation and
    /// reinitialization streams.
    pub fn new(net: Network, config: &LearnerConfig, seed: u64) -> Result<Self> {
        config.regularizer.validate()?;
        if let Some(cbp) = &config.cbp {
            cbp.validate()?;
            if config.regularizer.dropout > 0.0 {
                return Err(Error::Config(
                    "continual backpropagation cannot be combined with dropout".into(),
                ));
            }
        }
        let optimizer = config.optimizer.build(&net)?;
        let grads = Gradients::zeros_like(&net);
        let cbp = config.cbp.map(|c| (c, CbpState::new(&net)));
        Ok(Self {
            net,
            optimizer,
            regularizer: config.regularizer,
            cbp,
            trace: ForwardTrace::default(),
            grads,
            dropout_rng: stream_rng(seed, Stream::Dropout),
            perturb_rng: stream_rng(seed, Stream::Perturb),
            cbp_rng: stream_rng(seed, Stream::Cbp),
        })
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    pub fn cbp_state(&self) -> Option<&CbpState> {
        self.cbp.as_ref().map(|(_, s)| s)
    }

    /// Trace of the most recent training example.
    pub fn last_trace(&self) -> &ForwardTrace {
        &self.trace
    }

    pub fn step(&mut self, input: &[f64], target: Target<'_>) -> Result<StepOutcome> {
        let reg = self.regularizer;
        if reg.dropout > 0.0 {
            dropout_forward_into(
                &self.net,
                input,
                reg.dropout,
                &mut self.dropout_rng,
                &mut self.trace,
            )?;
        } else {
            self.net.forward_into(input, &mut self.trace)?;
        }
        let (loss, output_grad, correct) = loss_and_grad(self.trace.output(), target)?;
        self.net
            .backward_into(&self.trace, &output_grad, &mut self.grads)?;
        apply_l2(&mut self.grads, &self.net, reg.weight_decay)?;
        self.optimizer.step(&mut self.net, &self.grads)?;
        perturb_weights(&mut self.net, reg.perturb_variance, &mut self.perturb_rng);
        let replaced = match &mut self.cbp {
            Some((cfg, state)) => selective_reinit(
                &mut self.net,
                state,
                &self.trace,
                cfg,
                &mut self.cbp_rng,
                Some(&mut self.optimizer),
            )?,
            None => 0,
        };
        Ok(StepOutcome {
            loss,
            correct,
            replaced,
        })
    }
}
