//! Replicated runs of one configuration.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use plasticity_core::diagnostics::{diagnose, DiagnosticsRecord};
use plasticity_core::learner::{Learner, Target};
use plasticity_core::net::Network;
use plasticity_core::problems::linear_baseline;
use plasticity_core::problems::mnist::{mnist_load_dir, MnistDataset};
use plasticity_core::problems::pmnist::{pmnist_task_stream, task_permutation};
use plasticity_core::problems::scr::scr_new;
use plasticity_core::rng::{stream_rng, RunRng, Stream};

use crate::config::{ExperimentConfig, LearnerKind, Problem};
use crate::error::{HarnessError, Result};
use crate::metrics::{self, layer_rank_metric, summarize, BinStat, Binner, MetricsRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub run: usize,
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
    /// Step at which a non-finite loss or weight stopped the run.
    pub diverged_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_runs: usize,
    pub n_diverged: usize,
    pub wall_clock_secs: f64,
    pub config: ExperimentConfig,
    /// Per-metric, per-bin mean and standard error over the runs that did not
    /// diverge.
    pub metrics: BTreeMap<String, Vec<BinStat>>,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub runs: Vec<RunOutput>,
    pub summary: RunSummary,
}

impl Experiment {
    pub fn all_diverged(&self) -> bool {
        self.summary.n_diverged == self.summary.n_runs
    }
}

/// Loads MNIST when the problem needs it.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Option<MnistDataset>> {
    match cfg.problem {
        Problem::Scr => Ok(None),
        Problem::Pmnist => {
            let dir = cfg.data_dir();
            let ds = mnist_load_dir(&dir).map_err(|e| {
                HarnessError::Data(format!(
                    "{e} (set pmnist.data_dir or the PLASTICITY_DATA_DIR environment variable)"
                ))
            })?;
            cfg.pmnist
                .stream_config()
                .validate(Some(ds.len()))
                .map_err(HarnessError::from)?;
            Ok(Some(ds))
        }
    }
}

fn build_network(
    cfg: &ExperimentConfig,
    input: usize,
    output: usize,
    rng: &mut RunRng,
) -> Result<Network> {
    Ok(match cfg.learner {
        LearnerKind::LinearBaseline => linear_baseline(input, output, rng)?,
        LearnerKind::Bp => Network::mlp(input, &cfg.hidden_widths(), output, cfg.activation, rng)?,
    })
}

struct Recorder {
    run: usize,
    records: Vec<MetricsRecord>,
}

impl Recorder {
    fn push(&mut self, bin: usize, step: u64, metric: &str, value: f64) {
        self.records.push(MetricsRecord {
            run: self.run,
            bin,
            step,
            metric: metric.to_string(),
            value,
        });
    }

    fn diagnostics(&mut self, d: &DiagnosticsRecord) {
        let (bin, step) = (d.index, d.step);
        if let Some(v) = d.dead_fraction {
            self.push(bin, step, metrics::DEAD_FRACTION, v);
        }
        if let Some(v) = d.saturated_fraction {
            self.push(bin, step, metrics::SATURATED_FRACTION, v);
        }
        self.push(
            bin,
            step,
            metrics::AVG_WEIGHT_MAGNITUDE,
            d.avg_weight_magnitude,
        );
        if let Some(v) = d.mean_effective_rank() {
            self.push(bin, step, metrics::EFFECTIVE_RANK, v);
        }
        for &(h, r) in &d.effective_rank {
            self.push(bin, step, &layer_rank_metric(h), r);
        }
    }
}

/// One independent run seeded with `base_seed + run`.
pub fn run_single(
    cfg: &ExperimentConfig,
    run: usize,
    data: Option<&MnistDataset>,
) -> Result<RunOutput> {
    let seed = cfg.base_seed.wrapping_add(run as u64);
    let mut rec = Recorder {
        run,
        records: Vec::new(),
    };
    let diverged_at = match cfg.problem {
        Problem::Scr => run_scr(cfg, seed, &mut rec)?,
        Problem::Pmnist => {
            let ds =
                data.ok_or_else(|| HarnessError::Data("pmnist run without a dataset".into()))?;
            run_pmnist(cfg, seed, ds, &mut rec)?
        }
    };
    if let Some(step) = diverged_at {
        let bin = rec.records.last().map_or(0, |r| r.bin);
        rec.push(bin, step, metrics::DIVERGED, step as f64);
    }
    Ok(RunOutput {
        run,
        seed,
        records: rec.records,
        diverged_at,
    })
}

fn run_scr(cfg: &ExperimentConfig, seed: u64, rec: &mut Recorder) -> Result<Option<u64>> {
    let scr = &cfg.scr;
    let (_, mut stream) = scr_new(scr, seed)?;
    let mut init = stream_rng(seed, Stream::Init);
    let net = build_network(cfg, scr.input_size(), 1, &mut init)?;
    let mut learner = Learner::new(net, &cfg.learner_config(), seed)?;
    let mut probe_rng = stream_rng(seed, Stream::Probe);
    let diag_cfg = cfg.diagnostics.measure_config();
    let mut binner = Binner::new(cfg.bin_size);
    let mut x = vec![0.0; scr.input_size()];
    for step in 0..scr.total_steps {
        let bin = (step / cfg.bin_size) as usize;
        if cfg.diagnostics.enabled
            && step % cfg.bin_size == 0
            && step + cfg.bin_size <= scr.total_steps
        {
            let probe = stream.probe_inputs(diag_cfg.sample_size, &mut probe_rng);
            rec.diagnostics(&diagnose(learner.net(), &probe, &diag_cfg, bin, step)?);
        }
        let y = stream.next_into(&mut x)?;
        let out = learner.step(&x, Target::Regression(&[y]))?;
        if !out.loss.is_finite() {
            return Ok(Some(step + 1));
        }
        if let Some(mean) = binner.push(out.loss) {
            if !learner.net().is_finite() {
                return Ok(Some(step + 1));
            }
            rec.push(bin, step + 1, metrics::SQUARED_ERROR, mean);
        }
    }
    Ok(None)
}

fn run_pmnist(
    cfg: &ExperimentConfig,
    seed: u64,
    ds: &MnistDataset,
    rec: &mut Recorder,
) -> Result<Option<u64>> {
    let pm = cfg.pmnist.stream_config();
    let mut stream = pmnist_task_stream(ds, &pm, seed)?;
    let mut init = stream_rng(seed, Stream::Init);
    let net = build_network(cfg, ds.image_size(), 10, &mut init)?;
    let mut learner = Learner::new(net, &cfg.learner_config(), seed)?;
    let mut probe_rng = stream_rng(seed, Stream::Probe);
    let diag_cfg = cfg.diagnostics.measure_config();
    let mut image = vec![0.0; ds.image_size()];
    let mut correct = 0usize;
    let mut step = 0u64;
    while let Some(info) = stream.next_into(&mut image)? {
        if info.position == 0 {
            correct = 0;
            if cfg.diagnostics.enabled {
                let probe =
                    probe_images(ds, info.task, seed, diag_cfg.sample_size, &mut probe_rng)?;
                rec.diagnostics(&diagnose(
                    learner.net(),
                    &probe,
                    &diag_cfg,
                    info.task,
                    step,
                )?);
            }
        }
        let out = learner.step(&image, Target::Class(info.label))?;
        step += 1;
        if !out.loss.is_finite() {
            return Ok(Some(step));
        }
        if out.correct == Some(true) {
            correct += 1;
        }
        if info.position + 1 == pm.examples_per_task {
            if !learner.net().is_finite() {
                return Ok(Some(step));
            }
            let acc = correct as f64 / pm.examples_per_task as f64;
            rec.push(info.task, step, metrics::ONLINE_ACCURACY, acc);
        }
    }
    Ok(None)
}

/// A fresh sample of images under the permutation of task `task`.
fn probe_images(
    ds: &MnistDataset,
    task: usize,
    seed: u64,
    n: usize,
    rng: &mut RunRng,
) -> Result<Vec<Vec<f64>>> {
    let perm = task_permutation(task, seed, ds.image_size());
    let picks = index::sample(rng, ds.len(), n.min(ds.len()));
    picks
        .iter()
        .map(|i| {
            let mut img = vec![0.0; ds.image_size()];
            ds.fill_permuted(i, &perm, &mut img)?;
            Ok(img)
        })
        .collect()
}

/// Runs every replicate of `cfg` (in parallel) and aggregates the runs that
/// did not diverge.
pub fn run_experiment_with_data(
    cfg: &ExperimentConfig,
    data: Option<&MnistDataset>,
) -> Result<Experiment> {
    let start = Instant::now();
    let runs: Vec<RunOutput> = (0..cfg.n_runs)
        .into_par_iter()
        .map(|r| run_single(cfg, r, data))
        .collect::<Result<_>>()?;
    let healthy: Vec<&[MetricsRecord]> = runs
        .iter()
        .filter(|r| r.diverged_at.is_none())
        .map(|r| r.records.as_slice())
        .collect();
    let metrics = summarize(healthy)?;
    let summary = RunSummary {
        n_runs: runs.len(),
        n_diverged: runs.iter().filter(|r| r.diverged_at.is_some()).count(),
        wall_clock_secs: start.elapsed().as_secs_f64(),
        config: cfg.clone(),
        metrics,
    };
    Ok(Experiment { runs, summary })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    let data = load_dataset(cfg)?;
    run_experiment_with_data(cfg, data.as_ref())
}
