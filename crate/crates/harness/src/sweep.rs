//! Grid sweeps over config keys with best-point selection.
//!
//! Every grid point runs the full replicated experiment. Its score is the mean
//! over bins of the run-averaged objective metric: online accuracy (higher is
//! better) for pmnist, squared error (lower is better) for scr. A point with
//! any diverged run, or one that failed to run at all, is never selected.

use std::path::Path;

use rayon::prelude::*;

use crate::config::{ExperimentConfig, OutputFormat, Problem};
use crate::error::{HarnessError, Result};
use crate::export::write_experiment;
use crate::metrics::{BinStat, ONLINE_ACCURACY, SQUARED_ERROR};
use crate::run::{load_dataset, run_experiment_with_data, Experiment};

pub const SWEEP_CSV: &str = "sweep.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointStatus {
    Ok,
    Diverged,
    Failed,
}

impl PointStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            PointStatus::Ok => "ok",
            PointStatus::Diverged => "diverged",
            PointStatus::Failed => "error",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [PointStatus::Ok, PointStatus::Diverged, PointStatus::Failed]
            .into_iter()
            .find(|p| p.as_str() == s)
    }
}

/// One line of the sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: usize,
    /// `(key, value)` for every grid axis, values rendered as TOML.
    pub settings: Vec<(String, String)>,
    pub status: PointStatus,
    /// Runs that finished without diverging.
    pub n_ok: usize,
    pub score: Option<f64>,
}

#[derive(Debug)]
pub struct SweepPoint {
    pub row: SweepRow,
    pub outcome: std::result::Result<Experiment, String>,
}

#[derive(Debug)]
pub struct SweepResult {
    pub objective: &'static str,
    pub higher_is_better: bool,
    pub points: Vec<SweepPoint>,
    /// Index into `points` of the selected setting.
    pub best: Option<usize>,
}

impl SweepResult {
    pub fn rows(&self) -> Vec<SweepRow> {
        self.points.iter().map(|p| p.row.clone()).collect()
    }

    pub fn best_experiment(&self) -> Option<&Experiment> {
        self.best.and_then(|i| self.points[i].outcome.as_ref().ok())
    }
}

/// `(metric, higher_is_better)` used to rank grid points.
pub fn objective(problem: Problem) -> (&'static str, bool) {
    match problem {
        Problem::Scr => (SQUARED_ERROR, false),
        Problem::Pmnist => (ONLINE_ACCURACY, true),
    }
}

/// Mean over bins of the per-bin means.
pub fn score(stats: &[BinStat]) -> Option<f64> {
    if stats.is_empty() {
        None
    } else {
        Some(stats.iter().map(|s| s.mean).sum::<f64>() / stats.len() as f64)
    }
}

/// Cartesian product of the axes, first axis varying slowest.
pub fn expand_grid(cfg: &ExperimentConfig) -> Vec<Vec<(String, toml::Value)>> {
    let mut grid: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
    for axis in &cfg.sweep {
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push((axis.key.clone(), v.clone()));
                    p
                })
            })
            .collect();
    }
    grid
}

/// Index of the best `ok` row; ties go to the earliest row.
pub fn select_best(rows: &[SweepRow], higher_is_better: bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, row) in rows.iter().enumerate() {
        let (PointStatus::Ok, Some(s)) = (row.status, row.score) else {
            continue;
        };
        let better = match best {
            None => true,
            Some((_, b)) => {
                if higher_is_better {
                    s > b
                } else {
                    s < b
                }
            }
        };
        if better {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

fn render(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Runs every grid point. Errors inside one point are recorded on that point;
/// only failing to load the shared dataset aborts the sweep.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    if cfg.sweep.is_empty() {
        return Err(HarnessError::Config(
            "sweep needs at least one [[sweep]] axis".into(),
        ));
    }
    let (objective, higher_is_better) = objective(cfg.problem);
    let data = load_dataset(cfg)?;
    let grid: Vec<_> = expand_grid(cfg).into_iter().enumerate().collect();
    let points: Vec<SweepPoint> = grid
        .into_par_iter()
        .map(|(point, settings)| {
            let rendered = settings
                .iter()
                .map(|(k, v)| (k.clone(), render(v)))
                .collect();
            let outcome = settings
                .iter()
                .try_fold(cfg.clone(), |c, (k, v)| c.with_override(k, v.clone()))
                .and_then(|c| {
                    let mut c = c;
                    c.sweep.clear();
                    run_experiment_with_data(&c, data.as_ref())
                })
                .map_err(|e| e.to_string());
            let row = match &outcome {
                Ok(exp) => SweepRow {
                    point,
                    settings: rendered,
                    status: if exp.summary.n_diverged > 0 {
                        PointStatus::Diverged
                    } else {
                        PointStatus::Ok
                    },
                    n_ok: exp.summary.n_runs - exp.summary.n_diverged,
                    score: exp.summary.metrics.get(objective).and_then(|s| score(s)),
                },
                Err(_) => SweepRow {
                    point,
                    settings: rendered,
                    status: PointStatus::Failed,
                    n_ok: 0,
                    score: None,
                },
            };
            SweepPoint { row, outcome }
        })
        .collect();
    let rows: Vec<SweepRow> = points.iter().map(|p| p.row.clone()).collect();
    let best = select_best(&rows, higher_is_better);
    Ok(SweepResult {
        objective,
        higher_is_better,
        points,
        best,
    })
}

pub fn point_dir(dir: &Path, point: usize) -> std::path::PathBuf {
    dir.join(format!("point_{point:03}"))
}

/// Writes `sweep.csv` and every successful point's outputs under `dir`.
pub fn write_sweep(dir: &Path, result: &SweepResult, format: OutputFormat) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    for p in &result.points {
        if let Ok(exp) = &p.outcome {
            write_experiment(&point_dir(dir, p.row.point), exp, format)?;
        }
    }
    write_sweep_table(&dir.join(SWEEP_CSV), &result.rows())
}

pub fn write_sweep_table(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let to_err = |e: csv::Error| HarnessError::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    let keys: Vec<String> = rows
        .first()
        .map(|r| r.settings.iter().map(|(k, _)| k.clone()).collect())
        .unwrap_or_default();
    let mut header = vec!["point".to_string()];
    header.extend(keys);
    header.extend(["status", "n_ok", "score"].map(String::from));
    w.write_record(&header).map_err(to_err)?;
    for r in rows {
        let mut rec = vec![r.point.to_string()];
        rec.extend(r.settings.iter().map(|(_, v)| v.clone()));
        rec.push(r.status.as_str().to_string());
        rec.push(r.n_ok.to_string());
        rec.push(r.score.map(|s| s.to_string()).unwrap_or_default());
        w.write_record(&rec).map_err(to_err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_sweep_table(path: &Path) -> Result<Vec<SweepRow>> {
    let to_err = |e: csv::Error| HarnessError::Data(format!("{}: {e}", path.display()));
    let bad = |what: &str| HarnessError::Data(format!("{}: bad {what}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(to_err)?;
    let header: Vec<String> = r
        .headers()
        .map_err(to_err)?
        .iter()
        .map(String::from)
        .collect();
    if header.len() < 4 {
        return Err(bad("header"));
    }
    let keys = &header[1..header.len() - 3];
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(to_err)?;
        let n = rec.len();
        rows.push(SweepRow {
            point: rec[0].parse().map_err(|_| bad("point"))?,
            settings: keys
                .iter()
                .enumerate()
                .map(|(i, k)| (k.clone(), rec[i + 1].to_string()))
                .collect(),
            status: PointStatus::parse(&rec[n - 3]).ok_or_else(|| bad("status"))?,
            n_ok: rec[n - 2].parse().map_err(|_| bad("n_ok"))?,
            score: match &rec[n - 1] {
                "" => None,
                s => Some(s.parse().map_err(|_| bad("score"))?),
            },
        });
    }
    Ok(rows)
}
