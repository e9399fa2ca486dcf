//! Metric records, binning and cross-run aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const SQUARED_ERROR: &str = "squared_error";
pub const ONLINE_ACCURACY: &str = "online_accuracy";
pub const DEAD_FRACTION: &str = "dead_fraction";
pub const SATURATED_FRACTION: &str = "saturated_fraction";
pub const AVG_WEIGHT_MAGNITUDE: &str = "avg_weight_magnitude";
pub const EFFECTIVE_RANK: &str = "effective_rank";
/// Written once when a run stops on a non-finite loss or weight; the value is
/// the step at which it was detected.
pub const DIVERGED: &str = "diverged";

/// Effective rank of one hidden layer.
pub fn layer_rank_metric(hidden: usize) -> String {
    format!("{EFFECTIVE_RANK}_l{hidden}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run: usize,
    /// Bin index (scr) or task index (pmnist).
    pub bin: usize,
    /// Examples processed when the value was recorded.
    pub step: u64,
    pub metric: String,
    pub value: f64,
}

/// Streaming version of [`bin_series`].
#[derive(Debug, Clone)]
pub struct Binner {
    size: u64,
    count: u64,
    sum: f64,
}

impl Binner {
    pub fn new(size: u64) -> Self {
        assert!(size >= 1, "bin size must be >= 1");
        Self {
            size,
            count: 0,
            sum: 0.0,
        }
    }

    /// Adds a value; returns the bin mean when the bin completes.
    pub fn push(&mut self, value: f64) -> Option<f64> {
        self.sum += value;
        self.count += 1;
        if self.count == self.size {
            let mean = self.sum / self.size as f64;
            self.sum = 0.0;
            self.count = 0;
            Some(mean)
        } else {
            None
        }
    }
}

/// Means of consecutive non-overlapping bins; a trailing partial bin is dropped.
pub fn bin_series(values: &[f64], bin_size: u64) -> Vec<f64> {
    let mut binner = Binner::new(bin_size);
    values.iter().filter_map(|&v| binner.push(v)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub bin: usize,
    pub mean: f64,
    /// Sample standard deviation over `√n`; absent with fewer than two runs.
    pub stderr: Option<f64>,
}

/// Elementwise mean and standard error across runs.
pub fn aggregate_runs(series: &[Vec<f64>]) -> Result<Vec<(f64, Option<f64>)>> {
    let Some(first) = series.first() else {
        return Ok(Vec::new());
    };
    if let Some(bad) = series.iter().find(|s| s.len() != first.len()) {
        return Err(HarnessError::Config(format!(
            "cannot aggregate series of lengths {} and {}",
            first.len(),
            bad.len()
        )));
    }
    let n = series.len() as f64;
    Ok((0..first.len())
        .map(|i| {
            let mean = series.iter().map(|s| s[i]).sum::<f64>() / n;
            let stderr = (series.len() >= 2).then(|| {
                let ss: f64 = series.iter().map(|s| (s[i] - mean).powi(2)).sum();
                (ss / (n - 1.0)).sqrt() / n.sqrt()
            });
            (mean, stderr)
        })
        .collect())
}

/// Per-metric binned series of one run, keyed by metric name.
pub fn run_series(records: &[MetricsRecord]) -> BTreeMap<String, Vec<(usize, f64)>> {
    let mut out: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.metric != DIVERGED) {
        out.entry(r.metric.clone())
            .or_default()
            .push((r.bin, r.value));
    }
    out
}

/// Aggregates every metric across the given runs. Bins present in only some of
/// the runs are dropped.
pub fn summarize<'a>(
    runs: impl IntoIterator<Item = &'a [MetricsRecord]>,
) -> Result<BTreeMap<String, Vec<BinStat>>> {
    let per_run: Vec<_> = runs.into_iter().map(run_series).collect();
    let mut names: Vec<&String> = per_run.iter().flat_map(|m| m.keys()).collect();
    names.sort();
    names.dedup();
    let mut out = BTreeMap::new();
    for name in names {
        let series: Vec<&Vec<(usize, f64)>> = per_run.iter().filter_map(|m| m.get(name)).collect();
        if series.len() < per_run.len() {
            continue;
        }
        let len = series.iter().map(|s| s.len()).min().unwrap_or(0);
        let bins: Vec<usize> = series[0][..len].iter().map(|(b, _)| *b).collect();
        let values: Vec<Vec<f64>> = series
            .iter()
            .map(|s| s[..len].iter().map(|(_, v)| *v).collect())
            .collect();
        let stats = aggregate_runs(&values)?
            .into_iter()
            .zip(bins)
            .map(|((mean, stderr), bin)| BinStat { bin, mean, stderr })
            .collect();
        out.insert(name.clone(), stats);
    }
    Ok(out)
}
