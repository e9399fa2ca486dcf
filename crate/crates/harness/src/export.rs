//! Writing and reading experiment outputs.
//!
//! An output directory holds `config.toml` (the resolved config), one
//! `run_NNN.csv` per run with columns `run,bin,step,metric,value`, one
//! `summary_<metric>.csv` per metric with columns `bin,mean,stderr`, and
//! `summary.json` with the aggregate, the config echo and the wall-clock time.
//! With `format = "json"` the per-run and per-metric files are JSON arrays of
//! the same rows.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::OutputFormat;
use crate::error::{HarnessError, Result};
use crate::metrics::{BinStat, MetricsRecord};
use crate::run::{Experiment, RunSummary};

pub const SUMMARY_JSON: &str = "summary.json";
pub const CONFIG_TOML: &str = "config.toml";

fn ext(format: OutputFormat) -> &'static str {
    match format {
        OutputFormat::Csv => "csv",
        OutputFormat::Json => "json",
    }
}

pub fn run_file(dir: &Path, run: usize, format: OutputFormat) -> PathBuf {
    dir.join(format!("run_{run:03}.{}", ext(format)))
}

pub fn summary_file(dir: &Path, metric: &str, format: OutputFormat) -> PathBuf {
    dir.join(format!("summary_{metric}.{}", ext(format)))
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => HarnessError::io(path, io),
        other => HarnessError::Data(format!("{}: {other:?}", path.display())),
    }
}

pub fn check_finite(records: &[MetricsRecord]) -> Result<()> {
    match records.iter().find(|r| !r.value.is_finite()) {
        Some(r) => Err(HarnessError::NonFinite {
            metric: r.metric.clone(),
            run: r.run,
            bin: r.bin,
        }),
        None => Ok(()),
    }
}

fn check_finite_stats(metric: &str, stats: &[BinStat]) -> Result<()> {
    let bad = stats
        .iter()
        .find(|s| !s.mean.is_finite() || s.stderr.is_some_and(|e| !e.is_finite()));
    match bad {
        Some(s) => Err(HarnessError::NonFinite {
            metric: metric.to_string(),
            run: usize::MAX,
            bin: s.bin,
        }),
        None => Ok(()),
    }
}

fn write_rows<T: Serialize>(
    path: &Path,
    rows: &[T],
    header: &[&str],
    format: OutputFormat,
) -> Result<()> {
    match format {
        OutputFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_path(path)
                .map_err(|e| csv_err(path, e))?;
            // Written by hand so that an empty table still carries its header.
            w.write_record(header).map_err(|e| csv_err(path, e))?;
            for row in rows {
                w.serialize(row).map_err(|e| csv_err(path, e))?;
            }
            w.flush().map_err(|e| HarnessError::io(path, e))
        }
        OutputFormat::Json => write_json(path, &rows),
    }
}

fn read_rows<T: DeserializeOwned>(path: &Path, format: OutputFormat) -> Result<Vec<T>> {
    match format {
        OutputFormat::Csv => {
            let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
            r.deserialize()
                .map(|row| row.map_err(|e| csv_err(path, e)))
                .collect()
        }
        OutputFormat::Json => read_json(path),
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
    w.write_all(b"\n").map_err(|e| HarnessError::io(path, e))?;
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
}

pub fn write_records(path: &Path, records: &[MetricsRecord], format: OutputFormat) -> Result<()> {
    check_finite(records)?;
    write_rows(
        path,
        records,
        &["run", "bin", "step", "metric", "value"],
        format,
    )
}

pub fn read_records(path: &Path, format: OutputFormat) -> Result<Vec<MetricsRecord>> {
    read_rows(path, format)
}

pub fn write_summary(
    path: &Path,
    metric: &str,
    stats: &[BinStat],
    format: OutputFormat,
) -> Result<()> {
    check_finite_stats(metric, stats)?;
    write_rows(path, stats, &["bin", "mean", "stderr"], format)
}

pub fn read_summary(path: &Path, format: OutputFormat) -> Result<Vec<BinStat>> {
    read_rows(path, format)
}

pub fn read_run_summary(dir: &Path) -> Result<RunSummary> {
    read_json(&dir.join(SUMMARY_JSON))
}

/// Writes every output file of `exp` into `dir` (created if missing). All
/// values are checked before anything is written.
pub fn write_experiment(dir: &Path, exp: &Experiment, format: OutputFormat) -> Result<()> {
    for run in &exp.runs {
        check_finite(&run.records)?;
    }
    for (metric, stats) in &exp.summary.metrics {
        check_finite_stats(metric, stats)?;
    }
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let cfg_path = dir.join(CONFIG_TOML);
    std::fs::write(&cfg_path, exp.summary.config.to_toml())
        .map_err(|e| HarnessError::io(&cfg_path, e))?;
    for run in &exp.runs {
        write_records(&run_file(dir, run.run, format), &run.records, format)?;
    }
    for (metric, stats) in &exp.summary.metrics {
        write_summary(&summary_file(dir, metric, format), metric, stats, format)?;
    }
    write_json(&dir.join(SUMMARY_JSON), &exp.summary)
}

/// Per-metric summaries found in an output directory.
pub fn read_summaries(dir: &Path) -> Result<BTreeMap<String, Vec<BinStat>>> {
    Ok(read_run_summary(dir)?.metrics)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_records_give_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_records(&path, &[], OutputFormat::Csv).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "run,bin,step,metric,value\n"
        );
        assert!(read_records(&path, OutputFormat::Csv).unwrap().is_empty());
    }

    #[test]
    fn nan_is_refused_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rec = MetricsRecord {
            run: 0,
            bin: 1,
            step: 2,
            metric: "squared_error".into(),
            value: f64::NAN,
        };
        assert!(matches!(
            write_records(&path, &[rec], OutputFormat::Csv),
            Err(HarnessError::NonFinite { .. })
        ));
        assert!(!path.exists());
    }
}
