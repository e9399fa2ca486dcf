//! `plasticity` command-line tool.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use plasticity_harness::config::ExperimentConfig;
use plasticity_harness::export::{read_run_summary, write_experiment};
use plasticity_harness::sweep::{read_sweep_table, run_sweep, write_sweep, PointStatus, SWEEP_CSV};
use plasticity_harness::{run::run_experiment, HarnessError, Result};

#[derive(Parser)]
#[command(name = "plasticity", version, about = "Loss-of-plasticity experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write its metrics.
    Run(ConfigArgs),
    /// Run every point of the config's [[sweep]] grid and pick the best.
    Sweep(ConfigArgs),
    /// Print a summary of an output directory.
    Report { dir: PathBuf },
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Config file path or preset name.
    config: String,
    /// Overrides of the form --key=value (dotted keys reach nested tables).
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "--KEY=VALUE"
    )]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let overrides = self
            .overrides
            .iter()
            .map(|raw| {
                raw.strip_prefix("--")
                    .and_then(|kv| kv.split_once('='))
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| {
                        HarnessError::Config(format!("override `{raw}` is not --key=value"))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        ExperimentConfig::resolve(&self.config, &overrides)
    }
}

fn run(args: &ConfigArgs) -> Result<ExitCode> {
    let cfg = args.load()?;
    let exp = run_experiment(&cfg)?;
    write_experiment(&cfg.output, &exp, cfg.format)?;
    println!(
        "{} runs ({} diverged) in {:.1}s -> {}",
        exp.summary.n_runs,
        exp.summary.n_diverged,
        exp.summary.wall_clock_secs,
        cfg.output.display()
    );
    if exp.all_diverged() {
        return Err(HarnessError::AllDiverged(exp.summary.n_runs));
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(args: &ConfigArgs) -> Result<ExitCode> {
    let cfg = args.load()?;
    let result = run_sweep(&cfg)?;
    write_sweep(&cfg.output, &result, cfg.format)?;
    for p in &result.points {
        if let Err(e) = &p.outcome {
            eprintln!("point {}: {e}", p.row.point);
        }
    }
    print_table(&cfg.output.join(SWEEP_CSV))?;
    match result.best {
        Some(i) => {
            println!(
                "best: point {} ({})",
                i,
                settings_str(&result.points[i].row.settings)
            );
            Ok(ExitCode::SUCCESS)
        }
        None if result
            .points
            .iter()
            .all(|p| p.row.status == PointStatus::Diverged) =>
        {
            Err(HarnessError::AllDiverged(result.points.len()))
        }
        None => {
            println!("no point finished without divergence or error");
            Ok(ExitCode::from(1))
        }
    }
}

fn settings_str(settings: &[(String, String)]) -> String {
    settings
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn print_table(path: &Path) -> Result<()> {
    for r in read_sweep_table(path)? {
        let score = r.score.map_or("-".to_string(), |s| format!("{s:.6}"));
        println!(
            "point {:>3}  {:<40} {:<8} ok={:<3} score={score}",
            r.point,
            settings_str(&r.settings),
            r.status.as_str(),
            r.n_ok
        );
    }
    Ok(())
}

fn report(dir: &Path) -> Result<ExitCode> {
    if dir.join(SWEEP_CSV).exists() {
        print_table(&dir.join(SWEEP_CSV))?;
        return Ok(ExitCode::SUCCESS);
    }
    let summary = read_run_summary(dir)?;
    println!(
        "{} runs, {} diverged, {:.1}s",
        summary.n_runs, summary.n_diverged, summary.wall_clock_secs
    );
    println!(
        "{:<28} {:>6} {:>12} {:>12} {:>12}",
        "metric", "bins", "first", "last", "mean"
    );
    for (metric, stats) in &summary.metrics {
        let (Some(first), Some(last)) = (stats.first(), stats.last()) else {
            continue;
        };
        let mean = stats.iter().map(|s| s.mean).sum::<f64>() / stats.len() as f64;
        println!(
            "{metric:<28} {:>6} {:>12.6} {:>12.6} {:>12.6}",
            stats.len(),
            first.mean,
            last.mean,
            mean
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => run(args),
        Command::Sweep(args) => sweep(args),
        Command::Report { dir } => report(dir),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(e.exit_code() as u8)
    })
}
