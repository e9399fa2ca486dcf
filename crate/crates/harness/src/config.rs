//! Declarative experiment configuration.
//!
//! A config is a TOML document. Every key has a default, so an empty document
//! is valid; `--key=value` overrides address nested keys with dots
//! (`--scr.total_steps=100000`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use plasticity_core::cbp::{CbpConfig, UtilityKind};
use plasticity_core::diagnostics::DiagnosticsConfig;
use plasticity_core::learner::{LearnerConfig, OptimizerConfig};
use plasticity_core::net::Activation;
use plasticity_core::optim::{AdamConfig, RegularizerConfig, SgdConfig};
use plasticity_core::problems::pmnist::PmnistConfig;
use plasticity_core::problems::scr::ScrConfig;

use crate::error::{HarnessError, Result};

/// Environment variable naming the directory that holds the MNIST IDX files.
pub const DATA_DIR_ENV: &str = "PLASTICITY_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "data/mnist";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    Scr,
    Pmnist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Bp,
    LinearBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mitigation {
    L2,
    ShrinkPerturb,
    Dropout,
    Cbp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PmnistSection {
    pub n_tasks: usize,
    pub examples_per_task: usize,
    pub with_replacement: bool,
    /// Overrides the data directory environment variable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
}

impl Default for PmnistSection {
    fn default() -> Self {
        let d = PmnistConfig::default();
        Self {
            n_tasks: d.n_tasks,
            examples_per_task: d.examples_per_task,
            with_replacement: d.with_replacement,
            data_dir: None,
        }
    }
}

impl PmnistSection {
    pub fn stream_config(&self) -> PmnistConfig {
        PmnistConfig {
            n_tasks: self.n_tasks,
            examples_per_task: self.examples_per_task,
            with_replacement: self.with_replacement,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    pub enabled: bool,
    pub sample_size: usize,
    pub saturation_epsilon: f64,
    /// Hidden layers whose effective rank is recorded; empty means all.
    pub layers: Vec<usize>,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        let d = DiagnosticsConfig::default();
        Self {
            enabled: true,
            sample_size: d.sample_size,
            saturation_epsilon: d.saturation_epsilon,
            layers: d.layers,
        }
    }
}

impl DiagnosticsSection {
    pub fn measure_config(&self) -> DiagnosticsConfig {
        DiagnosticsConfig {
            sample_size: self.sample_size,
            saturation_epsilon: self.saturation_epsilon,
            layers: self.layers.clone(),
        }
    }
}

/// One axis of a hyperparameter grid: a config key and the values it takes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<toml::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub learner: LearnerKind,
    pub optimizer: OptimizerKind,
    pub mitigations: Vec<Mitigation>,
    pub activation: Activation,
    /// Hidden layer widths; defaults to `[5]` for scr and `[2000, 2000, 2000]`
    /// for pmnist.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,

    pub step_size: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub perturb_variance: f64,
    pub dropout: f64,
    pub replacement_rate: f64,
    pub decay_rate: f64,
    pub maturity_threshold: u64,
    pub utility: UtilityKind,

    pub n_runs: usize,
    pub base_seed: u64,
    /// Examples per squared-error bin (scr).
    pub bin_size: u64,
    pub output: PathBuf,
    pub format: OutputFormat,

    pub scr: ScrConfig,
    pub pmnist: PmnistSection,
    pub diagnostics: DiagnosticsSection,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepAxis>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let adam = AdamConfig::new(0.001);
        let cbp = CbpConfig::default();
        Self {
            problem: Problem::Scr,
            learner: LearnerKind::Bp,
            optimizer: OptimizerKind::Sgd,
            mitigations: Vec::new(),
            activation: Activation::Relu,
            hidden: None,
            step_size: 0.01,
            momentum: 0.0,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            weight_decay: 0.0,
            perturb_variance: 0.0,
            dropout: 0.0,
            replacement_rate: cbp.replacement_rate,
            decay_rate: cbp.decay_rate,
            maturity_threshold: cbp.maturity_threshold,
            utility: cbp.utility,
            n_runs: 1,
            base_seed: 0,
            bin_size: 40_000,
            output: PathBuf::from("results"),
            format: OutputFormat::Csv,
            scr: ScrConfig::default(),
            pmnist: PmnistSection::default(),
            diagnostics: DiagnosticsSection::default(),
            sweep: Vec::new(),
        }
    }
}

fn config_err(e: plasticity_core::Error) -> HarnessError {
    match e {
        plasticity_core::Error::Config(msg) => HarnessError::Config(msg),
        other => HarnessError::Config(other.to_string()),
    }
}

fn range_err(field: &str, requirement: &str, value: f64) -> HarnessError {
    HarnessError::Config(format!("{field} must be {requirement}, got {value}"))
}

/// Parses a TOML scalar or array as written on a command line; bare words
/// become strings.
pub fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `key` (dotted path) in `table`, creating intermediate tables.
pub fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| HarnessError::Config(format!("empty override key `{key}`")))?;
    let mut cur = table;
    for part in parts {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            HarnessError::Config(format!("`{part}` in override `{key}` is not a table"))
        })?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Parses and validates a TOML document with `key=value` overrides applied
    /// on top.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.message().to_string()))?;
        for (k, v) in overrides {
            set_path(&mut table, k, parse_value(v))?;
        }
        Self::from_table(table)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: ExperimentConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text, overrides)
    }

    /// Loads `source` as a file path when one exists, otherwise as the name of
    /// a built-in preset.
    pub fn resolve(source: &str, overrides: &[(String, String)]) -> Result<Self> {
        let path = Path::new(source);
        if path.exists() {
            return Self::load(path, overrides);
        }
        match preset(source) {
            Some(text) => Self::parse(text, overrides),
            None => Err(HarnessError::Config(format!(
                "`{source}` is neither a config file nor a preset ({})",
                PRESETS.map(|(n, _)| n).join(", ")
            ))),
        }
    }

    /// The resolved config as TOML; parsing it back yields an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("config serializes to a table")
    }

    /// A copy with one dotted key replaced, re-validated.
    pub fn with_override(&self, key: &str, value: toml::Value) -> Result<Self> {
        let mut table = self.to_table();
        set_path(&mut table, key, value)?;
        Self::from_table(table)
    }

    pub fn has(&self, m: Mitigation) -> bool {
        self.mitigations.contains(&m)
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        match (self.learner, &self.hidden) {
            (LearnerKind::LinearBaseline, _) => Vec::new(),
            (_, Some(h)) => h.clone(),
            (_, None) => match self.problem {
                Problem::Scr => vec![5],
                Problem::Pmnist => vec![2000; 3],
            },
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        if let Some(d) = &self.pmnist.data_dir {
            return d.clone();
        }
        std::env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
    }

    pub fn learner_config(&self) -> LearnerConfig {
        let optimizer = match self.optimizer {
            OptimizerKind::Sgd => OptimizerConfig::Sgd(SgdConfig {
                step_size: self.step_size,
                momentum: self.momentum,
            }),
            OptimizerKind::Adam => OptimizerConfig::Adam(AdamConfig {
                step_size: self.step_size,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            }),
        };
        let decays = self.has(Mitigation::L2) || self.has(Mitigation::ShrinkPerturb);
        let regularizer = RegularizerConfig {
            weight_decay: if decays { self.weight_decay } else { 0.0 },
            perturb_variance: if self.has(Mitigation::ShrinkPerturb) {
                self.perturb_variance
            } else {
                0.0
            },
            dropout: if self.has(Mitigation::Dropout) {
                self.dropout
            } else {
                0.0
            },
        };
        let cbp = self.has(Mitigation::Cbp).then_some(CbpConfig {
            replacement_rate: self.replacement_rate,
            decay_rate: self.decay_rate,
            maturity_threshold: self.maturity_threshold,
            utility: self.utility,
        });
        LearnerConfig {
            optimizer,
            regularizer,
            cbp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(range_err(field, "> 0", v))
            }
        };
        let non_negative = |field: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(range_err(field, ">= 0", v))
            }
        };
        let unit = |field: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(range_err(field, "in [0, 1)", v))
            }
        };
        positive("step_size", self.step_size)?;
        unit("momentum", self.momentum)?;
        unit("beta1", self.beta1)?;
        unit("beta2", self.beta2)?;
        positive("eps", self.eps)?;
        non_negative("weight_decay", self.weight_decay)?;
        non_negative("perturb_variance", self.perturb_variance)?;
        unit("dropout", self.dropout)?;
        non_negative("replacement_rate", self.replacement_rate)?;
        unit("decay_rate", self.decay_rate)?;
        self.activation.validate().map_err(config_err)?;
        // TOML integers are signed 64-bit; larger seeds could not be echoed.
        if self.base_seed.saturating_add(self.n_runs as u64) > i64::MAX as u64 {
            return Err(HarnessError::Config(format!(
                "base_seed + n_runs must fit in a signed 64-bit integer, got base_seed {}",
                self.base_seed
            )));
        }
        if self.n_runs == 0 {
            return Err(HarnessError::Config("n_runs must be >= 1".into()));
        }
        if self.bin_size == 0 {
            return Err(HarnessError::Config("bin_size must be >= 1".into()));
        }

        if self.has(Mitigation::Cbp) && self.has(Mitigation::Dropout) {
            return Err(HarnessError::Config(
                "mitigations: cbp cannot be combined with dropout".into(),
            ));
        }
        let decays = self.has(Mitigation::L2) || self.has(Mitigation::ShrinkPerturb);
        if self.weight_decay > 0.0 && !decays {
            return Err(HarnessError::Config(
                "weight_decay is set but neither l2 nor shrink_perturb is in mitigations".into(),
            ));
        }
        if self.perturb_variance > 0.0 && !self.has(Mitigation::ShrinkPerturb) {
            return Err(HarnessError::Config(
                "perturb_variance is set but shrink_perturb is not in mitigations".into(),
            ));
        }
        if self.dropout > 0.0 && !self.has(Mitigation::Dropout) {
            return Err(HarnessError::Config(
                "dropout is set but dropout is not in mitigations".into(),
            ));
        }

        match self.learner {
            LearnerKind::LinearBaseline => {
                if self.hidden.as_ref().is_some_and(|h| !h.is_empty()) {
                    return Err(HarnessError::Config(
                        "hidden: the linear baseline has no hidden layers".into(),
                    ));
                }
                if let Some(m) = self
                    .mitigations
                    .iter()
                    .find(|m| matches!(m, Mitigation::Cbp | Mitigation::Dropout))
                {
                    return Err(HarnessError::Config(format!(
                        "mitigations: {m:?} needs hidden units and the linear baseline has none"
                    )));
                }
            }
            LearnerKind::Bp => {
                let hidden = self.hidden_widths();
                if hidden.is_empty() || hidden.contains(&0) {
                    return Err(HarnessError::Config(format!(
                        "hidden must list at least one width, all >= 1, got {hidden:?}"
                    )));
                }
            }
        }

        match self.problem {
            Problem::Scr => self.scr.validate().map_err(config_err)?,
            Problem::Pmnist => self
                .pmnist
                .stream_config()
                .validate(None)
                .map_err(config_err)?,
        }
        if self.diagnostics.enabled {
            self.diagnostics
                .measure_config()
                .validate()
                .map_err(config_err)?;
        }
        for axis in &self.sweep {
            if axis.values.is_empty() {
                return Err(HarnessError::Config(format!(
                    "sweep axis `{}` has no values",
                    axis.key
                )));
            }
            if axis.key == "sweep" || axis.key.starts_with("sweep.") {
                return Err(HarnessError::Config("sweep axes cannot set `sweep`".into()));
            }
        }
        Ok(())
    }
}

/// Built-in presets: desk-scale versions of both benchmarks and their
/// full-scale counterparts.
pub const PRESETS: [(&str, &str); 4] = [
    ("scr-small", include_str!("../presets/scr-small.toml")),
    ("pmnist-small", include_str!("../presets/pmnist-small.toml")),
    ("scr-full", include_str!("../presets/scr-full.toml")),
    ("pmnist-full", include_str!("../presets/pmnist-full.toml")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}
