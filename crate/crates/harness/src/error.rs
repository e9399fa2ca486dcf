use std::path::PathBuf;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("all {0} runs diverged")]
    AllDiverged(usize),

    #[error("refusing to export non-finite value for `{metric}` (run {run}, bin {bin})")]
    NonFinite {
        metric: String,
        run: usize,
        bin: usize,
    },

    #[error(transparent)]
    Core(plasticity_core::Error),
}

impl From<plasticity_core::Error> for HarnessError {
    fn from(e: plasticity_core::Error) -> Self {
        use plasticity_core::Error as E;
        match e {
            E::Config(msg) => HarnessError::Config(msg),
            e @ (E::Ingest { .. } | E::Io { .. }) => HarnessError::Data(e.to_string()),
            other => HarnessError::Core(other),
        }
    }
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Data(_) => 3,
            HarnessError::AllDiverged(_) => 4,
            _ => 1,
        }
    }
}
