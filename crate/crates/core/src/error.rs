use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {what}: {source}")]
    Parse {
        what: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid case: {0}")]
    InvalidCase(String),

    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("tap position {tap} outside range -{half}..=+{half}")]
    TapOutOfRange { tap: i32, half: i32 },

    #[error("root voltage {0} p.u. outside the [0.8, 1.2] sanity band")]
    RootVoltage(f64),

    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e} p.u.)")]
    NonConvergence { iterations: usize, mismatch: f64 },

    #[error("power flow diverged: bus {bus} voltage {v:.4} p.u. below collapse threshold")]
    Divergence { bus: usize, v: f64 },

    #[error("schedule rejected: {0}")]
    InvalidSchedule(String),

    #[error("no active episode")]
    NoEpisode,

    #[error("action {value} for PV {index} outside [-{bound}, {bound}]")]
    ActionOutOfBounds { index: usize, value: f64, bound: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("advisor transport failure: {0}")]
    Transport(String),

    #[error("stage {stage} failed for seed {seed}: {source}")]
    Stage {
        stage: &'static str,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Parse {
            what: what.into(),
            source,
        }
    }
}
