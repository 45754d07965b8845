use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate graph: view {view} row {row} has no neighbors after symmetrization")]
    DegenerateGraph { view: usize, row: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("log of non-positive value {0} with clamping disabled")]
    Domain(f64),

    #[error("training diverged at epoch {epoch}: l_ins={l_ins} l_clu={l_clu} l_hg={l_hg} total={total}")]
    Divergence {
        epoch: usize,
        l_ins: f64,
        l_clu: f64,
        l_hg: f64,
        total: f64,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
