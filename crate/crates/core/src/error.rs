use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("CSV output failed: {0}")]
    Csv(#[from] csv::Error),

    #[error("unknown dtype tag {0:?} (expected \"real32\" or \"complex64\")")]
    UnknownDtype(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sampling rate {target} infeasible: {reason}")]
    InfeasibleRate { target: f64, reason: String },

    #[error("degenerate operator: {0}")]
    DegenerateOperator(String),

    #[error("solver diverged in {stage} at iteration {iteration}: {detail}")]
    Divergence {
        stage: &'static str,
        iteration: usize,
        detail: String,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }

    /// Input was rejected before any solver ran.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::UnknownDtype(_)
                | Error::ShapeMismatch(_)
                | Error::NonFinite(_)
                | Error::InvalidInput(_)
                | Error::InfeasibleRate { .. }
                | Error::Json { .. }
        )
    }

    /// Message with its source chain, `outer: inner: ...`.
    pub fn chain(&self) -> String {
        let mut out = self.to_string();
        let mut src = std::error::Error::source(self);
        while let Some(e) = src {
            out += &format!(": {e}");
            src = e.source();
        }
        out
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence { .. })
    }
}
