use thiserror::Error;

/// Errors raised by the solver, the reference pricers and persistence.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("numeric overflow at sample {sample}: {detail}")]
    NumericOverflow { sample: usize, detail: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("sampling starvation: accepted {accepted} of {drawn} draws")]
    SamplingStarvation { accepted: u64, drawn: u64 },

    #[error("training diverged at step {step}, stage {stage}: {detail}")]
    Divergence {
        step: usize,
        stage: usize,
        detail: String,
    },

    #[error("riccati solver unstable at u = {u}: try more steps")]
    RiccatiInstability { u: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("incomplete solution: missing steps {0:?}")]
    IncompleteSolution(Vec<usize>),

    #[error("archive integrity: {0}")]
    Integrity(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dimension { .. } | Error::Json(_) => 2,
            Error::NumericOverflow { .. }
            | Error::Divergence { .. }
            | Error::RiccatiInstability { .. }
            | Error::SamplingStarvation { .. }
            | Error::Domain(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
