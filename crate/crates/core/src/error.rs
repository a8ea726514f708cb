use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite value encountered in {0}")]
    Numeric(&'static str),

    /// The oracle denoiser divides by `sqrt(1 - alpha_bar_t)`.
    #[error("degenerate noise level at timestep {t}: alpha_bar = 1")]
    DegenerateNoise { t: usize },

    #[error("unknown conditioning label {label:?}")]
    Conditioning { label: Option<u32> },

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("at timestep {t}: {source}")]
    Step {
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn at_step(self, t: usize) -> Self {
        match self {
            e @ Error::Step { .. } => e,
            e => Error::Step {
                t,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for failures caused by user-supplied configuration rather than
    /// by the computation itself.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Parameter(_)
            | Error::Shape { .. }
            | Error::Conditioning { .. }
            | Error::Config(_)
            | Error::Format { .. } => true,
            Error::Step { source, .. } | Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
