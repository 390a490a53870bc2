use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive semi-definite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("missing class {0}")]
    MissingClass(u8),
    #[error("ill-conditioned covariance: {0}")]
    Conditioning(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("labels required for steering interventions")]
    MissingLabels,
    #[error("degenerate targets: {0}")]
    DegenerateTarget(String),
    #[error("training diverged at epoch {0}")]
    Training(usize),
    #[error("label {0} not known to the probe")]
    UnknownLabel(String),
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("sequence of {len} tokens exceeds max length {max}")]
    TooLong { len: usize, max: usize },
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the error comes from a malformed file or record.
    pub fn is_format(&self) -> bool {
        matches!(
            self,
            Error::Format(_) | Error::Json(_) | Error::Csv(_) | Error::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
