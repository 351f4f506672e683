use thiserror::Error;

pub type Result<T> = std::result::Result<T, FinnError>;

#[derive(Debug, Error)]
pub enum FinnError {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("invalid tenor grid: {0}")]
    InvalidGrid(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("dataset is empty after filtering")]
    EmptyDataset,

    #[error("eigensolver did not converge")]
    EigenNonConvergence,

    #[error("rank-deficient least-squares design: {0}")]
    RankDeficient(String),

    #[error("{rejected} of {paths} Monte Carlo paths produced non-finite states")]
    ExplodingPaths { rejected: usize, paths: usize },

    #[error("non-finite {term} loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        term: &'static str,
    },

    #[error("grid mismatch: model has K={model_k}, tau_max={model_tau_max}; curve has K={curve_k}, tau_max={curve_tau_max}")]
    GridMismatch {
        model_k: usize,
        model_tau_max: f64,
        curve_k: usize,
        curve_tau_max: f64,
    },

    #[error("contract {index} ({contract}) failed: {source}")]
    ContractFailed {
        index: usize,
        contract: String,
        source: Box<FinnError>,
    },

    #[error("unsupported document version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
