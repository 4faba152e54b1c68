use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("unsupported polynomial order {0} (expected 1 or 2)")]
    UnsupportedOrder(usize),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("incompatible function spaces: {0}")]
    SpaceMismatch(String),

    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("invalid HAPOD tree: {0}")]
    InvalidTree(String),

    #[error("collateral basis is rank deficient at column {column}")]
    RankDeficient { column: usize },

    #[error("stage `{stage}` failed at time step {step}: {source}")]
    StageFailed {
        stage: &'static str,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidMesh(_) => "invalid_mesh",
            Error::UnsupportedOrder(_) => "unsupported_order",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::SpaceMismatch(_) => "space_mismatch",
            Error::DegeneratePolygon(_) => "degenerate_polygon",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Singular(_) => "singular",
            Error::NotConverged { .. } => "not_converged",
            Error::InvalidTree(_) => "invalid_tree",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::StageFailed { .. } => "stage_failed",
            Error::Config(_) => "config",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn mismatch(what: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            found,
        }
    }
}
