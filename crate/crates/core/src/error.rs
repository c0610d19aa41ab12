use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum LsError {
    #[error("number of cells must be at least 1, got {0}")]
    InvalidKappa(usize),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("point outside support in dimension {dim}: {value} not in [{lo}, {hi}]")]
    OutOfSupport { dim: usize, value: f64, lo: f64, hi: f64 },

    #[error("row {row} lies outside the support: {source}")]
    RowOutOfSupport {
        row: usize,
        #[source]
        source: Box<LsError>,
    },

    #[error("derivative order {deriv:?} not supported for basis order {order}")]
    UnsupportedDerivative { deriv: Vec<usize>, order: usize },

    #[error("invalid basis specification: {0}")]
    InvalidBasis(String),

    #[error(
        "Gram matrix is rank deficient (pivot {pivot:.3e} at column {column} below {threshold:.3e}); \
         a cell is empty or nearly empty, try reducing the number of knots"
    )]
    RankDeficient { column: usize, pivot: f64, threshold: f64 },

    #[error("unsupported basis family for this operation: {0}")]
    UnsupportedFamily(String),

    #[error("leverage of observation {row} is {leverage}, too close to 1 for HC2/HC3 weights")]
    LeverageOverflow { row: usize, leverage: f64 },

    #[error("non-positive variance {value:.3e} at x = {x:?}")]
    NonPositiveVariance { value: f64, x: Vec<f64> },

    #[error("invalid evaluation grid: {0}")]
    InvalidGrid(String),

    #[error("unknown model id {0} (expected 1..=7)")]
    InvalidModel(usize),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("simulation aborted: {failed} of {total} replications failed")]
    TooManyFailures { failed: usize, total: usize },
}

impl LsError {
    /// Process exit code for the CLI: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            LsError::InvalidKappa(_)
            | LsError::InvalidBasis(_)
            | LsError::UnsupportedDerivative { .. }
            | LsError::UnsupportedFamily(_)
            | LsError::InvalidGrid(_)
            | LsError::InvalidModel(_)
            | LsError::Config(_) => 2,
            LsError::DegenerateData(_)
            | LsError::InvalidPartition(_)
            | LsError::OutOfSupport { .. }
            | LsError::RowOutOfSupport { .. }
            | LsError::Parse { .. }
            | LsError::Io(_) => 3,
            LsError::RankDeficient { .. }
            | LsError::LeverageOverflow { .. }
            | LsError::NonPositiveVariance { .. }
            | LsError::TooManyFailures { .. } => 4,
        }
    }
}

impl From<std::io::Error> for LsError {
    fn from(e: std::io::Error) -> Self {
        LsError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LsError>;
