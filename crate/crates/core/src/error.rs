use std::path::PathBuf;

/// Errors raised by the estimation and inference routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: String,
        expected: String,
        found: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {what} at ({row}, {col})")]
    NonFinite { what: String, row: usize, col: usize },

    #[error("{path}: line {line}: {message}")]
    Csv {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("row {row} has second moment {p_hat:e} at or below the floor {floor:e}")]
    DegenerateRow { row: usize, p_hat: f64, floor: f64 },

    #[error("degenerate problem: {0}")]
    DegenerateProblem(String),

    #[error(
        "group too large: restricted sample keeps {rows} rows and {cols} columns with data, \
         need at least {required} of each"
    )]
    GroupTooLarge {
        rows: usize,
        cols: usize,
        required: usize,
    },

    #[error("{what} has numerical rank {rank}, need {required}")]
    RankDeficient {
        what: String,
        rank: usize,
        required: usize,
    },

    #[error("treatment masks are not complementary at ({row}, {col})")]
    NonComplementaryMasks { row: usize, col: usize },

    #[error("characteristic column {column} has zero variance")]
    ZeroVariance { column: usize },

    #[error("{side} index {index} has no usable extra observations")]
    MissingExtraObservations { side: &'static str, index: usize },
}

impl Error {
    /// True for failures of the numerical fit itself rather than of the inputs.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::DegenerateProblem(_) | Error::RankDeficient { .. }
        )
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: (usize, usize),
        found: (usize, usize),
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: format!("{}x{}", expected.0, expected.1),
            found: format!("{}x{}", found.0, found.1),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A structured, non-fatal message attached to results and reports.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Warning {
    pub code: String,
    pub message: String,
}

impl Warning {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        let message = message.into();
        log::warn!("{code}: {message}");
        Self {
            code: code.to_string(),
            message,
        }
    }
}
