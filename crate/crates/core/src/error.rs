use std::path::PathBuf;

use crate::time::Timestamp;

/// Position of an offending record: 1-based data row (header excluded) and,
/// when read from a file, the physical line number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowLocation {
    pub row: usize,
    pub line: Option<u64>,
}

impl std::fmt::Display for RowLocation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(line) => write!(f, "row {} (line {})", self.row, line),
            None => write!(f, "row {}", self.row),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{at}: {message}")]
    MalformedRow { at: RowLocation, message: String },

    #[error("{at}: duplicate timestamp {timestamp}")]
    DuplicateTimestamp { at: RowLocation, timestamp: Timestamp },

    #[error("{at}: timestamp {timestamp} is not after the previous row")]
    OutOfOrder { at: RowLocation, timestamp: Timestamp },

    #[error("{at}: {message}")]
    CadenceMismatch { at: RowLocation, message: String },

    #[error("{at}: funding timestamp {timestamp} is not at 00:00, 08:00 or 16:00 UTC")]
    OffScheduleFunding { at: RowLocation, timestamp: Timestamp },

    #[error("price must be positive and finite, got {0}")]
    NonPositivePrice(f64),

    #[error("empty series")]
    EmptySeries,

    #[error("series share no common timestamps")]
    EmptyIntersection,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("bound argument {0} is not positive; trading cost exceeds the benchmark level")]
    BoundArgumentNonPositive(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("timestamp {0} is not a funding event")]
    NotAnEvent(Timestamp),

    #[error("funding schedule has no event at {0} while a position is open")]
    ScheduleGap(Timestamp),

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("design matrix is singular or collinear")]
    SingularMatrix,

    #[error("no qualifying events: {0}")]
    NoQualifyingEvents(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
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
