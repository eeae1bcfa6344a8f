use std::path::PathBuf;

use nalgebra::Vector3;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("no ego pose covers t = {0} s")]
    MissingPose(f64),

    #[error("only {found} inliers survived RANSAC (need at least 2)")]
    InsufficientInliers { found: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("velocity is unobservable: {0}")]
    UnobservableVelocity(String),

    #[error("normal equations are ill-conditioned (condition {condition:.3e}), null direction {null_direction:?}")]
    IllConditioned {
        condition: f64,
        null_direction: Vector3<f64>,
    },

    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),

    #[error("misaligned input: {0}")]
    MisalignedInput(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("dataset and run do not belong together: {0}")]
    Pairing(String),

    #[error("schema version mismatch: expected {expected}, found {found} in {path}")]
    SchemaVersion {
        expected: u32,
        found: u32,
        path: PathBuf,
    },

    #[error("malformed data in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2 = configuration error, 3 = data error, 4 = internal invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownScenario(_) | Error::InvalidArgument(_) => 2,
            Error::Internal(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
