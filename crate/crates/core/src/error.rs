use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("series needs at least 2 samples, got {0}")]
    EmptySeries(usize),
    #[error("timestamps must strictly increase (sample {index}: {previous_ms} ms then {timestamp_ms} ms)")]
    NonMonotonicTimestamps {
        index: usize,
        previous_ms: f64,
        timestamp_ms: f64,
    },
    #[error("non-finite value at sample {0}")]
    NonFiniteValue(usize),
    #[error("timestamps and values differ in length ({timestamps} vs {values})")]
    LengthMismatch { timestamps: usize, values: usize },
    #[error("series is constant (zero standard deviation)")]
    ConstantSeries,
    #[error("sampling rates differ ({0} Hz vs {1} Hz)")]
    RateMismatch(f64, f64),
    #[error("empty input")]
    EmptyInput,
    #[error("max lag {max_lag} must be below {limit}")]
    LagTooLarge { max_lag: usize, limit: usize },
    #[error("correlation function is empty")]
    EmptyCorrelation,
    #[error("frame dimensions differ ({0}x{1} vs {2}x{3})")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("frame too small ({0}x{1}); both sides must be at least 16 px")]
    FrameTooSmall(usize, usize),
    #[error("frame has zero intensity variance")]
    DegenerateFrame,
    #[error("flow field has no valid pixels")]
    NoValidPixels,
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("audio clip is empty")]
    EmptyClip,
    #[error("bin width must be positive, got {0} ms")]
    NonPositiveBin(f64),
    #[error("unsupported audio: {0}")]
    UnsupportedAudio(String),
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: row {row}: {message}")]
    UnparsableRow {
        path: PathBuf,
        row: usize,
        message: String,
    },
    #[error("overlap of {overlap_ms:.1} ms is below the required {required_ms:.1} ms")]
    InsufficientOverlap { overlap_ms: f64, required_ms: f64 },
    #[error("no calibration entry for {0}")]
    MissingCalibrationEntry(String),
    #[error("prefix of {duration_ms:.1} ms is below the minimum {min_ms:.1} ms")]
    PrefixTooShort { duration_ms: f64, min_ms: f64 },
    #[error("invalid run spec: {0}")]
    InvalidSpec(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Stable machine-readable identifier, used in CLI error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptySeries(_) => "EMPTY_SERIES",
            Error::NonMonotonicTimestamps { .. } => "NON_MONOTONIC_TIMESTAMPS",
            Error::NonFiniteValue(_) => "NON_FINITE_VALUE",
            Error::LengthMismatch { .. } => "LENGTH_MISMATCH",
            Error::ConstantSeries => "CONSTANT_SERIES",
            Error::RateMismatch(..) => "RATE_MISMATCH",
            Error::EmptyInput => "EMPTY_INPUT",
            Error::LagTooLarge { .. } => "LAG_TOO_LARGE",
            Error::EmptyCorrelation => "EMPTY_CORRELATION",
            Error::DimensionMismatch(..) => "DIMENSION_MISMATCH",
            Error::FrameTooSmall(..) => "FRAME_TOO_SMALL",
            Error::DegenerateFrame => "DEGENERATE_FRAME",
            Error::NoValidPixels => "NO_VALID_PIXELS",
            Error::TooFewFrames(_) => "TOO_FEW_FRAMES",
            Error::EmptyClip => "EMPTY_CLIP",
            Error::NonPositiveBin(_) => "NON_POSITIVE_BIN",
            Error::UnsupportedAudio(_) => "UNSUPPORTED_AUDIO",
            Error::MissingColumn { .. } => "MISSING_COLUMN",
            Error::UnparsableRow { .. } => "UNPARSABLE_ROW",
            Error::InsufficientOverlap { .. } => "INSUFFICIENT_OVERLAP",
            Error::MissingCalibrationEntry(_) => "MISSING_CALIBRATION_ENTRY",
            Error::PrefixTooShort { .. } => "PREFIX_TOO_SHORT",
            Error::InvalidSpec(_) => "INVALID_SPEC",
            Error::InvalidConfig(_) => "INVALID_CONFIG",
            Error::InvalidArgument(_) => "INVALID_ARGUMENT",
            Error::Io { .. } => "IO",
            Error::Format { .. } => "FORMAT",
        }
    }
}
