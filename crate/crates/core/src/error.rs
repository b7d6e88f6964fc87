use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report. `kind()` gives a stable
/// machine-readable tag for each variant.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("frame_idx decreases at line {line} ({previous} -> {current})")]
    NonMonotoneFrames {
        line: usize,
        previous: u64,
        current: u64,
    },
    #[error("duplicate scene id {0:?}")]
    DuplicateSceneId(String),
    #[error("{what}: expected length {expected}, got {actual}")]
    Length {
        what: String,
        expected: usize,
        actual: usize,
    },
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode image {}: {message}", path.display())]
    Decode { path: PathBuf, message: String },
    #[error("malformed json in {}: {message}", path.display())]
    Json { path: PathBuf, message: String },
    #[error("degenerate box: w={w}, h={h}")]
    DegenerateBox { w: f64, h: f64 },
    #[error("non-finite entry in cost matrix at ({row}, {col})")]
    NonFiniteCost { row: usize, col: usize },
    #[error("detections span more than one frame or video")]
    MixedFrameInput,
    #[error("no periodicity found (peak autocorrelation {peak:.3})")]
    NoPeriodicity { peak: f64 },
    #[error("series too short: need {needed} samples, got {actual}")]
    TooShort { needed: usize, actual: usize },
    #[error("image has no foreground (non-black) pixels")]
    EmptyForeground,
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("histogram has zero variance")]
    ZeroVariance,
    #[error("lambda {0} outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error("scene {scene_id:?} lacks feature {feature:?}")]
    MissingFeature { scene_id: String, feature: String },
    #[error("ranking contains no positives")]
    NoPositives,
    #[error("no label for scene {0:?}")]
    LabelMissing(String),
    #[error("invalid synthetic spec: {0}")]
    SpecInvalid(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MissingFile(_) => "MissingFile",
            Error::Schema { .. } => "SchemaError",
            Error::NonMonotoneFrames { .. } => "NonMonotoneFrames",
            Error::DuplicateSceneId(_) => "DuplicateSceneId",
            Error::Length { .. } => "LengthError",
            Error::InvalidValue(_) => "InvalidValue",
            Error::Io { .. } => "IoError",
            Error::Decode { .. } => "DecodeError",
            Error::Json { .. } => "JsonError",
            Error::DegenerateBox { .. } => "DegenerateBox",
            Error::NonFiniteCost { .. } => "NonFiniteCost",
            Error::MixedFrameInput => "MixedFrameInput",
            Error::NoPeriodicity { .. } => "NoPeriodicity",
            Error::TooShort { .. } => "TooShort",
            Error::EmptyForeground => "EmptyForeground",
            Error::ZeroVector => "ZeroVector",
            Error::LengthMismatch(..) => "LengthMismatch",
            Error::ZeroVariance => "ZeroVariance",
            Error::LambdaOutOfRange(_) => "LambdaOutOfRange",
            Error::MissingFeature { .. } => "MissingFeature",
            Error::NoPositives => "NoPositives",
            Error::LabelMissing(_) => "LabelMissing",
            Error::SpecInvalid(_) => "SpecInvalid",
            Error::InvalidConfig(_) => "InvalidConfig",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}
