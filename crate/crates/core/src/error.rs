use thiserror::Error;

#[derive(Debug, Error)]
pub enum MantError {
    #[error("coefficient {0} out of range, expected 0..=127")]
    CoefficientRange(u32),

    #[error("probability {0} outside the open interval (0, 1)")]
    ProbabilityDomain(f64),

    #[error("unknown reference curve kind `{0}`")]
    InvalidCurveKind(String),

    #[error("NF epsilon {0} outside (0, 0.2)")]
    EpsilonRange(f64),

    #[error("non-finite input value at index {0}")]
    NonFinite(usize),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("element kind mismatch: expected {expected}, got {actual}")]
    KindMismatch {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("group misalignment: {0}")]
    GroupMisaligned(String),

    #[error("invalid group size {0}")]
    InvalidGroupSize(usize),

    #[error("candidate set is empty")]
    EmptyCandidates,

    #[error("insufficient calibration data: {0}")]
    InsufficientCalibration(String),

    #[error("process window is full; flush before pushing")]
    WindowFull,

    #[error("process window holds {fill} of {group_size} rows; flush requires a full window")]
    WindowNotFull { fill: usize, group_size: usize },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("malformed container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MantError>;
