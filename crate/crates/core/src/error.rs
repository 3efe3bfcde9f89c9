use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// The CLI maps these onto process exit codes via [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown intent name `{0}`")]
    UnknownIntent(String),
    #[error("intent index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("unconditional slot is not a driving intent")]
    InvalidIntent,
    #[error("kinematic window needs at least 2 frames of equal length, got {0}")]
    DegenerateWindow(String),
    #[error("clip record has no meta-action")]
    MissingMetaAction,
    #[error("invalid maneuver spec: {0}")]
    InvalidSpec(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite velocity at Euler step {step}")]
    NonFiniteVelocity { step: usize },
    #[error("non-finite loss at step {step}: fm={fm}, proto={proto}")]
    NanLoss { step: usize, fm: f64, proto: f64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no prototype defined for intent {0}")]
    UndefinedPrototype(usize),
    #[error("compressor received an empty clip state")]
    EmptyState,
    #[error("clip {got} of sequence `{sequence}` arrived out of order (expected {expected})")]
    OutOfOrderClip {
        sequence: String,
        expected: u32,
        got: u32,
    },
    #[error("horizon {horizon}s exceeds trajectory span {span}s")]
    HorizonExceedsSpan { horizon: f64, span: f64 },
    #[error("frozen parameters changed during distillation")]
    FrozenViolation,
    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// 2 for data problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFiniteVelocity { .. } | Error::NanLoss { .. } | Error::FrozenViolation => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
