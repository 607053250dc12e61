use thiserror::Error;

/// Errors produced by the pose engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("topology contains a cycle through joint {0}")]
    CycleDetected(usize),
    #[error("joint {0} is not connected to the root")]
    DisconnectedJoint(usize),
    #[error("bad symmetry pair ({0}, {1})")]
    BadSymmetryPair(usize, usize),
    #[error("topology has {joints} joints but {bones} bones (expected {expected})", expected = .joints.saturating_sub(1))]
    BoneCountMismatch { joints: usize, bones: usize },
    #[error("joint index {index} out of range for {joints} joints")]
    JointOutOfRange { index: usize, joints: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("kernel span {span} exceeds input length {len}")]
    KernelLargerThanInput { span: usize, len: usize },
    #[error("sequence of {len} frames is too short (need more than {needed})")]
    SequenceTooShort { len: usize, needed: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("graph output must be a scalar, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("parameter {0} has no gradient")]
    MissingGrad(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("wrong window length: expected {expected}, got {got}")]
    WrongWindowLength { expected: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("schema violation at line {line}: {msg}")]
    Schema { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
