use alloc::string::String;

/// Errors for contract violations in the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    #[error("data length {got} does not match dims {dims:?} ({expected} voxels)")]
    LengthMismatch {
        dims: [usize; 3],
        expected: usize,
        got: usize,
    },
    #[error("dims must all be >= 1, got {0:?}")]
    InvalidDims([usize; 3]),
    #[error("spacing must be strictly positive, got {0:?} mm")]
    InvalidSpacing([f64; 3]),
    #[error("non-finite value at linear index {0}")]
    NonFinite(usize),
    #[error("mask value at linear index {index} is {value}, expected exactly 0 or 1")]
    NotBinary { index: usize, value: f32 },
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("channel count mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("style bank is empty")]
    EmptyStyleBank,
    #[error("architecture mismatch: expected {expected}, got {got}")]
    ArchMismatch { expected: String, got: String },
    #[error("parameter mismatch for entry '{0}'")]
    ParamMismatch(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("distance undefined: both masks must be non-empty")]
    UndefinedDistance,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("phantom mask fraction outside [{min}, {max}] after {retries} retries")]
    PhantomDegenerate { min: f64, max: f64, retries: u32 },
}
