use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("only {distinct} distinct frames, need at least {k}")]
    DegenerateData { distinct: usize, k: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("code {index} out of range for stage {stage} (codebook size {k})")]
    IndexOutOfRange { stage: usize, index: u64, k: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("non-finite value in frame {frame}")]
    NonFiniteValue { frame: u64 },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("histogram stage {stage} is empty")]
    EmptyHistogram { stage: usize },
    #[error("codebook size {0} is invalid, need at least 2")]
    InvalidK(usize),
    #[error("codebook size {0} is not a power of two")]
    NonPowerOfTwoK(usize),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    TruncatedPayload { expected: u64, actual: u64 },
    #[error("unsupported format version {0}")]
    VersionUnsupported(u16),
    #[error("stream (N={stream_n}, K={stream_k}) does not match model (N={model_n}, K={model_k})")]
    ModelStreamMismatch {
        stream_n: usize,
        stream_k: usize,
        model_n: usize,
        model_k: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
