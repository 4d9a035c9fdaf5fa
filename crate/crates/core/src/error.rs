use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("channel count must be even, got {0}")]
    OddChannels(usize),

    #[error(
        "spatial size {h}x{w} is not divisible by {factor}; pad bottom/right by {pad_h}x{pad_w}"
    )]
    Indivisible {
        h: usize,
        w: usize,
        factor: usize,
        pad_h: usize,
        pad_w: usize,
    },

    #[error("invalid flag combination: {0} with {1}")]
    InvalidFlags(String, String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {0}")]
    Version(u32),

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("unobservable at this input: {0}")]
    Unobservable(String),

    #[error("tape error: {0}")]
    Tape(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
