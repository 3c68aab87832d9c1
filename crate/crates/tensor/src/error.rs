use thiserror::Error;

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid axis {axis} for rank {rank}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("slice {start}..{end} out of range for axis {axis} of length {len}")]
    SliceOutOfRange {
        axis: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("conv2d: input has {input} channels, layer expects {expected}")]
    ChannelMismatch { input: usize, expected: usize },
    #[error("conv2d: kernel dims must be odd, got {0}x{1}")]
    EvenKernel(usize, usize),
    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error("rtf: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
