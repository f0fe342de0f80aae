//! Error type shared by every module. Variants are grouped by what the CLI
//! maps them to: usage/config problems, data problems, and numeric failures
//! (divergence, checksum, failed gradient checks).

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("zero-extent shape {0:?}: all extents must be >= 1")]
    ZeroExtentShape(Vec<usize>),

    #[error("rank {0} tensor not supported (rank must be 1..=4)")]
    UnsupportedRank(usize),

    #[error("{context}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        context: String,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("checkpoint checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("non-finite gradient in parameter '{0}'")]
    NonFiniteGradient(String),

    #[error("diverged at iteration {iteration}: non-finite loss ({detail})")]
    Divergence { iteration: u64, detail: String },

    #[error("gradient check failed: {0}")]
    GradCheckFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn shape_mismatch(context: impl Into<String>, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// Process exit code the CLI reports for this error.
    /// 1 usage/config, 2 data, 3 numeric (divergence, checksum, gradcheck).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) => 1,
            Error::Data(_) | Error::Io(_) | Error::Image(_) | Error::CheckpointFormat(_) => 2,
            Error::ChecksumMismatch { .. }
            | Error::Divergence { .. }
            | Error::NonFiniteGradient(_)
            | Error::GradCheckFailed(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
