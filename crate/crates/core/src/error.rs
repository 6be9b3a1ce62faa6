use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid palette: {0}")]
    Palette(String),

    #[error("recipe depth {0} exceeds the maximum of {max}", max = crate::degrade::MAX_RECIPE_STEPS)]
    RecipeTooDeep(usize),

    #[error("image contains a non-finite value at flat index {0}")]
    NonFinitePixel(usize),

    #[error("image is {height}x{width}, at least {min_height}x{min_width} is required")]
    ImageTooSmall {
        height: usize,
        width: usize,
        min_height: usize,
        min_width: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[cfg(feature = "nn")]
    #[error(transparent)]
    Candle(#[from] candle_core::Error),

    #[cfg(feature = "nn")]
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    #[cfg(feature = "nn")]
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
