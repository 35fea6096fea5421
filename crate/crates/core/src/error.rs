use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A lattice or tensor dimension is outside its valid range.
    #[error("invalid dimension: {what} = {value} (allowed {allowed})")]
    InvalidDimension {
        what: &'static str,
        value: usize,
        allowed: &'static str,
    },

    /// Two inputs that must agree in shape do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A weight archive is missing a tensor the forward pass requires.
    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    /// A parameter tensor exists but has the wrong shape.
    #[error("parameter shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A value that must be finite and in range is not.
    #[error("invalid value: {0}")]
    InvalidValue(String),

    /// Structured parse failure with the byte offset where it was detected.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// A binary file's magic bytes do not match the expected format.
    #[error("bad magic: expected {expected}, found {found}")]
    BadMagic { expected: String, found: String },

    /// A binary payload ended before the header-declared length.
    #[error("truncated payload: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },

    /// Malformed file contents beyond magic/truncation.
    #[error("format error: {0}")]
    Format(String),

    /// Bad configuration key or value.
    #[error("config error: {0}")]
    Config(String),

    /// Fitting produced a non-finite loss.
    #[error("non-finite loss at step {step} (rec={rec}, tv={tv}, mn={mn})")]
    NonFiniteLoss {
        step: usize,
        rec: f64,
        tv: f64,
        mn: f64,
    },

    /// A metric was asked for on inputs it is not defined for.
    #[error("metric input error: {0}")]
    MetricInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by malformed data or files (as opposed to
    /// numerical failures or usage mistakes). The CLI maps these to its
    /// data-error exit code.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::NonFiniteLoss { .. })
    }
}
