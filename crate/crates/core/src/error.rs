use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range. `key` names the offending field.
    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("zero-vector cannot be normalized (row {row}, norm {norm:e})")]
    ZeroNorm { row: usize, norm: f64 },

    #[error("non-finite activation in {layer}")]
    NonFiniteActivation { layer: String },

    #[error("non-finite proxy gradient at iteration {iteration}")]
    NonFiniteProxyGradient { iteration: usize },

    #[error("non-finite loss at epoch {epoch}, iteration {iteration} (bhp {bhp}, bwce {bwce})")]
    NonFiniteLoss {
        epoch: usize,
        iteration: usize,
        bhp: f64,
        bwce: f64,
    },

    #[error("degenerate batch: no anchor has a positive")]
    DegenerateBatch,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("class {class} is absent from the evaluated labels")]
    MissingClass { class: usize },

    #[error("cycle update called after {done} of {expected} iterations")]
    MidEpochUpdate { done: usize, expected: usize },

    #[error("batch of {requested} exceeds the {remaining} samples left in the epoch")]
    EpochExhausted { requested: usize, remaining: usize },

    #[error("{0}")]
    Invalid(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
