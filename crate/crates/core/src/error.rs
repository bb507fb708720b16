use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layer {layer}: {message}")]
    LayerConfig { layer: usize, message: String },

    #[error("shape mismatch{}: {message}", layer.map(|l| format!(" at layer {l}")).unwrap_or_default())]
    Shape { layer: Option<usize>, message: String },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("non-finite value in tensor: {0}")]
    NonFinite(String),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("value {value} outside two-hot support [-{bound}, {bound}]")]
    TwoHotRange { value: f64, bound: u32 },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error("refusing to overwrite existing file {0} (pass --force)")]
    Exists(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(layer: impl Into<Option<usize>>, message: impl Into<String>) -> Self {
        Error::Shape {
            layer: layer.into(),
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }
}
