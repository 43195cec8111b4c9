use thiserror::Error;

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("out of bounds: {0}")]
    Bounds(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("numeric failure in layer {layer:?}: {message}")]
    Numeric { layer: Option<usize>, message: String },
    #[error("invalid state: {0}")]
    State(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SimError {
    pub fn numeric(message: impl Into<String>) -> Self {
        SimError::Numeric {
            layer: None,
            message: message.into(),
        }
    }

    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            SimError::Bounds(_) => "bounds",
            SimError::Argument(_) => "argument",
            SimError::Numeric { .. } => "numeric",
            SimError::State(_) => "state",
            SimError::Format(_) => "format",
            SimError::Io(_) => "io",
            SimError::Json(_) => "config",
        }
    }
}

macro_rules! ensure_arg {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::SimError::Argument(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure_arg;
