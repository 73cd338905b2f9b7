use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value produced by {op}{}", layer.map(|l| alloc::format!(" at layer {l}")).unwrap_or_default())]
    NonFinite { op: &'static str, layer: Option<usize> },

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by a numeric failure rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Diverged { .. })
    }

    /// Attach a layer index to a numeric error that lacks one.
    pub fn at_layer(self, id: usize) -> Self {
        match self {
            Error::NonFinite { op, layer: None } => Error::NonFinite { op, layer: Some(id) },
            other => other,
        }
    }
}
