use std::io;

use thiserror::Error;

/// Errors produced by the workbench.
///
/// Variants fall into two families: content problems (`Domain`, `Format`,
/// `Json`) and environment problems (`Io`, `Transport`, `Protocol`). The CLI
/// maps the first family to exit code 1 and the second to exit code 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Domain(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// True for failures caused by the environment rather than by the input.
    pub fn is_environmental(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Transport(_) | Error::Protocol(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Formats a list of ids for an error message, eliding the tail of long lists.
pub(crate) fn list_ids<S: AsRef<str>>(ids: &[S]) -> String {
    const SHOWN: usize = 20;
    let mut out = ids
        .iter()
        .take(SHOWN)
        .map(|s| s.as_ref())
        .collect::<Vec<_>>()
        .join(", ");
    if ids.len() > SHOWN {
        out.push_str(&format!(" ... ({} more)", ids.len() - SHOWN));
    }
    out
}
