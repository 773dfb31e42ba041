use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator, the solvers and the experiment front end.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates a structural or protocol constraint.
    /// The message names the violated constraint.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension error: {links} links cannot be assigned to {channels} channels (need K >= N)")]
    Dimension { links: usize, channels: usize },

    #[error("size error: brute force supports at most {max} links, got {got}")]
    Size { max: usize, got: usize },

    #[error("index error: channel {channel} out of range for link {link} (K = {channels})")]
    Index {
        link: usize,
        channel: usize,
        channels: usize,
    },

    #[error("phase error: {op} called during {phase} phase")]
    Phase { op: &'static str, phase: &'static str },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
