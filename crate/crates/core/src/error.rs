use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("sentence {sentence}: {msg}")]
    Tree { sentence: String, msg: String },
    #[error("line {line}: score {value} outside [-3, 3]")]
    Range { line: usize, value: f64 },
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Attaches the path to an I/O error.
pub(crate) fn with_path<T>(path: &std::path::Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}
