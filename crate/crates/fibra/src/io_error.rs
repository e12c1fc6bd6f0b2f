//! File-level errors carrying the offending path (and line, when known),
//! so the CLI can report exactly where an input went wrong.

use std::path::{Path, PathBuf};
use thiserror::Error;

pub type FileResult<T> = Result<T, FileError>;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}{}: malformed input: {message}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Malformed {
        path: PathBuf,
        line: Option<usize>,
        message: String,
    },
}

impl FileError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        FileError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn malformed(path: &Path, line: Option<usize>, message: impl Into<String>) -> Self {
        FileError::Malformed {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }
}
