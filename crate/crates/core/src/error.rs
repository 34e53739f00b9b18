use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: malformed JSON at byte {offset} (line {line}, column {column}): {message}")]
    Parse {
        path: String,
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("integrity error: {message}")]
    Integrity { message: String, ids: Vec<u64> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("lexicon validation error: {0}")]
    Lexicon(String),

    #[error("lookup error: unknown image id {0}")]
    UnknownImage(u64),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("degenerate contingency table: {0}")]
    DegenerateTable(String),

    #[error("contamination: {0}")]
    Contamination(String),

    #[error("{}: {source}", path.display())]
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

    pub(crate) fn integrity(message: impl Into<String>, mut ids: Vec<u64>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        let shown: Vec<String> = ids.iter().take(20).map(|id| id.to_string()).collect();
        let suffix = if ids.len() > 20 { ", ..." } else { "" };
        Error::Integrity {
            message: format!("{} [{}{}]", message.into(), shown.join(", "), suffix),
            ids,
        }
    }

    /// Build a parse error from serde_json, translating line/column into a byte offset.
    pub(crate) fn parse(path: &str, bytes: &[u8], err: serde_json::Error) -> Self {
        let (line, column) = (err.line(), err.column());
        Error::Parse {
            path: path.to_string(),
            offset: byte_offset(bytes, line, column),
            line,
            column,
            message: err.to_string(),
        }
    }

    /// True for errors caused by bad user input rather than the environment.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut current = 1;
    let mut start = 0;
    for (i, b) in bytes.iter().enumerate() {
        if current == line {
            break;
        }
        if *b == b'\n' {
            current += 1;
            start = i + 1;
        }
    }
    // serde_json columns are 1-based and point at the offending byte.
    (start + column.saturating_sub(1)).min(bytes.len())
}
