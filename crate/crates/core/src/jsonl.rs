//! Line-delimited JSON reading and writing with line-numbered errors.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Schema { path: PathBuf, line: usize, message: String },
}

impl JsonlError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        JsonlError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Reads one record per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    read_jsonl_with(path, |v: T, _| Ok(v))
}

/// Reads records and runs `check` on each; a `check` error is reported with
/// the offending line number.
pub fn read_jsonl_with<R, T, F>(path: &Path, mut check: F) -> Result<Vec<T>, JsonlError>
where
    R: DeserializeOwned,
    F: FnMut(R, usize) -> Result<T, String>,
{
    let file = File::open(path).map_err(|e| JsonlError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| JsonlError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| JsonlError::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let record: R = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        out.push(check(record, i + 1).map_err(schema)?);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T, I>(path: &Path, items: I) -> Result<(), JsonlError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| JsonlError::io(path, e))?;
    }
    let file = File::create(path).map_err(|e| JsonlError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| JsonlError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| JsonlError::io(path, e))?;
    }
    w.flush().map_err(|e| JsonlError::io(path, e))
}
