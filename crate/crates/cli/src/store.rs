//! Output-directory persistence: atomic writes, stage stamps and error files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("missing artifact {path}; run `{stage}` first")]
    Missing { path: PathBuf, stage: &'static str },
    #[error("stale artifact {path}: it was produced from different inputs (expected key {expected}, found {found}); rerun `{stage}`")]
    Stale {
        path: PathBuf,
        stage: &'static str,
        expected: String,
        found: String,
    },
    #[error("corrupt artifact {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let io = |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| StoreError::Corrupt {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_bytes(path: &Path, stage: &'static str) -> Result<Vec<u8>, StoreError> {
    fs::read(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            StoreError::Missing {
                path: path.to_path_buf(),
                stage,
            }
        } else {
            StoreError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path, stage: &'static str) -> Result<T, StoreError> {
    let bytes = read_bytes(path, stage)?;
    serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Identifies the inputs an artifact was produced from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub stage: String,
    pub grid_hash: String,
    /// Hash of every configuration input of the producing stage.
    pub key: String,
}

impl Stamp {
    /// Fails unless `found` matches the expected stamp.
    pub fn check(&self, found: &Stamp, path: &Path, stage: &'static str) -> Result<(), StoreError> {
        if self.grid_hash != found.grid_hash || self.key != found.key {
            return Err(StoreError::Stale {
                path: path.to_path_buf(),
                stage,
                expected: format!("{}/{}", self.grid_hash, self.key),
                found: format!("{}/{}", found.grid_hash, found.key),
            });
        }
        Ok(())
    }
}

/// Machine-readable record of a failed stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub kind: String,
    pub message: String,
}

pub fn error_path(dir: &Path, stage: &str) -> PathBuf {
    dir.join(format!("error_{stage}.json"))
}
