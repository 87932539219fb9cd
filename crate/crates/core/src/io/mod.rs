//! Persistence: the binary dataset and checkpoint formats (both
//! little-endian, single-precision payloads), TOML run configs, the
//! append-only metrics CSV, and run-directory management with a lock file.

pub mod checkpoint;
pub mod dataset;
pub mod metrics;
pub mod rundir;

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    Magic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("file truncated: needed {needed} more bytes for {what}")]
    Truncated { what: &'static str, needed: usize },
    #[error("declared dimensions overflow the address space")]
    DimOverflow,
    #[error("model kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: &'static str, found: &'static str },
    #[error("invalid field in file: {0}")]
    BadField(String),
    #[error("run directory {0} is locked (another run in progress?)")]
    Locked(PathBuf),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, IoError>;

/// Parse a TOML config file, rejecting unknown keys via the target type's
/// serde attributes.
pub fn load_toml<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| IoError::Config(e.to_string()))
}

pub fn save_toml<T: serde::Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    let text = toml::to_string_pretty(value).map_err(|e| IoError::Config(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}
