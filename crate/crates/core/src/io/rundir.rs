//! Run directory layout: config copy, `checkpoints/`, `metrics.csv`,
//! `trace.log`, plus a lock file so concurrent runs cannot share a
//! directory.

use super::{IoError, Result};
use std::path::{Path, PathBuf};

pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Open (creating directories as needed).
    pub fn open(root: impl Into<PathBuf>) -> Result<RunDir> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        std::fs::create_dir_all(root.join("checkpoints"))?;
        Ok(RunDir { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_copy(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn metrics_csv(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn trace_log(&self) -> PathBuf {
        self.root.join("trace.log")
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(name)
    }

    pub fn dataset(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Acquire the directory lock; released when the guard drops.
    pub fn lock(&self) -> Result<RunLock> {
        let path = self.root.join("run.lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(IoError::Locked(self.root.clone()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

pub struct RunLock {
    path: PathBuf,
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
