//! Content-addressed run directories with a lock file.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use crate::Usage;

pub const ROOT_ENV: &str = "CPDG_RUN_DIR";
const LOCK_FILE: &str = "run.lock";

pub fn root() -> PathBuf {
    std::env::var_os(ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// An exclusively held run directory. The lock is released on drop.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    /// Creates and locks `root/name`. A run whose `marker` file exists is
    /// complete and is only reopened with `force`.
    pub fn acquire(name: &str, marker: &str, force: bool) -> anyhow::Result<Self> {
        let path = root().join(name);
        if path.join(marker).exists() && !force {
            return Err(Usage(format!("{} already holds a completed run; pass --force to overwrite it", path.display())).into());
        }
        std::fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        let lock = path.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!("{} is locked by another process (remove {} if it is stale)", path.display(), lock.display())
            }
            Err(e) => return Err(e).with_context(|| format!("locking {}", path.display())),
        }
        if force {
            let _ = std::fs::remove_file(path.join(marker));
        }
        Ok(Self { path })
    }

    pub fn join(&self, file: impl AsRef<Path>) -> PathBuf {
        self.path.join(file)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(self.path.join(LOCK_FILE));
    }
}
