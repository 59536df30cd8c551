//! Output-directory lock: one process owns an output directory at a time.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    /// Create `.run.lock` in `out_dir`; fails if a lock already exists.
    pub fn acquire(out_dir: &Path) -> anyhow::Result<RunLock> {
        std::fs::create_dir_all(out_dir)
            .with_context(|| format!("creating output directory {}", out_dir.display()))?;
        let path = out_dir.join(".run.lock");
        match std::fs::File::options().write(true).create_new(true).open(&path) {
            Ok(mut file) => {
                let _ = writeln!(file, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let holder = std::fs::read_to_string(&path).unwrap_or_default();
                bail!(
                    "output directory {} is locked by pid {} ({}); remove {} if that run is dead",
                    out_dir.display(),
                    holder.trim(),
                    path.display(),
                    path.display()
                )
            }
            Err(e) => Err(e).with_context(|| format!("creating lock {}", path.display())),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_lock_fails_until_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        assert!(RunLock::acquire(dir.path()).is_err());
        drop(lock);
        let again = RunLock::acquire(dir.path()).unwrap();
        drop(again);
        assert!(!dir.path().join(".run.lock").exists());
    }
}
