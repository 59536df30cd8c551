//! Content-addressed completion cache.
//!
//! One file per request hash. Enabling the cache never changes returned
//! content, only request counts; writes go through a temp file and an
//! atomic rename so concurrent writers are safe.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::backends::Generation;
use crate::error::Result;

static STORE_SEQ: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone)]
pub struct CompletionCache {
    dir: PathBuf,
}

impl CompletionCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(CompletionCache { dir })
    }

    pub fn dir(&self) -> &std::path::Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn load(&self, key: &str) -> Result<Option<Vec<Generation>>> {
        let path = self.path_for(key);
        match std::fs::read(&path) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn store(&self, key: &str, generations: &[Generation]) -> Result<()> {
        let bytes = serde_json::to_vec(generations)?;
        let tmp = self.dir.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            STORE_SEQ.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::write(&tmp, &bytes)?;
        std::fs::rename(&tmp, self.path_for(key))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cache = CompletionCache::open(dir.path().join("cache")).unwrap();
        let gens = vec![Generation::text("a"), Generation::text("b")];
        assert!(cache.load("k1").unwrap().is_none());
        cache.store("k1", &gens).unwrap();
        assert_eq!(cache.load("k1").unwrap().unwrap(), gens);
    }

    #[test]
    fn concurrent_stores_are_safe() {
        let dir = tempfile::tempdir().unwrap();
        let cache = CompletionCache::open(dir.path().join("cache")).unwrap();
        std::thread::scope(|scope| {
            for _ in 0..8 {
                let cache = cache.clone();
                scope.spawn(move || {
                    for i in 0..20 {
                        cache
                            .store("shared", &[Generation::text(format!("v{i}"))])
                            .unwrap();
                        let _ = cache.load("shared").unwrap();
                    }
                });
            }
        });
        assert!(cache.load("shared").unwrap().is_some());
    }
}
