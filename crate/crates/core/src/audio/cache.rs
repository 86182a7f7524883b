//! On-disk cache of preprocessed clips: raw little-endian f32 blobs named
//! by the SHA-256 of the source bytes and the preprocessing parameters.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

/// Bumped whenever preprocessing changes in a way that alters the output.
const PIPELINE_VERSION: &str = "mono8k-kaiser128-perclip-v1";

#[derive(Debug, Clone)]
pub struct ClipCache {
    dir: PathBuf,
}

impl ClipCache {
    pub fn new(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ClipCache { dir })
    }

    pub fn key(source: &[u8], samples: usize) -> String {
        let mut h = Sha256::new();
        h.update(PIPELINE_VERSION.as_bytes());
        h.update((samples as u64).to_le_bytes());
        h.update(source);
        hex::encode(h.finalize())
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.f32"))
    }

    /// Returns the cached clip if present and of the expected length.
    pub fn get(&self, key: &str, samples: usize) -> Option<Vec<f32>> {
        let bytes = fs::read(self.path(key)).ok()?;
        if bytes.len() != samples * 4 {
            return None;
        }
        Some(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    pub fn put(&self, key: &str, clip: &[f32]) -> std::io::Result<()> {
        let bytes: Vec<u8> = clip.iter().flat_map(|v| v.to_le_bytes()).collect();
        let tmp = self.dir.join(format!("{key}.{}.tmp", std::process::id()));
        fs::write(&tmp, bytes)?;
        fs::rename(tmp, self.path(key))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_key_sensitivity() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ClipCache::new(dir.path()).unwrap();
        let key = ClipCache::key(b"abc", 4);
        assert_ne!(key, ClipCache::key(b"abd", 4));
        assert_ne!(key, ClipCache::key(b"abc", 5));
        assert!(cache.get(&key, 4).is_none());
        cache.put(&key, &[1.0, -2.5, 0.0, 3.25]).unwrap();
        assert_eq!(cache.get(&key, 4).unwrap(), vec![1.0, -2.5, 0.0, 3.25]);
        assert!(cache.get(&key, 5).is_none());
    }
}
