use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::transport::ChatReply;
use crate::digest::sha256_hex;
use crate::error::Result;

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    reply: ChatReply,
}

/// One JSON file per request hash. Writes go through a temporary file and a
/// rename, so readers never observe a partial entry.
#[derive(Clone, Debug)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Cache key for a request issued to a given backend.
    pub fn key(backend_identity: &str, wire: &[u8]) -> String {
        let mut bytes = backend_identity.as_bytes().to_vec();
        bytes.push(0);
        bytes.extend_from_slice(wire);
        sha256_hex(&bytes)
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Cached reply; unreadable or mismatched entries count as misses.
    pub fn get(&self, key: &str) -> Option<ChatReply> {
        let text = fs::read_to_string(self.path(key)).ok()?;
        let entry: CacheEntry = serde_json::from_str(&text).ok()?;
        (entry.key == key).then_some(entry.reply)
    }

    pub fn put(&self, key: &str, reply: &ChatReply) -> Result<()> {
        let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
        let tmp = self.dir.join(format!(".{key}.{}.{n}.tmp", std::process::id()));
        let entry = CacheEntry { key: key.to_string(), reply: reply.clone() };
        fs::write(&tmp, serde_json::to_vec(&entry)?)?;
        fs::rename(&tmp, self.path(key))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path().join("c")).unwrap();
        let key = ResponseCache::key("mock:1", b"{}");
        assert!(cache.get(&key).is_none());
        let reply = ChatReply { text: "{}".into(), prompt_tokens: 1, completion_tokens: 1, latency_ms: 3 };
        cache.put(&key, &reply).unwrap();
        assert_eq!(cache.get(&key), Some(reply));
        assert_ne!(key, ResponseCache::key("mock:2", b"{}"));
        let files: Vec<_> = fs::read_dir(cache.dir()).unwrap().collect();
        assert_eq!(files.len(), 1);
    }
}
