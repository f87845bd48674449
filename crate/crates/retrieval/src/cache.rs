use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use parking_lot::{Mutex, RwLock};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::{cosine, Embedder, HashedNgramEmbedder};
use crate::RetrievalError;

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Test clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(Mutex::new(start))
    }

    pub fn advance(&self, by: Duration) {
        *self.0.lock() += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheLayer {
    Memory,
    Disk,
    Semantic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub memory_ttl_hours: i64,
    pub disk_ttl_hours: i64,
    pub semantic_ttl_hours: i64,
    pub semantic_threshold: f64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self { memory_ttl_hours: 24, disk_ttl_hours: 24, semantic_ttl_hours: 24 * 7, semantic_threshold: 0.92 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheHit<V> {
    pub value: V,
    pub layer: CacheLayer,
    /// Canonical key of the stored entry that matched.
    pub matched_key: String,
    /// Cosine between probe and stored query; 1.0 for exact layers.
    pub similarity: f64,
}

/// Lowercase, punctuation removed, whitespace collapsed.
pub fn canonical_key(query: &str) -> String {
    let cleaned: String =
        query.to_lowercase().chars().map(|c| if c.is_alphanumeric() || c == '%' { c } else { ' ' }).collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Byte store behind the disk layer.
pub trait DiskStore: Send + Sync {
    fn get(&self, key: &str) -> std::io::Result<Option<Vec<u8>>>;
    fn put(&self, key: &str, bytes: &[u8]) -> std::io::Result<()>;
}

/// One JSON file per key, named by the key's SHA-256.
#[derive(Debug, Clone)]
pub struct DirDiskStore {
    dir: PathBuf,
}

impl DirDiskStore {
    pub fn new(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{}.json", hex::encode(Sha256::digest(key.as_bytes()))))
    }
}

impl DiskStore for DirDiskStore {
    fn get(&self, key: &str) -> std::io::Result<Option<Vec<u8>>> {
        match std::fs::read(self.path_for(key)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn put(&self, key: &str, bytes: &[u8]) -> std::io::Result<()> {
        let path = self.path_for(key);
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(tmp, path)
    }
}

#[derive(Debug, Default)]
pub struct MemoryDiskStore(Mutex<HashMap<String, Vec<u8>>>);

impl MemoryDiskStore {
    /// Overwrites the raw bytes of an entry.
    pub fn corrupt(&self, key: &str, bytes: &[u8]) {
        self.0.lock().insert(key.to_string(), bytes.to_vec());
    }
}

impl DiskStore for MemoryDiskStore {
    fn get(&self, key: &str) -> std::io::Result<Option<Vec<u8>>> {
        Ok(self.0.lock().get(key).cloned())
    }

    fn put(&self, key: &str, bytes: &[u8]) -> std::io::Result<()> {
        self.0.lock().insert(key.to_string(), bytes.to_vec());
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Stored<V> {
    key: String,
    created_at: DateTime<Utc>,
    value: V,
}

#[derive(Debug, Clone)]
struct SemanticEntry<V> {
    stored: Stored<V>,
    embedding: Vec<f64>,
}

/// Memory, disk and semantic layers, probed in that order.
pub struct ResponseCache<V> {
    config: CacheConfig,
    memory: RwLock<HashMap<String, Stored<V>>>,
    disk: Option<Box<dyn DiskStore>>,
    semantic: RwLock<Vec<SemanticEntry<V>>>,
    embedder: Arc<dyn Embedder>,
    clock: Arc<dyn Clock>,
}

impl<V: Clone + Serialize + DeserializeOwned> ResponseCache<V> {
    pub fn new(config: CacheConfig) -> Self {
        Self {
            config,
            memory: RwLock::new(HashMap::new()),
            disk: None,
            semantic: RwLock::new(Vec::new()),
            embedder: Arc::new(HashedNgramEmbedder::default()),
            clock: Arc::new(SystemClock),
        }
    }

    pub fn with_disk(mut self, store: Box<dyn DiskStore>) -> Self {
        self.disk = Some(store);
        self
    }

    pub fn with_embedder(mut self, embedder: Arc<dyn Embedder>) -> Self {
        self.embedder = embedder;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    fn fresh(&self, created_at: DateTime<Utc>, ttl_hours: i64) -> bool {
        self.clock.now() < created_at + Duration::hours(ttl_hours)
    }

    fn disk_get(&self, key: &str) -> Option<Stored<V>> {
        let store = self.disk.as_ref()?;
        let bytes = match store.get(key) {
            Ok(Some(b)) => b,
            Ok(None) => return None,
            Err(e) => {
                log::warn!("disk cache read failed for `{key}`: {e}");
                return None;
            }
        };
        match serde_json::from_slice::<Stored<V>>(&bytes) {
            Ok(s) if s.key == key => Some(s),
            Ok(_) => {
                log::warn!("disk cache entry for `{key}` has a mismatched key");
                None
            }
            Err(e) => {
                log::warn!("corrupt disk cache entry for `{key}`: {e}");
                None
            }
        }
    }

    fn disk_put(&self, stored: &Stored<V>) {
        if let Some(store) = &self.disk {
            let result = serde_json::to_vec(stored)
                .map_err(std::io::Error::other)
                .and_then(|b| store.put(&stored.key, &b));
            if let Err(e) = result {
                log::warn!("disk cache write failed for `{}`: {e}", stored.key);
            }
        }
    }

    pub fn lookup(&self, query: &str) -> Option<CacheHit<V>> {
        let key = canonical_key(query);
        if let Some(s) = self.memory.read().get(&key) {
            if self.fresh(s.created_at, self.config.memory_ttl_hours) {
                return Some(CacheHit { value: s.value.clone(), layer: CacheLayer::Memory, matched_key: key, similarity: 1.0 });
            }
        }
        if let Some(s) = self.disk_get(&key) {
            if self.fresh(s.created_at, self.config.disk_ttl_hours) {
                let hit = CacheHit { value: s.value.clone(), layer: CacheLayer::Disk, matched_key: key.clone(), similarity: 1.0 };
                self.memory.write().insert(key, s);
                return Some(hit);
            }
        }
        let probe = self.embedder.embed(&key);
        let best = {
            let sem = self.semantic.read();
            sem.iter()
                .filter(|e| self.fresh(e.stored.created_at, self.config.semantic_ttl_hours))
                .filter_map(|e| cosine(&e.embedding, &probe).ok().map(|c| (c, e)))
                .filter(|(c, _)| *c >= self.config.semantic_threshold)
                .max_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(c, e)| (c, e.stored.clone()))
        }?;
        let (similarity, stored) = best;
        let promoted = Stored { key: key.clone(), created_at: stored.created_at, value: stored.value.clone() };
        self.disk_put(&promoted);
        self.memory.write().insert(key, promoted);
        Some(CacheHit { value: stored.value, layer: CacheLayer::Semantic, matched_key: stored.key, similarity })
    }

    pub fn store(&self, query: &str, value: V) -> Result<(), RetrievalError> {
        let key = canonical_key(query);
        let stored = Stored { key: key.clone(), created_at: self.clock.now(), value };
        self.disk_put(&stored);
        let embedding = self.embedder.embed(&key);
        {
            let mut sem = self.semantic.write();
            sem.retain(|e| e.stored.key != key);
            sem.push(SemanticEntry { stored: stored.clone(), embedding });
        }
        self.memory.write().insert(key, stored);
        Ok(())
    }

    /// Drops expired entries from the in-process layers.
    pub fn evict_expired(&self) -> usize {
        let mut n = 0;
        {
            let mut mem = self.memory.write();
            let before = mem.len();
            mem.retain(|_, s| self.fresh(s.created_at, self.config.memory_ttl_hours));
            n += before - mem.len();
        }
        let mut sem = self.semantic.write();
        let before = sem.len();
        sem.retain(|e| self.fresh(e.stored.created_at, self.config.semantic_ttl_hours));
        n + before - sem.len()
    }

    pub fn clear_memory(&self) {
        self.memory.write().clear();
    }

    pub fn clear_semantic(&self) {
        self.semantic.write().clear();
    }

    pub fn memory_len(&self) -> usize {
        self.memory.read().len()
    }
}
