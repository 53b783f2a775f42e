use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use maniagent_core::controller::{
    ActionCache, ActionStore, CacheRecord, ParameterizedActionSequence, StoreError,
};

use crate::error::{Error, Result};
use crate::files::{read_structured, write_json};

#[derive(Debug, Default)]
struct Shared {
    cache: RwLock<ActionCache>,
    hits: AtomicU64,
    misses: AtomicU64,
}

/// Action cache backed by a JSON file, rewritten atomically after every store.
///
/// Clones share entries and counters. Lookups take a read lock, stores the
/// write lock.
#[derive(Debug, Clone, Default)]
pub struct PersistentCache {
    path: Option<PathBuf>,
    shared: Arc<Shared>,
}

impl PersistentCache {
    /// A cache that never touches the disk.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads `path` if it exists; otherwise starts empty and creates it on the first store.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let cache = if path.exists() {
            let records: Vec<CacheRecord> = read_structured(&path)?;
            ActionCache::from_records(records)
        } else {
            ActionCache::new()
        };
        Ok(Self {
            path: Some(path),
            shared: Arc::new(Shared {
                cache: RwLock::new(cache),
                ..Shared::default()
            }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn records(&self) -> Vec<CacheRecord> {
        self.read().records()
    }

    pub fn len(&self) -> usize {
        self.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the current entries to the backing file, if any.
    pub fn save(&self) -> Result<()> {
        match &self.path {
            Some(path) => write_json(path, &self.records()),
            None => Ok(()),
        }
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, ActionCache> {
        self.shared.cache.read().unwrap_or_else(|p| p.into_inner())
    }
}

impl ActionStore for PersistentCache {
    fn lookup(&mut self, prompt: &str) -> Option<ParameterizedActionSequence> {
        let found = self.read().peek(prompt).cloned();
        let counter = if found.is_some() {
            &self.shared.hits
        } else {
            &self.shared.misses
        };
        counter.fetch_add(1, Ordering::SeqCst);
        found
    }

    fn store(&mut self, prompt: &str, seq: ParameterizedActionSequence) -> Result<(), StoreError> {
        let mut cache = self.shared.cache.write().unwrap_or_else(|p| p.into_inner());
        cache.insert(prompt, seq);
        // Written under the lock so files land in store order.
        match &self.path {
            Some(path) => {
                write_json(path, &cache.records()).map_err(|e: Error| StoreError(e.to_string()))
            }
            None => Ok(()),
        }
    }

    fn hit_count(&self) -> u64 {
        self.shared.hits.load(Ordering::SeqCst)
    }

    fn miss_count(&self) -> u64 {
        self.shared.misses.load(Ordering::SeqCst)
    }
}
