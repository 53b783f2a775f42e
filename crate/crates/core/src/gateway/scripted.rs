use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{scripted_key, GatewayError, ModelBackend, ModelRequest};

/// One transcript entry: replies for successive occurrences of `key`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub key: String,
    pub replies: Vec<String>,
}

struct Entry {
    replies: Vec<String>,
    cursor: AtomicUsize,
}

/// Replays a fixed transcript keyed by [`scripted_key`].
///
/// The transcript is read-only after construction; only per-key cursors move.
pub struct ScriptedBackend {
    entries: BTreeMap<String, Entry>,
}

impl ScriptedBackend {
    pub fn from_records<I: IntoIterator<Item = TranscriptRecord>>(records: I) -> Self {
        let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
        for record in records {
            let entry = entries.entry(record.key).or_insert_with(|| Entry {
                replies: Vec::new(),
                cursor: AtomicUsize::new(0),
            });
            entry.replies.extend(record.replies);
        }
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ModelBackend for ScriptedBackend {
    fn invoke(&self, request: &ModelRequest) -> Result<String, GatewayError> {
        let key = scripted_key(request);
        let Some(entry) = self.entries.get(&key) else {
            return Err(GatewayError::ScriptMiss { key });
        };
        let i = entry.cursor.fetch_add(1, Ordering::SeqCst);
        entry
            .replies
            .get(i)
            .cloned()
            .ok_or(GatewayError::ScriptMiss { key })
    }
}

/// Backend driven by a closure; handy for rule-based doubles.
pub struct FnBackend<F> {
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&ModelRequest) -> Result<String, GatewayError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F> ModelBackend for FnBackend<F>
where
    F: Fn(&ModelRequest) -> Result<String, GatewayError> + Send + Sync,
{
    fn invoke(&self, request: &ModelRequest) -> Result<String, GatewayError> {
        (self.f)(request)
    }
}
