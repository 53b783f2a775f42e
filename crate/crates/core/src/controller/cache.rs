use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ParameterizedActionSequence, Skill, SymbolicStep};
use crate::text::collapse_whitespace;

/// Cache key of a sub-task prompt: trimmed, whitespace runs collapsed, case kept.
pub fn canonical_prompt(prompt: &str) -> String {
    collapse_whitespace(prompt)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cache store failed: {0}")]
pub struct StoreError(pub String);

/// Where parameterized sequences are looked up and stored.
pub trait ActionStore {
    /// Exact match on the canonical form of `prompt`; updates the counters.
    fn lookup(&mut self, prompt: &str) -> Option<ParameterizedActionSequence>;

    /// Inserts or replaces the entry for the canonical form of `prompt`.
    fn store(&mut self, prompt: &str, seq: ParameterizedActionSequence) -> Result<(), StoreError>;

    fn hit_count(&self) -> u64;

    fn miss_count(&self) -> u64;
}

/// One entry of the cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub prompt: String,
    pub skill_name: Skill,
    pub steps: Vec<SymbolicStep>,
}

/// In-memory exact-match cache of parameterized action sequences.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActionCache {
    entries: BTreeMap<String, ParameterizedActionSequence>,
    hit_count: u64,
    miss_count: u64,
}

impl ActionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records<I: IntoIterator<Item = CacheRecord>>(records: I) -> Self {
        let mut cache = Self::new();
        for r in records {
            cache.insert(
                &r.prompt,
                ParameterizedActionSequence {
                    skill_name: r.skill_name,
                    steps: r.steps,
                },
            );
        }
        cache
    }

    pub fn records(&self) -> Vec<CacheRecord> {
        self.entries
            .iter()
            .map(|(prompt, seq)| CacheRecord {
                prompt: prompt.clone(),
                skill_name: seq.skill_name,
                steps: seq.steps.clone(),
            })
            .collect()
    }

    pub fn insert(&mut self, prompt: &str, seq: ParameterizedActionSequence) {
        self.entries.insert(canonical_prompt(prompt), seq);
    }

    /// Lookup without touching the counters.
    pub fn peek(&self, prompt: &str) -> Option<&ParameterizedActionSequence> {
        self.entries.get(&canonical_prompt(prompt))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }

    pub fn prompts(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

impl ActionStore for ActionCache {
    fn lookup(&mut self, prompt: &str) -> Option<ParameterizedActionSequence> {
        match self.entries.get(&canonical_prompt(prompt)) {
            Some(seq) => {
                self.hit_count += 1;
                Some(seq.clone())
            }
            None => {
                self.miss_count += 1;
                None
            }
        }
    }

    fn store(&mut self, prompt: &str, seq: ParameterizedActionSequence) -> Result<(), StoreError> {
        self.insert(prompt, seq);
        Ok(())
    }

    fn hit_count(&self) -> u64 {
        self.hit_count
    }

    fn miss_count(&self) -> u64 {
        self.miss_count
    }
}
