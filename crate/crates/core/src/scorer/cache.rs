//! Append-only on-disk cache of backend answers.
//!
//! One JSON object per line: `{"key": "<sha256 hex>", "logprobs": [..]}` or
//! `{"key": .., "likelihood": {"logprob": .., "num_tokens": ..}}`. A `null`
//! log-probability stands for negative infinity. Later lines win.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backend::Likelihood;
use crate::error::DataError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Entry {
    Options { key: String, logprobs: Vec<Option<f64>> },
    Likelihood { key: String, likelihood: Likelihood },
}

#[derive(Debug, Clone, PartialEq)]
pub enum CachedAnswer {
    Logprobs(Vec<f64>),
    Likelihood(Likelihood),
}

/// Builds a cache key from length-prefixed parts so that no two part lists
/// share a byte stream.
#[derive(Default)]
pub struct CacheKey(Sha256);

impl CacheKey {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn part(mut self, s: &str) -> Self {
        self.0.update((s.len() as u64).to_le_bytes());
        self.0.update(s.as_bytes());
        self
    }

    pub fn finish(self) -> String {
        self.0
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub struct ScoreCache {
    path: PathBuf,
    entries: RwLock<HashMap<String, CachedAnswer>>,
    writer: Mutex<BufWriter<File>>,
}

impl ScoreCache {
    /// Opens (or creates) the cache at `path` and loads its entries.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| DataError::io(&path, e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| DataError::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: Entry = serde_json::from_str(&line).map_err(|e| DataError::Malformed {
                    path: path.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                let (key, answer) = match entry {
                    Entry::Options { key, logprobs } => (
                        key,
                        CachedAnswer::Logprobs(
                            logprobs.into_iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect(),
                        ),
                    ),
                    Entry::Likelihood { key, likelihood } => (key, CachedAnswer::Likelihood(likelihood)),
                };
                entries.insert(key, answer);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| DataError::io(&path, e))?;
        Ok(ScoreCache {
            path,
            entries: RwLock::new(entries),
            writer: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<CachedAnswer> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    pub fn insert(&self, key: String, answer: CachedAnswer) -> Result<(), DataError> {
        let entry = match &answer {
            CachedAnswer::Logprobs(lp) => Entry::Options {
                key: key.clone(),
                logprobs: lp.iter().map(|x| x.is_finite().then_some(*x)).collect(),
            },
            CachedAnswer::Likelihood(l) => Entry::Likelihood {
                key: key.clone(),
                likelihood: *l,
            },
        };
        let line = serde_json::to_string(&entry).expect("cache entries serialize");
        {
            let mut w = self.writer.lock().expect("cache writer lock");
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| DataError::io(&self.path, e))?;
        }
        self.entries.write().expect("cache lock").insert(key, answer);
        Ok(())
    }
}
