use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{prompt_hash, Backend, BackendError, DEFAULT_TOP_K};
use crate::types::TokenTopK;

/// Deterministic backend answering from a prompt -> logprobs table.
#[derive(Debug, Clone)]
pub struct MockBackend {
    id: String,
    top_k: usize,
    table: HashMap<String, Vec<(String, f64)>>,
}

/// One line of a mock table file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRow {
    pub prompt: String,
    pub entries: Vec<(String, f64)>,
}

impl MockBackend {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into(), top_k: DEFAULT_TOP_K, table: HashMap::new() }
    }

    pub fn with_top_k(mut self, top_k: usize) -> Self {
        self.top_k = top_k;
        self
    }

    pub fn insert(&mut self, prompt: impl Into<String>, entries: Vec<(String, f64)>) {
        self.table.insert(prompt.into(), entries);
    }

    /// Registers a response given as plain probabilities.
    pub fn insert_probs(&mut self, prompt: impl Into<String>, probs: &[(&str, f64)]) {
        self.insert(prompt, probs.iter().map(|(t, p)| (t.to_string(), p.ln())).collect());
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Reads a JSON-lines table: `{"prompt": ..., "entries": [[token, logprob], ...]}`.
    pub fn from_jsonl(id: impl Into<String>, path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("mock table {}: {e}", path.display())))?;
        let mut backend = Self::new(id);
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: MockRow = serde_json::from_str(line).map_err(|e| {
                BackendError::Config(format!("mock table {}:{}: {e}", path.display(), lineno + 1))
            })?;
            backend.insert(row.prompt, row.entries);
        }
        Ok(backend)
    }

    pub fn to_jsonl(&self) -> String {
        let mut prompts: Vec<&String> = self.table.keys().collect();
        prompts.sort();
        prompts
            .into_iter()
            .map(|p| {
                let row = MockRow { prompt: p.clone(), entries: self.table[p].clone() };
                serde_json::to_string(&row).expect("mock rows serialize") + "\n"
            })
            .collect()
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn top_k(&self) -> usize {
        self.top_k
    }

    fn query(&self, prompt: &str) -> Result<TokenTopK, BackendError> {
        let hash = prompt_hash(prompt);
        let entries = self
            .table
            .get(prompt)
            .ok_or_else(|| BackendError::FixtureMiss { prompt_hash: hash.clone() })?;
        // Mirror an API: most probable first, truncated to the requested depth.
        let mut entries = entries.clone();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1));
        entries.truncate(self.top_k);
        TokenTopK::new(entries, hash).map_err(|e| BackendError::MalformedResponse(e.to_string()))
    }
}
