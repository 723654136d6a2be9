//! Completion-API client. One POST per prompt asking for a single generated
//! token with `top_k` alternatives; responses go through the cache.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use chrono::Utc;
use serde_json::{json, Value};

use super::{prompt_hash, Backend, BackendDescriptor, BackendError, BackendKind, CacheEntry, CacheKey, ResponseCache};
use crate::types::TokenTopK;

pub struct RemoteBackend {
    desc: BackendDescriptor,
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    cache: Arc<ResponseCache>,
    requests: AtomicUsize,
}

impl RemoteBackend {
    pub fn new(desc: BackendDescriptor, cache: Arc<ResponseCache>) -> Result<Self, BackendError> {
        desc.validate()?;
        if desc.kind != BackendKind::Remote {
            return Err(BackendError::Config("descriptor is not a remote backend".into()));
        }
        let endpoint = desc.endpoint.clone().unwrap_or_default();
        let api_key = match &desc.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| BackendError::MissingCredential(var.clone()))?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(desc.request_timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { desc, endpoint, api_key, agent, cache, requests: AtomicUsize::new(0) })
    }

    pub fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }

    /// Number of HTTP requests issued so far (cache hits excluded).
    pub fn network_requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.desc.id,
            "prompt": prompt,
            "max_tokens": 1,
            "logprobs": self.desc.top_k,
            "temperature": 0,
        })
    }

    fn fetch(&self, prompt: &str, hash: &str) -> Result<TokenTopK, BackendError> {
        let body = self.request_body(prompt);
        let mut attempt: u32 = 0;
        loop {
            self.requests.fetch_add(1, Ordering::SeqCst);
            let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            let mut resp = req.send_json(&body).map_err(|e| BackendError::Transport(e.to_string()))?;
            let status = resp.status().as_u16();
            let text = resp
                .body_mut()
                .read_to_string()
                .map_err(|e| BackendError::Transport(e.to_string()))?;
            match status {
                200..=299 => return parse_completion_response(&text, hash.to_string()),
                429 => {
                    if attempt >= self.desc.max_retries {
                        return Err(BackendError::RateLimited { attempts: attempt + 1 });
                    }
                    thread::sleep(self.desc.backoff_base * 2u32.saturating_pow(attempt));
                    attempt += 1;
                }
                _ => return Err(BackendError::Http { status, body: text }),
            }
        }
    }
}

impl Backend for RemoteBackend {
    fn id(&self) -> &str {
        &self.desc.id
    }

    fn top_k(&self) -> usize {
        self.desc.top_k
    }

    fn max_parallel(&self) -> usize {
        self.desc.max_parallel
    }

    fn query(&self, prompt: &str) -> Result<TokenTopK, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let hash = prompt_hash(prompt);
        let key = CacheKey { backend_id: self.desc.id.clone(), prompt_hash: hash.clone(), top_k: self.desc.top_k };
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit);
        }
        let response = self.fetch(prompt, &hash)?;
        self.cache.put(CacheEntry {
            backend_id: key.backend_id,
            prompt_hash: key.prompt_hash,
            top_k: key.top_k,
            response: response.clone(),
            fetched_at: Utc::now(),
        })?;
        Ok(response)
    }
}

// Providers occasionally report the top token at a hair above zero.
const POSITIVE_LOGPROB_SLACK: f64 = 1e-6;

/// Parses `choices[0].logprobs.top_logprobs[0]`, which is either a
/// token -> logprob object or a list of `{token, logprob}` objects. Entries
/// come back most probable first.
pub fn parse_completion_response(body: &str, prompt_hash: String) -> Result<TokenTopK, BackendError> {
    let malformed = |m: &str| BackendError::MalformedResponse(m.to_string());
    let v: Value = serde_json::from_str(body).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
    let first = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| malformed("missing choices[0]"))?;
    let top = first
        .get("logprobs")
        .filter(|l| !l.is_null())
        .ok_or_else(|| malformed("missing logprobs"))?
        .get("top_logprobs")
        .and_then(|t| t.get(0))
        .ok_or_else(|| malformed("missing top_logprobs[0]"))?;

    let mut entries: Vec<(String, f64)> = match top {
        Value::Object(map) => map
            .iter()
            .map(|(tok, lp)| lp.as_f64().map(|lp| (tok.clone(), lp)).ok_or_else(|| malformed("non-numeric logprob")))
            .collect::<Result<_, _>>()?,
        Value::Array(items) => items
            .iter()
            .map(|item| {
                let tok = item.get("token").and_then(Value::as_str);
                let lp = item.get("logprob").and_then(Value::as_f64);
                match (tok, lp) {
                    (Some(t), Some(lp)) => Ok((t.to_string(), lp)),
                    _ => Err(malformed("top_logprobs item lacks token/logprob")),
                }
            })
            .collect::<Result<_, _>>()?,
        _ => return Err(malformed("top_logprobs[0] is neither an object nor a list")),
    };
    for (_, lp) in entries.iter_mut() {
        if *lp > 0.0 && *lp <= POSITIVE_LOGPROB_SLACK {
            *lp = 0.0;
        }
    }
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    TokenTopK::new(entries, prompt_hash).map_err(|e| BackendError::MalformedResponse(e.to_string()))
}
