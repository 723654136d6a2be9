//! The language-model side of the pipeline: prompt rendering and backends
//! that return top-k next-token log-probabilities.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::types::{InstanceRecord, TemplateSpec, TokenTopK};

mod cache;
mod mock;
mod playground;
mod remote;

pub use cache::{decode_entry, encode_entry, CacheEntry, CacheKey, ResponseCache};
pub use mock::MockBackend;
pub use playground::{playground_check, PlaygroundReport, DEFAULT_MASS_THRESHOLD, DEFAULT_SAMPLE_SIZE};
pub use remote::{parse_completion_response, RemoteBackend};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("no fixture entry for prompt {prompt_hash}")]
    FixtureMiss { prompt_hash: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
    #[error("cache: {0}")]
    Cache(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("instance has no field {0:?}")]
    MissingField(String),
}

/// g: prompt in, top-k next-token logprobs out.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn top_k(&self) -> usize;
    /// Maximum in-flight queries the backend wants.
    fn max_parallel(&self) -> usize {
        1
    }
    fn query(&self, prompt: &str) -> Result<TokenTopK, BackendError>;
}

pub fn query_logprobs(backend: &dyn Backend, prompt: &str) -> Result<TokenTopK, BackendError> {
    if prompt.is_empty() {
        return Err(BackendError::EmptyPrompt);
    }
    backend.query(prompt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Remote,
}

pub const DEFAULT_TOP_K: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub id: String,
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub top_k: usize,
    #[serde(with = "duration_ms")]
    pub request_timeout: Duration,
    pub max_parallel: usize,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub max_retries: u32,
    #[serde(with = "duration_ms")]
    pub backoff_base: Duration,
}

impl BackendDescriptor {
    pub fn mock(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind: BackendKind::Mock,
            endpoint: None,
            top_k: DEFAULT_TOP_K,
            request_timeout: Duration::from_secs(60),
            max_parallel: 1,
            api_key_env: None,
            max_retries: 5,
            backoff_base: Duration::from_millis(500),
        }
    }

    pub fn remote(id: impl Into<String>, endpoint: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Remote,
            endpoint: Some(endpoint.into()),
            max_parallel: 4,
            ..Self::mock(id)
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.top_k == 0 {
            return Err(BackendError::Config("top_k must be at least 1".into()));
        }
        if self.max_parallel == 0 {
            return Err(BackendError::Config("max_parallel must be at least 1".into()));
        }
        if self.kind == BackendKind::Remote && self.endpoint.is_none() {
            return Err(BackendError::Config("remote backend requires an endpoint".into()));
        }
        Ok(())
    }

    /// A top-k shallower than the label count can hide whole labels.
    pub fn top_k_warning(&self, label_count: usize) -> Option<String> {
        (self.top_k < label_count).then(|| {
            format!("top_k {} is smaller than the {label_count} labels; some labels may never be observed", self.top_k)
        })
    }
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

/// SHA-256 of the rendered prompt, hex encoded.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

enum Piece<'a> {
    Text(&'a str),
    Field(&'a str),
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Splits a scaffold into literal text and `{name}` placeholders. `{{` and
/// `}}` are escaped braces; a brace that does not open a well-formed
/// placeholder is kept literally.
fn pieces(scaffold: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let bytes = scaffold.as_bytes();
    let mut i = 0;
    let mut start = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                out.push(Piece::Text(&scaffold[start..=i]));
                i += 2;
                start = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                out.push(Piece::Text(&scaffold[start..=i]));
                i += 2;
                start = i;
            }
            b'{' => {
                let rest = &scaffold[i + 1..];
                let len = rest.find(|c: char| !is_ident_char(c)).unwrap_or(rest.len());
                if len > 0 && rest[len..].starts_with('}') {
                    out.push(Piece::Text(&scaffold[start..i]));
                    out.push(Piece::Field(&rest[..len]));
                    i += len + 2;
                    start = i;
                } else {
                    i += 1;
                }
            }
            _ => i += 1,
        }
    }
    out.push(Piece::Text(&scaffold[start..]));
    out
}

/// Placeholder names in order of appearance (repeats included).
pub fn placeholders(scaffold: &str) -> Vec<String> {
    pieces(scaffold)
        .into_iter()
        .filter_map(|p| match p {
            Piece::Field(name) => Some(name.to_string()),
            Piece::Text(_) => None,
        })
        .collect()
}

/// Substitutes instance fields into the scaffold. Everything else is copied
/// byte for byte.
pub fn render_prompt(template: &TemplateSpec, instance: &InstanceRecord) -> Result<String, RenderError> {
    let mut out = String::with_capacity(template.scaffold.len());
    for piece in pieces(&template.scaffold) {
        match piece {
            Piece::Text(t) => out.push_str(t),
            Piece::Field(name) => {
                let value = instance
                    .fields
                    .get(name)
                    .ok_or_else(|| RenderError::MissingField(name.to_string()))?;
                out.push_str(value);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(fields: &[(&str, &str)]) -> InstanceRecord {
        InstanceRecord {
            id: "0".into(),
            fields: fields.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            gold: None,
        }
    }

    #[test]
    fn direct_substitution() {
        let t = TemplateSpec::new(1, "Q: {q}\nA:");
        assert_eq!(render_prompt(&t, &inst(&[("q", "2+2?")])).unwrap(), "Q: 2+2?\nA:");
    }

    #[test]
    fn boolq_style_scaffold() {
        let t = TemplateSpec::new(
            2,
            "Passage: \"Turn on red -- ...\"\nQuestion: \"Can you turn left on red in canada?\"\nAnswer: \"Yes\"\n\n\
             Passage: \"{passage}\"\nQuestion: \"{question}\"\nAnswer: \"",
        );
        let p = render_prompt(
            &t,
            &inst(&[
                ("passage", "Pyruvic acid -- Pyruvic acid (CHCOCOOH) is the simplest of the alpha-keto acids."),
                ("question", "Is pyruvic acid and pyruvate the same thing?"),
            ]),
        )
        .unwrap();
        assert!(p.ends_with("Question: \"Is pyruvic acid and pyruvate the same thing?\"\nAnswer: \""));
        assert!(p.contains("Passage: \"Pyruvic acid -- "));
    }

    #[test]
    fn missing_field() {
        let t = TemplateSpec::new(1, "x {missing} y");
        assert_eq!(render_prompt(&t, &inst(&[])), Err(RenderError::MissingField("missing".into())));
    }

    #[test]
    fn braces_and_whitespace_preserved() {
        let t = TemplateSpec::new(1, "{'True': ['yes']} {{q}} {q}  \r\n{ not} {}");
        assert_eq!(placeholders(&t.scaffold), vec!["q"]);
        assert_eq!(
            render_prompt(&t, &inst(&[("q", " v ")])).unwrap(),
            "{'True': ['yes']} {q}  v   \r\n{ not} {}"
        );
    }

    #[test]
    fn unicode_scaffold() {
        let t = TemplateSpec::new(1, "É {x} ü");
        assert_eq!(render_prompt(&t, &inst(&[("x", "→")])).unwrap(), "É → ü");
    }

    #[test]
    fn descriptor_validation() {
        let mut d = BackendDescriptor::remote("m", "http://x");
        assert!(d.validate().is_ok());
        d.endpoint = None;
        assert!(d.validate().is_err());
        let mut m = BackendDescriptor::mock("m");
        assert!(m.top_k_warning(2).is_none());
        m.top_k = 1;
        assert!(m.top_k_warning(2).is_some());
    }

    #[test]
    fn hash_is_256_bit_hex() {
        let h = prompt_hash("P");
        assert_eq!(h.len(), 64);
        assert_ne!(h, prompt_hash("P "));
    }
}
