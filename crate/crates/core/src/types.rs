//! Domain types shared by every stage of the pipeline.
//!
//! A run takes K [`TemplateSpec`]s, renders each [`InstanceRecord`] through
//! every template, asks a backend for the next-token [`TokenTopK`], collapses
//! that into a [`LabelDistribution`] and reduces the per-instance
//! distributions into one [`TemplateStats`] per template.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for the sum-to-one invariant of every distribution.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// An explicit, ordered label list with a collapsing map per template.
    Closed,
    /// No collapsing map: the observed (normalized) tokens are the labels.
    Open,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("templates: at least one template is required")]
    EmptyTemplates,
    #[error("ensemble_p: {p} exceeds the number of templates ({k})")]
    EnsembleTooLarge { p: usize, k: usize },
    #[error("ensemble_p: must be at least 1")]
    EnsembleTooSmall,
    #[error("n: instance budget must be at least 1")]
    ZeroBudget,
    #[error("top_k: must be at least 1")]
    ZeroTopK,
    #[error("labels: duplicate label {0:?}")]
    DuplicateLabels(String),
    #[error("labels: empty label identifier")]
    EmptyLabel,
    #[error("labels: open mode must not declare labels")]
    OpenWithLabels,
    #[error("labels: closed mode needs at least one label")]
    ClosedWithoutLabels,
    #[error("template {id}: {reason}")]
    Template { id: u32, reason: String },
}

/// The target space Y.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    labels: Vec<String>,
    mode: LabelMode,
}

impl LabelSpace {
    pub fn closed<I, S>(labels: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(ConfigError::ClosedWithoutLabels);
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if l.is_empty() {
                return Err(ConfigError::EmptyLabel);
            }
            if !seen.insert(l.as_str()) {
                return Err(ConfigError::DuplicateLabels(l.clone()));
            }
        }
        Ok(Self { labels, mode: LabelMode::Closed })
    }

    pub fn open() -> Self {
        Self { labels: Vec::new(), mode: LabelMode::Open }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn mode(&self) -> LabelMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DistributionError {
    #[error("probabilities and labels differ in length ({probs} vs {labels})")]
    LengthMismatch { probs: usize, labels: usize },
    #[error("probability {0} is negative or not finite")]
    InvalidProbability(f64),
    #[error("probabilities sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("distribution has no support")]
    Empty,
}

/// P(Y | f(x)) over a finite support.
///
/// In closed mode the support is the run's label list; in open mode it is the
/// set of normalized tokens observed for one response (or a union of them).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    labels: Arc<[String]>,
    mode: LabelMode,
    probs: Vec<f64>,
}

impl LabelDistribution {
    pub fn new(
        labels: Arc<[String]>,
        mode: LabelMode,
        probs: Vec<f64>,
    ) -> Result<Self, DistributionError> {
        if probs.len() != labels.len() {
            return Err(DistributionError::LengthMismatch {
                probs: probs.len(),
                labels: labels.len(),
            });
        }
        if probs.is_empty() {
            return Err(DistributionError::Empty);
        }
        if let Some(&bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(DistributionError::InvalidProbability(bad));
        }
        let total = crate::infotheory::pairwise_sum(&probs);
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(DistributionError::NotNormalized(total));
        }
        Ok(Self { labels, mode, probs })
    }

    /// Builds a distribution from non-negative masses by dividing through by
    /// their total.
    pub fn from_masses(
        labels: Arc<[String]>,
        mode: LabelMode,
        masses: &[f64],
    ) -> Result<Self, DistributionError> {
        let total = crate::infotheory::pairwise_sum(masses);
        if !(total > 0.0) || !total.is_finite() {
            return Err(DistributionError::NotNormalized(total));
        }
        Self::new(labels, mode, masses.iter().map(|m| m / total).collect())
    }

    /// Convenience constructor for a closed-mode distribution over `space`.
    pub fn closed(space: &LabelSpace, probs: Vec<f64>) -> Result<Self, DistributionError> {
        Self::new(space.labels.clone().into(), LabelMode::Closed, probs)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn shared_labels(&self) -> &Arc<[String]> {
        &self.labels
    }

    pub fn mode(&self) -> LabelMode {
        self.mode
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob_of(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.probs[i])
    }

    /// Index of the most probable label; ties go to the earliest label.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn argmax_label(&self) -> &str {
        &self.labels[self.argmax()]
    }

    pub fn same_support(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.labels, &other.labels) || self.labels == other.labels
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TokenError {
    #[error("duplicate token {0:?} in one response")]
    DuplicateToken(String),
    #[error("token {token:?} has logprob {logprob}, expected a finite value <= 0")]
    InvalidLogprob { token: String, logprob: f64 },
    #[error("response carries no tokens")]
    Empty,
}

/// Top-k next-token log-probabilities (natural log) for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTopK {
    entries: Vec<(String, f64)>,
    prompt_hash: String,
}

impl TokenTopK {
    pub fn new(entries: Vec<(String, f64)>, prompt_hash: String) -> Result<Self, TokenError> {
        if entries.is_empty() {
            return Err(TokenError::Empty);
        }
        let mut seen = HashSet::new();
        for (token, logprob) in &entries {
            if !logprob.is_finite() || *logprob > 0.0 {
                return Err(TokenError::InvalidLogprob { token: token.clone(), logprob: *logprob });
            }
            if !seen.insert(token.as_str()) {
                return Err(TokenError::DuplicateToken(token.clone()));
            }
        }
        Ok(Self { entries, prompt_hash })
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn prompt_hash(&self) -> &str {
        &self.prompt_hash
    }
}

/// A templatizing function plus its optional collapsing map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub id: u32,
    pub scaffold: String,
    /// label -> answer strings; `None` means open vocabulary.
    pub collapsing_map: Option<BTreeMap<String, Vec<String>>>,
    /// Static exemplar text, already part of `scaffold`; kept for reporting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub few_shot_block: Option<String>,
}

impl TemplateSpec {
    pub fn new(id: u32, scaffold: impl Into<String>) -> Self {
        Self { id, scaffold: scaffold.into(), collapsing_map: None, few_shot_block: None }
    }

    pub fn with_map<I, L, A>(mut self, map: I) -> Self
    where
        I: IntoIterator<Item = (L, Vec<A>)>,
        L: Into<String>,
        A: Into<String>,
    {
        self.collapsing_map = Some(
            map.into_iter()
                .map(|(l, answers)| (l.into(), answers.into_iter().map(Into::into).collect()))
                .collect(),
        );
        self
    }

    pub fn mode(&self) -> LabelMode {
        if self.collapsing_map.is_some() {
            LabelMode::Closed
        } else {
            LabelMode::Open
        }
    }

    /// Placeholder names in order of appearance.
    pub fn placeholders(&self) -> Vec<String> {
        crate::backend::placeholders(&self.scaffold)
    }

    fn check(&self, space: &LabelSpace) -> Result<(), ConfigError> {
        let fail = |reason: String| ConfigError::Template { id: self.id, reason };
        let names = self.placeholders();
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(fail(format!("placeholder {{{n}}} appears more than once")));
            }
        }
        match (&self.collapsing_map, space.mode()) {
            (None, LabelMode::Open) => Ok(()),
            (None, LabelMode::Closed) => Err(fail("closed label space needs a collapsing map".into())),
            (Some(_), LabelMode::Open) => {
                Err(fail("open label space must not carry a collapsing map".into()))
            }
            (Some(map), LabelMode::Closed) => {
                for key in map.keys() {
                    if space.index_of(key).is_none() {
                        return Err(fail(format!("collapsing map names unknown label {key:?}")));
                    }
                }
                for label in space.labels() {
                    let has_answer = map
                        .get(label)
                        .is_some_and(|a| a.iter().any(|s| !crate::collapse::normalize_token(s).is_empty()));
                    if !has_answer {
                        return Err(fail(format!("label {label:?} has no answer string")));
                    }
                }
                Ok(())
            }
        }
    }
}

/// One raw dataset instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub fields: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
}

/// Per-template result of an estimation run. All entropies in nats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateStats {
    pub template_id: u32,
    pub mi: f64,
    pub marginal_entropy: f64,
    pub conditional_entropy: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default)]
    pub skipped: usize,
}

impl TemplateStats {
    /// Stats for a template with entropies already computed; `mi` is derived
    /// so that `mi == marginal - conditional` holds bit for bit.
    pub fn from_entropies(template_id: u32, marginal: f64, conditional: f64, n: usize) -> Self {
        Self {
            template_id,
            mi: marginal - conditional,
            marginal_entropy: marginal,
            conditional_entropy: conditional,
            n,
            accuracy: None,
            skipped: 0,
        }
    }

    /// Stats carrying only a published MI value (fixture replay).
    pub fn from_mi(template_id: u32, mi: f64) -> Self {
        Self::from_entropies(template_id, mi, 0.0, 0)
    }

    pub fn with_accuracy(mut self, accuracy: f64) -> Self {
        self.accuracy = Some(accuracy);
        self
    }

    /// More than half of the attempted instances failed to collapse.
    pub fn failed_playground(&self) -> bool {
        let attempted = self.n + self.skipped;
        attempted > 0 && self.skipped * 2 > attempted
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub templates: Vec<TemplateSpec>,
    pub n: usize,
    pub seed: u64,
    pub backend_id: String,
    pub top_k: usize,
    pub ensemble_p: usize,
}

impl RunConfig {
    /// Union of placeholder names across templates; every instance must
    /// provide all of them.
    pub fn required_fields(&self) -> BTreeSet<String> {
        self.templates
            .iter()
            .flat_map(|t| t.placeholders())
            .collect()
    }
}

pub fn validate_run_config(cfg: RunConfig, space: &LabelSpace) -> Result<RunConfig, ConfigError> {
    if cfg.templates.is_empty() {
        return Err(ConfigError::EmptyTemplates);
    }
    if cfg.ensemble_p == 0 {
        return Err(ConfigError::EnsembleTooSmall);
    }
    if cfg.ensemble_p > cfg.templates.len() {
        return Err(ConfigError::EnsembleTooLarge { p: cfg.ensemble_p, k: cfg.templates.len() });
    }
    if cfg.n == 0 {
        return Err(ConfigError::ZeroBudget);
    }
    if cfg.top_k == 0 {
        return Err(ConfigError::ZeroTopK);
    }
    // LabelSpace constructors already enforce these; a deserialized space
    // bypasses them.
    match space.mode() {
        LabelMode::Open if !space.is_empty() => return Err(ConfigError::OpenWithLabels),
        LabelMode::Closed => {
            LabelSpace::closed(space.labels().iter().cloned())?;
        }
        LabelMode::Open => {}
    }
    let mut ids = HashSet::new();
    for t in &cfg.templates {
        if !ids.insert(t.id) {
            return Err(ConfigError::Template { id: t.id, reason: "duplicate template id".into() });
        }
        t.check(space)?;
    }
    Ok(cfg)
}
