//! The collapsing function: turns a backend's top-k token log-probabilities
//! into a distribution over task labels.
//!
//! A token counts toward a label when its normalized form (lowercased, outer
//! whitespace stripped) is a non-empty prefix of one of the label's answer
//! strings. Tokens the backend did not return carry no mass, and the matched
//! mass is renormalized.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::types::{LabelDistribution, LabelMode, LabelSpace, TemplateSpec, TokenTopK};

#[derive(Debug, Error, PartialEq)]
pub enum CollapseError {
    #[error("no returned token matched any label")]
    ZeroMass,
    #[error("token {token:?} prefixes answers of both {first:?} and {second:?}")]
    AmbiguousToken { token: String, first: String, second: String },
    #[error("closed label space needs a collapsing map")]
    MissingMap,
    #[error("collapsing map has no answers for label {0:?}")]
    MissingLabel(String),
}

pub fn normalize_token(raw: &str) -> String {
    raw.trim().to_lowercase()
}

/// `answer` must already be normalized.
pub fn matches_answer(token: &str, answer: &str) -> bool {
    let t = normalize_token(token);
    !t.is_empty() && answer.starts_with(&t)
}

/// The normalized answer variants for one label.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAnswer {
    pub label: String,
    pub variants: Vec<String>,
}

/// A collapsing map resolved against a label space, ready to apply.
#[derive(Debug, Clone)]
pub struct Collapser {
    labels: Arc<[String]>,
    answers: Vec<NormalizedAnswer>,
}

impl Collapser {
    pub fn new(
        map: &BTreeMap<String, Vec<String>>,
        space: &LabelSpace,
    ) -> Result<Self, CollapseError> {
        let mut answers = Vec::with_capacity(space.len());
        for label in space.labels() {
            let mut variants: Vec<String> = map
                .get(label)
                .into_iter()
                .flatten()
                .map(|a| normalize_token(a))
                .filter(|a| !a.is_empty())
                .collect();
            variants.dedup();
            if variants.is_empty() {
                return Err(CollapseError::MissingLabel(label.clone()));
            }
            answers.push(NormalizedAnswer { label: label.clone(), variants });
        }
        Ok(Self { labels: space.labels().to_vec().into(), answers })
    }

    pub fn answers(&self) -> &[NormalizedAnswer] {
        &self.answers
    }

    /// Index of the single label whose answers `token` prefixes, if any.
    fn label_for(&self, token: &str) -> Result<Option<usize>, CollapseError> {
        let norm = normalize_token(token);
        if norm.is_empty() {
            return Ok(None);
        }
        let mut hit: Option<usize> = None;
        for (i, ans) in self.answers.iter().enumerate() {
            if ans.variants.iter().any(|v| v.starts_with(&norm)) {
                if let Some(prev) = hit {
                    return Err(CollapseError::AmbiguousToken {
                        token: token.to_string(),
                        first: self.answers[prev].label.clone(),
                        second: ans.label.clone(),
                    });
                }
                hit = Some(i);
            }
        }
        Ok(hit)
    }

    pub fn apply(&self, topk: &TokenTopK) -> Result<Collapsed, CollapseError> {
        let mut mass = vec![0.0; self.answers.len()];
        for (token, logprob) in topk.entries() {
            if let Some(i) = self.label_for(token)? {
                mass[i] += logprob.exp();
            }
        }
        let matched: f64 = mass.iter().sum();
        if !(matched > 0.0) {
            return Err(CollapseError::ZeroMass);
        }
        let dist = LabelDistribution::from_masses(self.labels.clone(), LabelMode::Closed, &mass)
            .map_err(|_| CollapseError::ZeroMass)?;
        Ok(Collapsed { dist, matched_mass: matched })
    }
}

/// A collapsed response together with the raw mass that landed on labels
/// before renormalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Collapsed {
    pub dist: LabelDistribution,
    pub matched_mass: f64,
}

/// Open vocabulary: every returned token with a non-empty normalized form is
/// a label; case and whitespace variants merge. Support is sorted.
pub fn collapse_open(topk: &TokenTopK) -> Result<Collapsed, CollapseError> {
    let mut merged: BTreeMap<String, f64> = BTreeMap::new();
    for (token, logprob) in topk.entries() {
        let norm = normalize_token(token);
        if norm.is_empty() {
            continue;
        }
        *merged.entry(norm).or_insert(0.0) += logprob.exp();
    }
    let matched: f64 = merged.values().sum();
    if merged.is_empty() || !(matched > 0.0) {
        return Err(CollapseError::ZeroMass);
    }
    let labels: Arc<[String]> = merged.keys().cloned().collect::<Vec<_>>().into();
    let masses: Vec<f64> = merged.into_values().collect();
    let dist = LabelDistribution::from_masses(labels, LabelMode::Open, &masses)
        .map_err(|_| CollapseError::ZeroMass)?;
    Ok(Collapsed { dist, matched_mass: matched })
}

pub fn collapse_detailed(
    topk: &TokenTopK,
    map: Option<&BTreeMap<String, Vec<String>>>,
    space: &LabelSpace,
) -> Result<Collapsed, CollapseError> {
    match space.mode() {
        LabelMode::Open => collapse_open(topk),
        LabelMode::Closed => {
            let map = map.ok_or(CollapseError::MissingMap)?;
            Collapser::new(map, space)?.apply(topk)
        }
    }
}

pub fn collapse(
    topk: &TokenTopK,
    map: Option<&BTreeMap<String, Vec<String>>>,
    space: &LabelSpace,
) -> Result<LabelDistribution, CollapseError> {
    collapse_detailed(topk, map, space).map(|c| c.dist)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Conflict {
    pub first_label: String,
    pub first_variant: String,
    pub second_label: String,
    pub second_variant: String,
    pub reason: ConflictKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictKind {
    SameVariant,
    PrefixOf,
    SharedFirstWord,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetupCheck {
    pub template_id: u32,
    pub conflicts: Vec<Conflict>,
}

impl SetupCheck {
    pub fn passed(&self) -> bool {
        self.conflicts.is_empty()
    }
}

fn conflict_between(a: &str, b: &str) -> Option<ConflictKind> {
    if a == b {
        return Some(ConflictKind::SameVariant);
    }
    if a.starts_with(b) || b.starts_with(a) {
        return Some(ConflictKind::PrefixOf);
    }
    let first = |s: &str| s.split_whitespace().next().map(str::to_owned);
    match (first(a), first(b)) {
        (Some(x), Some(y)) if x == y => Some(ConflictKind::SharedFirstWord),
        _ => None,
    }
}

/// Checks that every label of every template can be told apart by its first
/// token. Templates without a map (open vocabulary) trivially pass.
pub fn validate_collapsing_setup(templates: &[TemplateSpec], space: &LabelSpace) -> Vec<SetupCheck> {
    templates
        .iter()
        .map(|t| {
            let mut conflicts = Vec::new();
            if let Some(map) = &t.collapsing_map {
                let labels: Vec<(&String, Vec<String>)> = space
                    .labels()
                    .iter()
                    .map(|l| {
                        let vs = map
                            .get(l)
                            .into_iter()
                            .flatten()
                            .map(|v| normalize_token(v))
                            .filter(|v| !v.is_empty())
                            .collect();
                        (l, vs)
                    })
                    .collect();
                for (i, (la, va)) in labels.iter().enumerate() {
                    for (lb, vb) in &labels[i + 1..] {
                        for a in va {
                            for b in vb {
                                if let Some(reason) = conflict_between(a, b) {
                                    conflicts.push(Conflict {
                                        first_label: (*la).clone(),
                                        first_variant: a.clone(),
                                        second_label: (*lb).clone(),
                                        second_variant: b.clone(),
                                        reason,
                                    });
                                }
                            }
                        }
                    }
                }
            }
            SetupCheck { template_id: t.id, conflicts }
        })
        .collect()
}
