//! Entropy, mutual information and correlation.
//!
//! Everything is in nats. The MI estimate for a template is
//! `H(mean of conditionals) - mean(H(conditional))` over the sampled
//! instances, which is non-negative by concavity of entropy.

use std::collections::BTreeSet;
use std::sync::Arc;

use thiserror::Error;

use crate::types::{LabelDistribution, LabelMode};

/// Rounding slack below zero that is still reported as MI = 0.
pub const MI_NEGATIVE_SLACK: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum InfoError {
    #[error("distributions are defined over different label spaces")]
    MismatchedSpaces,
    #[error("at least one distribution is required")]
    Empty,
    #[error("mutual information came out at {0}, below rounding slack")]
    NegativeMi(f64),
    #[error("inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("one of the inputs has zero variance")]
    DegenerateVariance,
}

/// Pairwise (cascade) summation; error grows as O(log n) instead of O(n).
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

fn plogp(p: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * p.ln()
    }
}

fn entropy_of(probs: &[f64]) -> f64 {
    let terms: Vec<f64> = probs.iter().map(|&p| plogp(p)).collect();
    let h = -pairwise_sum(&terms);
    // -0.0 and tiny negatives from rounding on one-hots
    h.max(0.0)
}

pub fn entropy(dist: &LabelDistribution) -> f64 {
    entropy_of(dist.probs())
}

fn check_shared(dists: &[LabelDistribution]) -> Result<(), InfoError> {
    let first = dists.first().ok_or(InfoError::Empty)?;
    if dists.iter().any(|d| !d.same_support(first)) {
        return Err(InfoError::MismatchedSpaces);
    }
    Ok(())
}

/// Elementwise mean of distributions sharing a support.
pub fn mean_distribution(dists: &[LabelDistribution]) -> Result<LabelDistribution, InfoError> {
    check_shared(dists)?;
    let first = &dists[0];
    if dists.len() == 1 {
        // avoid renormalization drift: the mean of one is itself
        return Ok(first.clone());
    }
    let n = dists.len() as f64;
    let mut column = Vec::with_capacity(dists.len());
    let mean: Vec<f64> = (0..first.probs().len())
        .map(|j| {
            column.clear();
            column.extend(dists.iter().map(|d| d.probs()[j]));
            pairwise_sum(&column) / n
        })
        .collect();
    LabelDistribution::from_masses(first.shared_labels().clone(), first.mode(), &mean)
        .map_err(|_| InfoError::MismatchedSpaces)
}

pub fn marginal_entropy(dists: &[LabelDistribution]) -> Result<f64, InfoError> {
    Ok(entropy(&mean_distribution(dists)?))
}

pub fn conditional_entropy(dists: &[LabelDistribution]) -> Result<f64, InfoError> {
    check_shared(dists)?;
    let hs: Vec<f64> = dists.iter().map(entropy).collect();
    Ok(pairwise_sum(&hs) / dists.len() as f64)
}

/// Marginal entropy, conditional entropy and MI, with `mi == marginal -
/// conditional` exactly. Rounding-level negatives are folded into
/// `conditional = marginal`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyDecomposition {
    pub marginal: f64,
    pub conditional: f64,
    pub mi: f64,
}

pub fn decompose(dists: &[LabelDistribution]) -> Result<EntropyDecomposition, InfoError> {
    let marginal = marginal_entropy(dists)?;
    let mut conditional = conditional_entropy(dists)?;
    let mut mi = marginal - conditional;
    if mi < 0.0 {
        if mi < -MI_NEGATIVE_SLACK {
            return Err(InfoError::NegativeMi(mi));
        }
        conditional = marginal;
        mi = 0.0;
    }
    Ok(EntropyDecomposition { marginal, conditional, mi })
}

pub fn mutual_information(dists: &[LabelDistribution]) -> Result<f64, InfoError> {
    decompose(dists).map(|d| d.mi)
}

/// Re-expresses open-vocabulary distributions over the sorted union of their
/// supports, so they can be averaged. Closed distributions must already agree.
pub fn align_to_union(dists: &[LabelDistribution]) -> Result<Vec<LabelDistribution>, InfoError> {
    let first = dists.first().ok_or(InfoError::Empty)?;
    if dists.iter().all(|d| d.same_support(first)) {
        return Ok(dists.to_vec());
    }
    if dists.iter().any(|d| d.mode() != LabelMode::Open) {
        return Err(InfoError::MismatchedSpaces);
    }
    let union: BTreeSet<&String> = dists.iter().flat_map(|d| d.labels()).collect();
    let labels: Arc<[String]> = union.into_iter().cloned().collect::<Vec<_>>().into();
    dists
        .iter()
        .map(|d| {
            let mut probs = vec![0.0; labels.len()];
            for (label, &p) in d.labels().iter().zip(d.probs()) {
                let idx = labels.binary_search(label).expect("label is in the union");
                probs[idx] = p;
            }
            LabelDistribution::new(labels.clone(), LabelMode::Open, probs)
                .map_err(|_| InfoError::MismatchedSpaces)
        })
        .collect()
}

/// Sample Pearson correlation coefficient.
pub fn pearson_r(xs: &[f64], ys: &[f64]) -> Result<f64, InfoError> {
    if xs.len() != ys.len() {
        return Err(InfoError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(InfoError::TooFewPoints(xs.len()));
    }
    let n = xs.len() as f64;
    let mx = pairwise_sum(xs) / n;
    let my = pairwise_sum(ys) / n;
    let dx: Vec<f64> = xs.iter().map(|x| x - mx).collect();
    let dy: Vec<f64> = ys.iter().map(|y| y - my).collect();
    let sxy = pairwise_sum(&dx.iter().zip(&dy).map(|(a, b)| a * b).collect::<Vec<_>>());
    let sxx = pairwise_sum(&dx.iter().map(|a| a * a).collect::<Vec<_>>());
    let syy = pairwise_sum(&dy.iter().map(|b| b * b).collect::<Vec<_>>());
    if sxx == 0.0 || syy == 0.0 {
        return Err(InfoError::DegenerateVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
