//! Label-free sanity pass over a handful of instances: does each template
//! put its probability mass on the tokens the collapsing map expects?
//!
//! Gold labels are never read here.

use serde::Serialize;

use super::{query_logprobs, render_prompt, Backend};
use crate::collapse::{collapse_detailed, CollapseError};
use crate::error::PipelineError;
use crate::types::{InstanceRecord, LabelSpace, TemplateSpec};

pub const DEFAULT_SAMPLE_SIZE: usize = 5;
pub const DEFAULT_MASS_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaygroundReport {
    pub template_id: u32,
    pub sampled: usize,
    /// Fraction of sampled instances whose collapse found some matching token.
    pub success_rate: f64,
    /// Mean raw probability landing on label tokens, before renormalization.
    /// Failed collapses contribute zero.
    pub mean_matched_mass: f64,
    pub passed: bool,
}

pub fn playground_check(
    backend: &dyn Backend,
    templates: &[TemplateSpec],
    sample: &[InstanceRecord],
    space: &LabelSpace,
    threshold: f64,
) -> Result<Vec<PlaygroundReport>, PipelineError> {
    if sample.is_empty() {
        return Err(PipelineError::EmptySample);
    }
    let mut reports = Vec::with_capacity(templates.len());
    for t in templates {
        let mut successes = 0usize;
        let mut mass = 0.0;
        for inst in sample {
            let prompt = render_prompt(t, inst).map_err(|source| PipelineError::Render {
                template_id: t.id,
                instance_id: inst.id.clone(),
                source,
            })?;
            let topk = query_logprobs(backend, &prompt).map_err(|source| PipelineError::Backend {
                template_id: t.id,
                instance_id: inst.id.clone(),
                source,
            })?;
            match collapse_detailed(&topk, t.collapsing_map.as_ref(), space) {
                Ok(c) => {
                    successes += 1;
                    mass += c.matched_mass;
                }
                Err(CollapseError::ZeroMass) => {}
                Err(source) => {
                    return Err(PipelineError::Collapse { template_id: t.id, instance_id: inst.id.clone(), source });
                }
            }
        }
        let n = sample.len() as f64;
        let mean_matched_mass = mass / n;
        reports.push(PlaygroundReport {
            template_id: t.id,
            sampled: sample.len(),
            success_rate: successes as f64 / n,
            mean_matched_mass,
            passed: mean_matched_mass >= threshold,
        });
    }
    Ok(reports)
}
