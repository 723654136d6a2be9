use thiserror::Error;

use crate::backend::{BackendError, RenderError};
use crate::collapse::CollapseError;
use crate::infotheory::InfoError;
use crate::types::ConfigError;

/// Failures of a pipeline stage, tagged with the template and instance that
/// triggered them.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no instances to evaluate")]
    EmptySample,
    #[error("template {template_id}, instance {instance_id}: {source}")]
    Render { template_id: u32, instance_id: String, source: RenderError },
    #[error("template {template_id}, instance {instance_id}: {source}")]
    Backend { template_id: u32, instance_id: String, source: BackendError },
    #[error("template {template_id}, instance {instance_id}: {source}")]
    Collapse { template_id: u32, instance_id: String, source: CollapseError },
    #[error("template {template_id}: {source}")]
    Info { template_id: u32, source: InfoError },
    #[error("{0}")]
    Invalid(String),
}

impl PipelineError {
    pub fn is_backend(&self) -> bool {
        matches!(self, PipelineError::Backend { .. })
    }
}
