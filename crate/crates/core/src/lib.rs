//! Label-free prompt template selection.
//!
//! Each candidate template is scored by the mutual information between the
//! templatized input and the model's answer distribution, estimated from
//! the collapsed next-token log-probabilities of an unlabeled sample.

// `!(x > y)` is deliberate throughout: NaN must take the error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backend;
pub mod cli;
pub mod collapse;
pub mod error;
pub mod fixture;
pub mod infotheory;
pub mod report;
pub mod selection;
pub mod types;

pub use error::PipelineError;
pub use types::{
    validate_run_config, ConfigError, InstanceRecord, LabelDistribution, LabelMode, LabelSpace, RunConfig,
    TemplateSpec, TemplateStats, TokenTopK,
};
