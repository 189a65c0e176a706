//! A desk-scale laboratory for self-play fine-tuning objectives.
//!
//! Everything runs on tabular autoregressive models whose response support
//! is small enough to enumerate, so expected losses, gradients, and KL
//! divergences can be computed exactly and compared against sampled
//! training runs.

pub mod datastore;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod objectives;
pub mod optimizer;
pub mod oracle;
pub mod report;
pub mod rng;
pub mod task_model;

pub use engine::{
    run, run_with_task, IterationRecord, Mode, RunConfig, RunManifest, RunStatus, SelfPlay,
};
pub use error::{LabError, Result};
pub use objectives::{GradientTable, Item, LabeledBatch, ObjectiveSpec, SpinForm};
pub use task_model::{AutoregressiveTable, Prompt, PromptDistribution, Response, TaskSpec, Vocab};
