//! Joint finetuning of the frontend heads with dynamic loss weighting, and
//! the task metrics that drive it.

pub mod dwa;
pub mod finetune;
pub mod metrics;

pub use dwa::{combined_weights, dwa_lambda, dwa_plus_epsilon, DwaState};
pub use finetune::{joint_finetune, FinetuneConfig, FinetuneRow, Finetuned, TaskData, Weighting, TASKS};
pub use metrics::{evaluate_metrics, MetricsReport, PbpF1};
