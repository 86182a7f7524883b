//! Optimization, the training loop, evaluation, checkpoints and logs.

pub mod adam;
pub mod checkpoint;
pub mod diagnostics;
pub mod engine;
pub mod metrics;
pub mod smoke;

pub use adam::{adam_step, apply_l2, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointError};
pub use diagnostics::{gradient_norms, GradientReport};
pub use engine::{evaluate, Evaluation, TrainConfig, Trainer};
pub use metrics::{EpochReport, MetricsLog};
pub use smoke::{run_smoke, SmokeConfig, SmokeReport};
