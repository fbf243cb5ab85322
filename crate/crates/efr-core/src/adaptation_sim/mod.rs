//! Desk-scale simulator: toy GANs on synthetic 2D mixtures, the combined
//! adaptation objective, optimization, checkpointing, and evaluation.
//!
//! The simulator exists to exercise the numerical building blocks end to
//! end under realistic training dynamics while staying small enough that
//! every gradient is finite-difference checkable and every run finishes in
//! seconds. [`train`] holds the loops; the other submodules are the parts
//! they are built from.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod presets;
pub mod train;

pub use adam::{adam_step, AdamParams, AdamState};
pub use config::{parse_config, GanVariant, LossConfig};
pub use losses::{gan_grads, gan_losses, total_loss, GanGradients, GanLosses, TotalLossRecord};
pub use metrics::{frechet_gaussian_distance, sliced_sample_score};
pub use net::{ToyDiscriminator, ToyGenerator, DISC_HIDDEN, FEATURE_DIM, NOISE_DIM, SAMPLE_DIM};
pub use presets::{Preset, TargetShotSet};
pub use train::{
    evaluate_adaptation, load_checkpoint, metrics_to_csv, recovery_to_csv,
    rotation_recovery_eval, run_adaptation, run_pretrain, save_checkpoint, AdaptReport,
    EvalSummary, MetricRow, PretrainOptions, PretrainReport, RecoveryOptions, RecoveryReport,
    RestartTrace, TrainState, METRICS_HEADER,
};
