//! Reference-model training, stream evaluation, metrics, hyperparameter
//! sweeps, layer ablation and operation profiling.

pub mod ablation;
pub mod data;
pub mod eval;
pub mod metrics;
pub mod sweep;
pub mod train;

pub use ablation::{ablation_subsets, layer_ablation, AblationCurve, AblationDirection, AblationPoint};
pub use data::{ClusterSpec, PatternSpec};
pub use eval::{evaluate_stream, profile_ops, EvalMode, EvalTarget, RunReport, RunningAvgStage, SampleRecord};
pub use metrics::{accuracy, weighted_f1};
pub use sweep::{sweep_hyperparams, SweepGrid, SweepResult};
pub use train::{clean_accuracy, train_reference_model, Arch, TrainConfig, TrainOutcome};
