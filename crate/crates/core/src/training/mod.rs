//! Sub-problem construction, stage-wise training and checkpoints.

pub mod augment;
pub mod checkpoint;
pub mod data;
pub mod losses;
pub mod subproblems;
pub mod trainer;

pub use augment::augment;
pub use checkpoint::{CheckpointError, Progress};
pub use data::{BatchTensors, Dataset};
pub use losses::{loss_output, loss_upsampling};
pub use subproblems::{build_subproblems, degrade, degrade_plane, SubProblemSet};
pub use trainer::{train_procedure_variant, train_stage, EarlyStopping, LogRow, LossWeights, TrainConfig};
