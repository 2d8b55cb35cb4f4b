//! Small fully connected networks trained from scratch on Gaussian class
//! clusters, with hidden-layer checkpoints on a fixed probe set.

pub mod data;
pub mod group;
pub mod mlp;

pub use data::{make_dataset, shuffle_labels, SyntheticDataset};
pub use group::{
    run_group_experiment, run_group_experiment_with, subsample_rows, GroupExperiment, GroupMember,
    MemberOutcome, DEFAULT_GROUP_SIZE,
};
pub use mlp::{
    accuracy, evaluate_accuracy, softmax_columns, train_mlp, Activation, CheckpointSchedule,
    Gradients, LabelMode, Mlp, MlpSpec, ToyNetCheckpoint, TrainConfig, TrainRun,
};
