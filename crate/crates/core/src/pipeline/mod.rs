//! Two-stage training, optimizer, checkpoints and run configuration.

mod checkpoint;
mod config;
mod gradcheck;
mod optim;
pub mod synthetic;
mod train;

pub use checkpoint::{
    Checkpoint, CheckpointMeta, ForesightBundle, ForesightSnapshot, ModelKind, ParamEntry, PolicyBundle, PolicySnapshot,
    CHECKPOINT_VERSION,
};
pub use config::{Conditioning, ForesightArch, LrSchedule, PolicyArch, Stage, TrainConfig, Variant};
pub use gradcheck::{grad_check_foresight, grad_check_policy, policy_output_energy, GRAD_CHECK_EPS, GRAD_CHECK_TOLERANCE};
pub use optim::{accumulate, optimizer_step, zero_grads, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use train::{
    build_condition, build_policy_samples, context_indices, dataset_grid, expert_chunk, fit_policy, sample_seed,
    train_foresight, train_foresight_on, train_policy, write_loss_csv, LossCurve, PolicySample,
};
