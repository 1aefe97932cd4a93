//! Flow-matching action policy conditioned on task, scene, robot state and
//! object prototypes.

mod model;
mod norm;

pub use model::{
    chunk_noise, dual_cross_attention, object_value_prefix, sample_chunk_with, ConditionTokens, PolicyConfig,
    PolicyModel,
};
pub use norm::{ActionChunk, ActionNorm};

/// Chunk sampling entry point; see [`PolicyModel::sample`].
pub fn sample_action_chunk(model: &PolicyModel, cond: &ConditionTokens, steps: usize, seed: u64) -> crate::Result<ActionChunk> {
    model.sample(cond, steps, seed)
}
