//! Synthetic manipulation world: entities on the unit square, a point
//! gripper, a scripted demonstrator, and a patch-feature encoder that stands
//! in for a pretrained semantic backbone.

mod dataset;
mod encoder;
mod expert;
mod perturb;
mod scenario;
mod sim;

pub use dataset::{generate_dataset, record_expert_episode, write_dataset, Dataset, EpisodeRecord, Manifest, DATASET_VERSION};
pub use encoder::{encode_frame, kernel, patch_center, FeatureGrid, KERNEL_CUTOFF};
pub use encoder::mean_rows;
pub use expert::scripted_expert;
pub use perturb::{perturb_scenario, PerturbKind};
pub use scenario::{orthogonal_codes, Container, EntitySpec, GridSpec, Scenario, MAX_IDENTITY_COSINE};
#[cfg(test)]
pub(crate) use scenario::cosine;
pub use sim::{is_success, reset, step, Gripper, WorldState, ACTION_DIM, GRASP_RADIUS, MAX_STEP, STATE_DIM};
