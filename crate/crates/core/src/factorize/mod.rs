//! Scene factorization into object-level prototypes by per-frame K-means.

mod kmeans;
mod prototypes;

pub use kmeans::{best_of_restarts, kmeans_objective, lloyd_kmeans, nearest_assignments, ClusterResult};
pub use prototypes::{
    aggregate_prototypes, export_assignment_maps, hierarchical_prototypes, AssignmentMap, PrototypeSet,
    PrototypeToken, DEFAULT_MAX_ITER, DEFAULT_SCALES, PROTOTYPE_EXTRA_COLS,
};
