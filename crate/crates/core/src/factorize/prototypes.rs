use std::path::Path;

use serde::{Deserialize, Serialize};

use super::kmeans::lloyd_kmeans;
use crate::diffcore::{sinusoidal, Tensor};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::world::{mean_rows, GridSpec};

/// Cluster counts of the default coarse-to-fine hierarchy.
pub const DEFAULT_SCALES: [usize; 4] = [1, 2, 4, 8];
pub const DEFAULT_MAX_ITER: usize = 8;
/// Extra feature columns after the prototype vector: spatial x, spatial y,
/// member fraction.
pub const PROTOTYPE_EXTRA_COLS: usize = 3;
const OFFSET_BASE: f64 = 100.0;
const SALIENCY_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeToken {
    pub vector: Vec<f64>,
    pub scale: usize,
    pub cluster: usize,
    /// 0 for an observed frame, `m` for the `m`-th predicted frame.
    pub frame_offset: usize,
    pub members: usize,
    /// Soft location: patch centres weighted by `max(0, <f_p - mu, c - mu>)`
    /// over all patches, with `mu` the frame mean and `c` the centroid.
    /// Falls back to the plain mean of member centres if all weights vanish.
    pub position: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentMap {
    pub frame_offset: usize,
    pub scale: usize,
    /// `patch_rows` rows of `patch_cols` cluster labels.
    pub labels: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub dim: usize,
    pub frame_tokens: usize,
    pub tokens: Vec<PrototypeToken>,
    pub maps: Vec<AssignmentMap>,
}

impl PrototypeSet {
    pub fn empty(dim: usize, frame_tokens: usize) -> Self {
        PrototypeSet {
            dim,
            frame_tokens,
            tokens: Vec::new(),
            maps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Retags every token (and map) with frame offset `m`.
    pub fn at_offset(mut self, m: usize) -> Self {
        self.tokens.iter_mut().for_each(|t| t.frame_offset = m);
        self.maps.iter_mut().for_each(|t| t.frame_offset = m);
        self
    }

    /// Policy-facing rows `[vector, x, y, members / L]`, shape
    /// `[N, d + 3]`.
    pub fn feature_matrix(&self) -> Tensor {
        let w = self.dim + PROTOTYPE_EXTRA_COLS;
        let mut data = Vec::with_capacity(self.len() * w);
        for t in &self.tokens {
            data.extend_from_slice(&t.vector);
            data.push(t.position[0]);
            data.push(t.position[1]);
            data.push(t.members as f64 / self.frame_tokens.max(1) as f64);
        }
        Tensor::matrix(self.len(), w, data).expect("sized")
    }
}

/// Clusters one frame's tokens at every scale; centroids of all scales are
/// returned together, ordered by scale then cluster index.
pub fn hierarchical_prototypes(
    frame: &Tensor,
    grid: &GridSpec,
    scales: &[usize],
    max_iter: usize,
    seed: u64,
) -> Result<PrototypeSet> {
    if scales.is_empty() {
        return Err(Error::InvalidArgument("scale list is empty".into()));
    }
    let l = frame.rows();
    if l != grid.tokens() || frame.cols() != grid.feat_dim {
        return Err(Error::Geometry(format!(
            "frame {:?} does not match {}x{} grid of dim {}",
            frame.shape(),
            grid.patch_rows,
            grid.patch_cols,
            grid.feat_dim
        )));
    }
    let mean = mean_rows(frame);
    let centred: Vec<Vec<f64>> = (0..l).map(|p| frame.row(p).iter().zip(&mean).map(|(a, b)| a - b).collect()).collect();
    let centres: Vec<[f64; 2]> = (0..l).map(|p| grid.patch_center(p)).collect();
    let mut set = PrototypeSet::empty(frame.cols(), l);
    for (si, &k) in scales.iter().enumerate() {
        let res = lloyd_kmeans(frame, k, max_iter, derive_seed(seed, &[si as u64, k as u64]))?;
        let mut members = vec![0usize; k];
        let mut pos = vec![[0.0; 2]; k];
        for (p, &a) in res.assignments.iter().enumerate() {
            members[a] += 1;
            pos[a][0] += centres[p][0];
            pos[a][1] += centres[p][1];
        }
        for c in 0..k {
            let dir: Vec<f64> = res.centroids.row(c).iter().zip(&mean).map(|(a, b)| a - b).collect();
            let mut acc = [0.0; 3];
            for (row, q) in centred.iter().zip(&centres) {
                let w = row.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>().max(0.0);
                acc[0] += w * q[0];
                acc[1] += w * q[1];
                acc[2] += w;
            }
            let n = members[c] as f64;
            let position = if acc[2] > SALIENCY_FLOOR {
                [acc[0] / acc[2], acc[1] / acc[2]]
            } else {
                [pos[c][0] / n, pos[c][1] / n]
            };
            set.tokens.push(PrototypeToken {
                vector: res.centroids.row(c).to_vec(),
                scale: k,
                cluster: c,
                frame_offset: 0,
                members: members[c],
                position,
            });
        }
        set.maps.push(AssignmentMap {
            frame_offset: 0,
            scale: k,
            labels: res.assignments.chunks(grid.patch_cols).map(<[usize]>::to_vec).collect(),
        });
    }
    Ok(set)
}

/// Concatenates per-frame sets in rollout order and adds a sinusoidal
/// frame-offset code to every vector. Offsets must strictly increase.
pub fn aggregate_prototypes(per_frame: &[PrototypeSet]) -> Result<PrototypeSet> {
    let first = per_frame
        .first()
        .ok_or_else(|| Error::InvalidArgument("no prototype sets to aggregate".into()))?;
    let mut out = PrototypeSet::empty(first.dim, first.frame_tokens);
    let mut last: Option<usize> = None;
    for set in per_frame {
        if set.dim != first.dim || set.tokens.iter().any(|t| t.vector.len() != first.dim) {
            return Err(Error::Shape(format!("prototype dim {} vs {}", set.dim, first.dim)));
        }
        let Some(m) = set.tokens.first().map(|t| t.frame_offset) else {
            continue;
        };
        if set.tokens.iter().any(|t| t.frame_offset != m) {
            return Err(Error::InvalidArgument("a per-frame set mixes frame offsets".into()));
        }
        if last.is_some_and(|prev| m <= prev) {
            return Err(Error::InvalidArgument(format!("frame offsets must strictly increase, got {m} after {last:?}")));
        }
        last = Some(m);
        let code = sinusoidal(m as f64, first.dim, OFFSET_BASE);
        for t in &set.tokens {
            let mut t = t.clone();
            t.vector.iter_mut().zip(&code).for_each(|(v, c)| *v += c);
            out.tokens.push(t);
        }
        out.maps.extend(set.maps.iter().cloned());
    }
    Ok(out)
}

#[derive(Serialize)]
struct MapExport<'a> {
    patch_rows: usize,
    patch_cols: usize,
    maps: &'a [AssignmentMap],
}

/// Writes the assignment maps of `set` as JSON integer grids.
pub fn export_assignment_maps(set: &PrototypeSet, grid: &GridSpec, path: &Path) -> Result<()> {
    let doc = MapExport {
        patch_rows: grid.patch_rows,
        patch_cols: grid.patch_cols,
        maps: &set.maps,
    };
    let text = serde_json::to_string_pretty(&doc)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
