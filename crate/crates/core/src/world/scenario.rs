use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{normal_vec, stream};

/// Maximum absolute identity cosine between two distinct scene codes.
pub const MAX_IDENTITY_COSINE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntitySpec {
    pub identity: Vec<f64>,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub radius: f64,
    pub movable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Container {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub patch_rows: usize,
    pub patch_cols: usize,
    pub feat_dim: usize,
}

impl GridSpec {
    pub fn tokens(&self) -> usize {
        self.patch_rows * self.patch_cols
    }

    /// Center of patch `p` (row-major) in workspace units, before any
    /// viewpoint offset.
    pub fn patch_center(&self, p: usize) -> [f64; 2] {
        let (r, c) = (p / self.patch_cols, p % self.patch_cols);
        [
            (c as f64 + 0.5) / self.patch_cols as f64,
            (r as f64 + 0.5) / self.patch_rows as f64,
        ]
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            patch_rows: 8,
            patch_cols: 8,
            feat_dim: 16,
        }
    }
}

/// A task layout: entities on the unit square, a container, and the
/// feature-encoder settings used to observe it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub task_id: usize,
    pub entities: Vec<EntitySpec>,
    pub target_index: usize,
    pub container: Container,
    pub grid: GridSpec,
    pub episode_length: usize,
    /// Encoder kernel bandwidth, in workspace units.
    pub kernel_bandwidth: f64,
    pub background: Vec<f64>,
    pub gripper_code: Vec<f64>,
    pub gripper_start: [f64; 2],
    /// Per-coordinate uniform jitter applied to start positions at reset.
    pub position_jitter: f64,
    /// Uniform heading jitter (radians) applied to scripted velocities.
    pub heading_jitter: f64,
    /// Std of Gaussian noise added to every encoded token.
    #[serde(default)]
    pub token_noise_std: f64,
    /// Global translation of every patch center.
    #[serde(default)]
    pub view_offset: [f64; 2],
}

/// `n` mutually orthogonal codes of length `dim`, scaled to `norms[i]`.
/// Codes are orthogonalized against `existing` as well.
pub fn orthogonal_codes(dim: usize, norms: &[f64], existing: &[Vec<f64>], seed: u64) -> Result<Vec<Vec<f64>>> {
    if existing.len() + norms.len() > dim {
        return Err(Error::InvalidArgument(format!(
            "cannot fit {} orthogonal codes in {dim} dims",
            existing.len() + norms.len()
        )));
    }
    let mut basis: Vec<Vec<f64>> = existing
        .iter()
        .map(|v| {
            let n = norm(v);
            v.iter().map(|x| x / n).collect()
        })
        .collect();
    let mut rng = stream(seed, &[0x0c0de]);
    let mut out = Vec::new();
    for &scale in norms {
        let mut v = normal_vec(&mut rng, dim);
        for b in &basis {
            let p = dot(&v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
        let n = norm(&v);
        let unit: Vec<f64> = v.iter().map(|x| x / n).collect();
        out.push(unit.iter().map(|x| x * scale).collect());
        basis.push(unit);
    }
    Ok(out)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

fn inside_unit(p: [f64; 2]) -> bool {
    (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1])
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let d = self.grid.feat_dim;
        if self.grid.tokens() == 0 || d == 0 {
            return bad("empty grid".into());
        }
        if self.target_index >= self.entities.len() {
            return bad(format!("target index {} out of range", self.target_index));
        }
        if !self.entities[self.target_index].movable {
            return bad("target entity must be movable".into());
        }
        if self.background.len() != d || self.gripper_code.len() != d {
            return bad("background/gripper code length must equal feat_dim".into());
        }
        if !(self.kernel_bandwidth > 0.0) || self.episode_length == 0 {
            return bad("kernel bandwidth and episode length must be positive".into());
        }
        if !inside_unit(self.gripper_start) || !inside_unit(self.container.center) {
            return bad("gripper start and container must lie in the unit square".into());
        }
        for (i, e) in self.entities.iter().enumerate() {
            if e.identity.len() != d {
                return bad(format!("entity {i} identity has wrong length"));
            }
            if !inside_unit(e.position) {
                return bad(format!("entity {i} outside the workspace"));
            }
            for other in &self.entities[i + 1..] {
                if cosine(&e.identity, &other.identity).abs() > MAX_IDENTITY_COSINE {
                    return bad(format!("entity {i} identity is not separable"));
                }
            }
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        self.grid.tokens()
    }

    /// Single movable target plus one static distractor; the target never
    /// moves on its own.
    pub fn static_target(task_id: usize, seed: u64) -> Scenario {
        Self::build(task_id, seed, [0.0, 0.0], [0.3, 0.68], [0.72, 0.3], [0.75, 0.75])
    }

    /// Target drifts at a constant speed (heading randomized per episode) and
    /// bounces off the walls.
    pub fn moving_target(task_id: usize, seed: u64) -> Scenario {
        let mut s = Self::build(task_id, seed, [0.012, 0.0], [0.45, 0.6], [0.78, 0.78], [0.2, 0.8]);
        s.heading_jitter = std::f64::consts::PI;
        s.position_jitter = 0.08;
        s
    }

    fn build(
        task_id: usize,
        seed: u64,
        target_velocity: [f64; 2],
        target: [f64; 2],
        distractor: [f64; 2],
        container: [f64; 2],
    ) -> Scenario {
        let grid = GridSpec::default();
        let codes = orthogonal_codes(grid.feat_dim, &[1.0, 1.5, 2.0, 2.0], &[], seed)
            .expect("default codes fit");
        Scenario {
            task_id,
            entities: vec![
                EntitySpec {
                    identity: codes[2].clone(),
                    position: target,
                    velocity: target_velocity,
                    radius: 0.04,
                    movable: true,
                },
                EntitySpec {
                    identity: codes[3].clone(),
                    position: distractor,
                    velocity: [0.0, 0.0],
                    radius: 0.04,
                    movable: false,
                },
            ],
            target_index: 0,
            container: Container {
                center: container,
                radius: 0.1,
            },
            grid,
            episode_length: 120,
            kernel_bandwidth: 0.08,
            background: codes[0].clone(),
            gripper_code: codes[1].clone(),
            gripper_start: [0.2, 0.2],
            position_jitter: 0.1,
            heading_jitter: 0.0,
            token_noise_std: 0.0,
            view_offset: [0.0, 0.0],
        }
    }

    /// Copy with a different patch grid (and matching code length).
    pub fn with_grid(mut self, grid: GridSpec, seed: u64) -> Result<Scenario> {
        if grid.feat_dim != self.grid.feat_dim {
            let norms: Vec<f64> = std::iter::once(norm(&self.background))
                .chain(std::iter::once(norm(&self.gripper_code)))
                .chain(self.entities.iter().map(|e| norm(&e.identity)))
                .collect();
            let codes = orthogonal_codes(grid.feat_dim, &norms, &[], seed)?;
            self.background = codes[0].clone();
            self.gripper_code = codes[1].clone();
            for (e, c) in self.entities.iter_mut().zip(&codes[2..]) {
                e.identity = c.clone();
            }
        }
        self.grid = grid;
        self.validate()?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        Scenario::static_target(0, 1).validate().unwrap();
        Scenario::moving_target(1, 1).validate().unwrap();
    }

    #[test]
    fn codes_are_orthogonal() {
        let c = orthogonal_codes(8, &[1.0, 2.0, 3.0], &[], 5).unwrap();
        assert!(cosine(&c[0], &c[1]).abs() < 1e-12);
        assert!((norm(&c[2]) - 3.0).abs() < 1e-12);
        assert!(orthogonal_codes(2, &[1.0; 3], &[], 0).is_err());
    }

    #[test]
    fn invalid_target_rejected() {
        let mut s = Scenario::static_target(0, 1);
        s.target_index = 1;
        assert!(s.validate().is_err());
        s.target_index = 7;
        assert!(s.validate().is_err());
    }

    #[test]
    fn regridding_keeps_validity() {
        let s = Scenario::static_target(0, 1)
            .with_grid(GridSpec { patch_rows: 6, patch_cols: 6, feat_dim: 8 }, 3)
            .unwrap();
        assert_eq!(s.background.len(), 8);
    }
}
