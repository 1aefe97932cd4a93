use serde::{Deserialize, Serialize};

use super::{Scenario, WorldState};
use crate::diffcore::Tensor;
use crate::rng::{normal_vec, stream};

/// Kernel weights below this are dropped so that far-away entities leave a
/// token bit-identical.
pub const KERNEL_CUTOFF: f64 = 1e-12;

/// Per-frame semantic latent: `L = rows * cols` patch tokens of `d` features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureGrid {
    pub tokens: Tensor,
    pub frame_index: usize,
}

impl FeatureGrid {
    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }

    pub fn mean_token(&self) -> Vec<f64> {
        mean_rows(&self.tokens)
    }
}

/// Column means of a matrix.
pub fn mean_rows(t: &Tensor) -> Vec<f64> {
    let (n, d) = (t.rows(), t.cols());
    let mut m = vec![0.0; d];
    for r in 0..n {
        for (a, b) in m.iter_mut().zip(t.row(r)) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    m
}

/// Patch center `p` after the scenario's viewpoint offset.
pub fn patch_center(scenario: &Scenario, p: usize) -> [f64; 2] {
    let c = scenario.grid.patch_center(p);
    [c[0] + scenario.view_offset[0], c[1] + scenario.view_offset[1]]
}

pub fn kernel(center: [f64; 2], pos: [f64; 2], sigma: f64) -> f64 {
    let d2 = (center[0] - pos[0]).powi(2) + (center[1] - pos[1]).powi(2);
    let w = (-d2 / (2.0 * sigma * sigma)).exp();
    if w < KERNEL_CUTOFF {
        0.0
    } else {
        w
    }
}

/// Renders the state into patch tokens: background plus Gaussian-weighted
/// identity codes for each entity and the gripper.
pub fn encode_frame(state: &WorldState, scenario: &Scenario) -> FeatureGrid {
    let (l, d) = (scenario.tokens(), scenario.grid.feat_dim);
    let sigma = scenario.kernel_bandwidth;
    let mut data = Vec::with_capacity(l * d);
    for p in 0..l {
        let center = patch_center(scenario, p);
        let mut tok = scenario.background.clone();
        for (e, pos) in scenario.entities.iter().zip(&state.entity_positions) {
            let w = kernel(center, *pos, sigma);
            if w > 0.0 {
                for (t, v) in tok.iter_mut().zip(&e.identity) {
                    *t += v * w;
                }
            }
        }
        let w = kernel(center, state.gripper.position, sigma);
        if w > 0.0 {
            for (t, v) in tok.iter_mut().zip(&scenario.gripper_code) {
                *t += v * w;
            }
        }
        data.extend(tok);
    }
    if scenario.token_noise_std > 0.0 {
        let noise = normal_vec(&mut stream(state.noise_seed, &[state.tick as u64]), l * d);
        for (v, n) in data.iter_mut().zip(noise) {
            *v += scenario.token_noise_std * n;
        }
    }
    FeatureGrid {
        tokens: Tensor::matrix(l, d, data).expect("grid shape"),
        frame_index: state.tick,
    }
}
