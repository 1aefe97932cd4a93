use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Scenario;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};

/// Workspace units travelled per step at full action magnitude.
pub const MAX_STEP: f64 = 0.05;
/// Closing the gripper within this distance of a movable entity grasps it.
pub const GRASP_RADIUS: f64 = 0.06;
/// Robot state `q`: gripper x, gripper y, grip in {0, 1}.
pub const STATE_DIM: usize = 3;
/// Action: dx, dy, grip command.
pub const ACTION_DIM: usize = 3;

const PLACEMENT_ATTEMPTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gripper {
    pub position: [f64; 2],
    pub closed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub tick: usize,
    pub entity_positions: Vec<[f64; 2]>,
    pub entity_velocities: Vec<[f64; 2]>,
    pub gripper: Gripper,
    pub held_entity: Option<usize>,
    /// Seed for the per-tick encoder noise stream.
    pub noise_seed: u64,
}

impl WorldState {
    pub fn robot_state(&self) -> [f64; STATE_DIM] {
        [
            self.gripper.position[0],
            self.gripper.position[1],
            if self.gripper.closed { 1.0 } else { 0.0 },
        ]
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub(crate) fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    dist(a, b)
}

fn clamp_unit(p: [f64; 2]) -> [f64; 2] {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)]
}

/// Reflects a coordinate (and its velocity) back into [0, 1].
fn bounce(x: &mut f64, v: &mut f64) {
    if *x > 1.0 {
        *x = 2.0 - *x;
        *v = -*v;
    } else if *x < 0.0 {
        *x = -*x;
        *v = -*v;
    }
}

/// Deterministic initial state for `(scenario, seed)`.
pub fn reset(scenario: &Scenario, seed: u64) -> Result<WorldState> {
    scenario.validate()?;
    let mut rng = stream(seed, &[0x7e5e7]);
    let j = scenario.position_jitter;
    let jitter = |rng: &mut crate::rng::Stream, p: [f64; 2], r: f64| -> [f64; 2] {
        if j > 0.0 {
            let dx = rng.random_range(-j..=j);
            let dy = rng.random_range(-j..=j);
            [
                (p[0] + dx).clamp(r, 1.0 - r),
                (p[1] + dy).clamp(r, 1.0 - r),
            ]
        } else {
            p
        }
    };

    let mut positions = None;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let cand: Vec<[f64; 2]> = scenario
            .entities
            .iter()
            .map(|e| jitter(&mut rng, e.position, e.radius))
            .collect();
        let overlapping = (0..cand.len()).any(|a| {
            (a + 1..cand.len()).any(|b| {
                dist(cand[a], cand[b]) < scenario.entities[a].radius + scenario.entities[b].radius
            })
        });
        if !overlapping {
            positions = Some(cand);
            break;
        }
    }
    let positions = positions.ok_or_else(|| {
        Error::Placement(format!(
            "no overlap-free placement after {PLACEMENT_ATTEMPTS} samples"
        ))
    })?;

    let gripper = jitter(&mut rng, scenario.gripper_start, 0.0);
    let hj = scenario.heading_jitter;
    let velocities = scenario
        .entities
        .iter()
        .map(|e| {
            if hj > 0.0 && e.velocity != [0.0, 0.0] {
                let a: f64 = rng.random_range(-hj..=hj);
                let (s, c) = a.sin_cos();
                [
                    e.velocity[0] * c - e.velocity[1] * s,
                    e.velocity[0] * s + e.velocity[1] * c,
                ]
            } else {
                e.velocity
            }
        })
        .collect();

    Ok(WorldState {
        tick: 0,
        entity_positions: positions,
        entity_velocities: velocities,
        gripper: Gripper {
            position: gripper,
            closed: false,
        },
        held_entity: None,
        noise_seed: derive_seed(seed, &[0x0015e]),
    })
}

/// Advances the world one tick under `action = [dx, dy, grip]`.
pub fn step(state: &WorldState, scenario: &Scenario, action: [f64; ACTION_DIM]) -> Result<WorldState> {
    if action.iter().any(|a| a.is_nan()) {
        return Err(Error::InvalidArgument(format!("NaN in action {action:?}")));
    }
    let a = action.map(|v| v.clamp(-1.0, 1.0));
    let mut next = state.clone();
    next.gripper.position = clamp_unit([
        state.gripper.position[0] + a[0] * MAX_STEP,
        state.gripper.position[1] + a[1] * MAX_STEP,
    ]);
    next.gripper.closed = a[2] >= 0.5;
    if !next.gripper.closed {
        next.held_entity = None;
    }

    for (i, (p, v)) in next
        .entity_positions
        .iter_mut()
        .zip(next.entity_velocities.iter_mut())
        .enumerate()
    {
        if next.held_entity == Some(i) {
            continue;
        }
        p[0] += v[0];
        p[1] += v[1];
        bounce(&mut p[0], &mut v[0]);
        bounce(&mut p[1], &mut v[1]);
    }

    if next.gripper.closed && next.held_entity.is_none() {
        let g = next.gripper.position;
        next.held_entity = scenario
            .entities
            .iter()
            .enumerate()
            .filter(|(_, e)| e.movable)
            .map(|(i, _)| (i, dist(next.entity_positions[i], g)))
            .filter(|&(_, d)| d <= GRASP_RADIUS)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i);
        if let Some(i) = next.held_entity {
            next.entity_velocities[i] = [0.0, 0.0];
        }
    }
    if let Some(i) = next.held_entity {
        next.entity_positions[i] = next.gripper.position;
    }
    next.tick += 1;
    Ok(next)
}

/// Target entity center within the container radius.
pub fn is_success(state: &WorldState, scenario: &Scenario) -> bool {
    dist(
        state.entity_positions[scenario.target_index],
        scenario.container.center,
    ) <= scenario.container.radius
}
