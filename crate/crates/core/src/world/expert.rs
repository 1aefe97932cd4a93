use super::sim::{distance, GRASP_RADIUS, MAX_STEP};
use super::{Scenario, WorldState};

/// Fraction of the container radius the target must be within before the
/// expert lets go.
const RELEASE_FRACTION: f64 = 0.5;
/// The expert closes once this close to the target.
const GRIP_FRACTION: f64 = 0.7;

fn toward(from: [f64; 2], to: [f64; 2]) -> [f64; 2] {
    [
        ((to[0] - from[0]) / MAX_STEP).clamp(-1.0, 1.0),
        ((to[1] - from[1]) / MAX_STEP).clamp(-1.0, 1.0),
    ]
}

/// Reflects an extrapolated coordinate into [0, 1] the way walls bounce.
fn fold_unit(x: f64) -> f64 {
    let m = x.rem_euclid(2.0);
    if m > 1.0 {
        2.0 - m
    } else {
        m
    }
}

/// Scripted demonstrator: intercept the target, carry it to the container,
/// release, then idle.
pub fn scripted_expert(state: &WorldState, scenario: &Scenario) -> [f64; 3] {
    let ti = scenario.target_index;
    let target = state.entity_positions[ti];
    let g = state.gripper.position;
    let c = scenario.container;

    if state.held_entity == Some(ti) {
        if distance(target, c.center) <= RELEASE_FRACTION * c.radius {
            return [0.0, 0.0, 0.0];
        }
        let d = toward(g, c.center);
        return [d[0], d[1], 1.0];
    }
    if state.held_entity.is_some() || distance(target, c.center) <= c.radius {
        return [0.0, 0.0, 0.0];
    }

    let gap = distance(target, g);
    let lead = gap / MAX_STEP;
    let v = state.entity_velocities[ti];
    let intercept = [fold_unit(target[0] + v[0] * lead), fold_unit(target[1] + v[1] * lead)];
    let d = toward(g, intercept);
    let grip = if gap <= GRIP_FRACTION * GRASP_RADIUS { 1.0 } else { 0.0 };
    [d[0], d[1], grip]
}
