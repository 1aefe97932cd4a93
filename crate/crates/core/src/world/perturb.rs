use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scenario::{orthogonal_codes, EntitySpec};
use super::Scenario;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};

/// Synthetic analogues of the robustness perturbation families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbKind {
    Noise,
    Layout,
    Viewpoint,
    Speed,
}

impl PerturbKind {
    pub const ALL: [PerturbKind; 4] = [
        PerturbKind::Noise,
        PerturbKind::Layout,
        PerturbKind::Viewpoint,
        PerturbKind::Speed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PerturbKind::Noise => "noise",
            PerturbKind::Layout => "layout",
            PerturbKind::Viewpoint => "viewpoint",
            PerturbKind::Speed => "speed",
        }
    }
}

impl fmt::Display for PerturbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PerturbKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(PerturbKind::Noise),
            "layout" => Ok(PerturbKind::Layout),
            "viewpoint" => Ok(PerturbKind::Viewpoint),
            "speed" => Ok(PerturbKind::Speed),
            other => Err(Error::InvalidArgument(format!("unknown perturbation kind {other:?}"))),
        }
    }
}

const DISTRACTOR_RADIUS: f64 = 0.04;

/// Returns a perturbed copy of `scenario`. Magnitude 0 is the identity for
/// every kind.
pub fn perturb_scenario(scenario: &Scenario, kind: PerturbKind, magnitude: f64, seed: u64) -> Result<Scenario> {
    if !(magnitude >= 0.0) || !magnitude.is_finite() {
        return Err(Error::InvalidArgument(format!("magnitude must be >= 0, got {magnitude}")));
    }
    let mut s = scenario.clone();
    if magnitude == 0.0 {
        return Ok(s);
    }
    let mut rng = stream(seed, &[0x9e27, kind as u64]);
    match kind {
        PerturbKind::Noise => s.token_noise_std += magnitude,
        PerturbKind::Speed => {
            for e in &mut s.entities {
                e.velocity = e.velocity.map(|v| v * (1.0 + magnitude));
            }
        }
        PerturbKind::Viewpoint => {
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            s.view_offset[0] += magnitude * a.cos();
            s.view_offset[1] += magnitude * a.sin();
        }
        PerturbKind::Layout => {
            for e in &mut s.entities {
                let r = e.radius;
                for k in 0..2 {
                    let dx = rng.random_range(-magnitude..=magnitude);
                    e.position[k] = (e.position[k] + dx).clamp(r, 1.0 - r);
                }
            }
            let extra = magnitude.ceil() as usize;
            let mut existing: Vec<Vec<f64>> = vec![s.background.clone(), s.gripper_code.clone()];
            existing.extend(s.entities.iter().map(|e| e.identity.clone()));
            let norms = vec![2.0; extra];
            let codes = orthogonal_codes(s.grid.feat_dim, &norms, &existing, derive_seed(seed, &[0xd157]))?;
            for code in codes {
                let mut placed = None;
                for _ in 0..100 {
                    let p = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
                    let clear = s.entities.iter().all(|e| {
                        let d = ((e.position[0] - p[0]).powi(2) + (e.position[1] - p[1]).powi(2)).sqrt();
                        d >= e.radius + DISTRACTOR_RADIUS
                    });
                    if clear {
                        placed = Some(p);
                        break;
                    }
                }
                let position = placed.ok_or_else(|| Error::Placement("no room for distractor".into()))?;
                s.entities.push(EntitySpec {
                    identity: code,
                    position,
                    velocity: [0.0, 0.0],
                    radius: DISTRACTOR_RADIUS,
                    movable: false,
                });
            }
        }
    }
    s.validate()?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{encode_frame, reset};

    #[test]
    fn zero_magnitude_is_identity() {
        let s = Scenario::moving_target(1, 4);
        for k in PerturbKind::ALL {
            assert_eq!(perturb_scenario(&s, k, 0.0, 7).unwrap(), s);
        }
    }

    #[test]
    fn layout_adds_distractors() {
        let s = Scenario::static_target(0, 4);
        let p = perturb_scenario(&s, PerturbKind::Layout, 2.0, 1);
        // magnitude 2 also shifts positions by up to 2 (clamped), which can
        // make placement impossible only in degenerate cases
        let p = p.unwrap();
        assert_eq!(p.entities.len(), s.entities.len() + 2);
        let q = perturb_scenario(&s, PerturbKind::Layout, 0.05, 1).unwrap();
        assert_eq!(q.entities.len(), s.entities.len() + 1);
    }

    #[test]
    fn noise_norm_matches_gaussian() {
        let mut clean = Scenario::static_target(0, 4);
        clean.position_jitter = 0.0;
        let noisy = perturb_scenario(&clean, PerturbKind::Noise, 0.1, 1).unwrap();
        let d = clean.grid.feat_dim;
        let mut total = 0.0;
        let mut count = 0;
        for seed in 0..16 {
            let st = reset(&clean, seed).unwrap();
            let (a, b) = (encode_frame(&st, &clean), encode_frame(&st, &noisy));
            for r in 0..a.len() {
                let dev: f64 = a.tokens.row(r).iter().zip(b.tokens.row(r)).map(|(x, y)| (x - y).powi(2)).sum();
                total += dev.sqrt();
                count += 1;
            }
        }
        assert!(count >= 1000);
        let mean = total / count as f64;
        let expect = 0.1 * (d as f64).sqrt();
        assert!((mean - expect).abs() <= 0.1 * expect, "{mean} vs {expect}");
    }

    #[test]
    fn speed_scales_velocities() {
        let s = Scenario::moving_target(1, 4);
        let p = perturb_scenario(&s, PerturbKind::Speed, 0.5, 0).unwrap();
        assert!((p.entities[0].velocity[0] - 1.5 * s.entities[0].velocity[0]).abs() < 1e-15);
    }

    #[test]
    fn viewpoint_offsets_by_magnitude() {
        let s = Scenario::static_target(0, 4);
        let p = perturb_scenario(&s, PerturbKind::Viewpoint, 0.1, 0).unwrap();
        let r = (p.view_offset[0].powi(2) + p.view_offset[1].powi(2)).sqrt();
        assert!((r - 0.1).abs() < 1e-12);
    }

    #[test]
    fn unknown_kind_and_negative_magnitude() {
        assert!("lighting".parse::<PerturbKind>().is_err());
        let s = Scenario::static_target(0, 4);
        assert!(perturb_scenario(&s, PerturbKind::Noise, -0.1, 0).is_err());
    }
}
