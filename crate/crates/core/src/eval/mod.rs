//! Closed-loop evaluation, ablation sweeps, perturbation runs and CSV
//! reports.

mod report;
mod scenarios;

use std::fmt;
use std::str::FromStr;

pub use report::{emit_report, EvalReport, EvalRow, REPORT_HEADER};
pub use scenarios::{Preset, ScenarioFile, ScenarioSpec};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::factorize::DEFAULT_SCALES;
use crate::foresight::ForesightModel;
use crate::pipeline::{build_condition, ForesightBundle, PolicyBundle, Variant};
use crate::policy::ActionChunk;
use crate::rng::derive_seed;
use crate::world::{encode_frame, is_success, perturb_scenario, reset, scripted_expert, step, PerturbKind, Scenario, WorldState};

/// What an agent sees at each tick.
pub struct Observation<'a> {
    pub tick: usize,
    pub scenario: &'a Scenario,
    pub state: &'a WorldState,
    /// Encoded frames from the first tick up to the current one.
    pub frames: &'a [Tensor],
}

pub trait Agent {
    fn begin_episode(&mut self, episode_seed: u64);
    fn act(&mut self, obs: &Observation) -> Result<[f64; 3]>;
}

/// The scripted demonstrator, acting on privileged state.
pub struct ExpertAgent;

impl Agent for ExpertAgent {
    fn begin_episode(&mut self, _: u64) {}

    fn act(&mut self, obs: &Observation) -> Result<[f64; 3]> {
        Ok(scripted_expert(obs.state, obs.scenario))
    }
}

/// A trained policy executing `execute_steps` actions of each chunk.
pub struct PolicyAgent<'a> {
    policy: &'a PolicyBundle,
    foresight: Option<&'a ForesightModel>,
    chunk: Option<(usize, ActionChunk)>,
    episode_seed: u64,
}

impl<'a> PolicyAgent<'a> {
    pub fn new(policy: &'a PolicyBundle, foresight: Option<&'a ForesightModel>) -> Self {
        PolicyAgent {
            policy,
            foresight,
            chunk: None,
            episode_seed: 0,
        }
    }
}

impl Agent for PolicyAgent<'_> {
    fn begin_episode(&mut self, episode_seed: u64) {
        self.chunk = None;
        self.episode_seed = episode_seed;
    }

    fn act(&mut self, obs: &Observation) -> Result<[f64; 3]> {
        let cond = &self.policy.conditioning;
        let stale = match &self.chunk {
            Some((start, c)) => obs.tick - start >= cond.execute_steps.min(c.len()),
            None => true,
        };
        if stale {
            let seed = derive_seed(self.episode_seed, &[obs.tick as u64]);
            let tokens = build_condition(
                cond,
                self.foresight,
                &obs.scenario.grid,
                obs.frames,
                &obs.state.robot_state(),
                obs.scenario.task_id,
                seed,
            )?;
            let chunk = self.policy.model.sample(&tokens, cond.action_steps, derive_seed(seed, &[0xac]))?;
            self.chunk = Some((obs.tick, chunk));
        }
        let (start, c) = self.chunk.as_ref().expect("planned");
        let a = c.action(obs.tick - start);
        Ok([a[0], a[1], a[2]])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub success: bool,
    pub first_success_tick: Option<usize>,
}

/// Runs one episode of `episode_length - 1` steps.
pub fn run_episode<A: Agent + ?Sized>(agent: &mut A, scenario: &Scenario, seed: u64) -> Result<EpisodeOutcome> {
    let mut state = reset(scenario, seed)?;
    agent.begin_episode(derive_seed(seed, &[0xa6e]));
    let mut frames = Vec::with_capacity(scenario.episode_length);
    let mut first = None;
    for tick in 0..scenario.episode_length.saturating_sub(1) {
        frames.push(encode_frame(&state, scenario).tokens);
        let action = agent.act(&Observation {
            tick,
            scenario,
            state: &state,
            frames: &frames,
        })?;
        state = step(&state, scenario, action)?;
        if first.is_none() && is_success(&state, scenario) {
            first = Some(tick + 1);
        }
    }
    Ok(EpisodeOutcome {
        success: is_success(&state, scenario),
        first_success_tick: first,
    })
}

/// Seed of episode `e` of scenario `s`; independent of any perturbation so
/// that magnitude 0 reproduces the clean run.
pub fn episode_seed(seed: u64, scenario_index: usize, e: usize) -> u64 {
    derive_seed(seed, &[0xe7a1, scenario_index as u64, e as u64])
}

/// One report row per scenario.
pub fn evaluate_agent<A: Agent + ?Sized>(
    agent: &mut A,
    label: &str,
    scenarios: &[Scenario],
    perturbation: Option<(PerturbKind, f64)>,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    if n_episodes == 0 {
        return Err(Error::InvalidArgument("episodes must be >= 1".into()));
    }
    let mut rows = Vec::with_capacity(scenarios.len());
    for (si, base) in scenarios.iter().enumerate() {
        let scenario = match perturbation {
            Some((kind, mag)) => perturb_scenario(base, kind, mag, derive_seed(seed, &[0x9e27, si as u64]))?,
            None => base.clone(),
        };
        let mut wins = 0usize;
        let mut ticks = Vec::new();
        for e in 0..n_episodes {
            let out = run_episode(agent, &scenario, episode_seed(seed, si, e))?;
            if out.success {
                wins += 1;
                if let Some(t) = out.first_success_tick {
                    ticks.push(t as f64);
                }
            }
        }
        rows.push(EvalRow {
            variant: label.to_string(),
            task: scenario.task_id,
            perturbation: perturbation.map_or("none".to_string(), |(k, _)| k.to_string()),
            magnitude: perturbation.map_or(0.0, |(_, m)| m),
            seed,
            episodes: n_episodes,
            success_rate: wins as f64 / n_episodes as f64,
            mean_steps_to_success: (!ticks.is_empty()).then(|| ticks.iter().sum::<f64>() / ticks.len() as f64),
        });
    }
    Ok(EvalReport { rows })
}

fn check_compatible(policy: &PolicyBundle, foresight: &ForesightBundle, scenarios: &[Scenario]) -> Result<()> {
    let fc = &foresight.model.config;
    for s in scenarios {
        let g = s.grid;
        if g.feat_dim != policy.model.config.feat_dim || (g.patch_rows, g.patch_cols, g.feat_dim) != (fc.patch_rows, fc.patch_cols, fc.feat_dim) {
            return Err(Error::Checkpoint(format!(
                "scenario grid {}x{}x{} does not match the checkpoints",
                g.patch_rows, g.patch_cols, g.feat_dim
            )));
        }
        if s.task_id >= policy.model.config.n_tasks {
            return Err(Error::Checkpoint(format!("task {} unknown to the policy", s.task_id)));
        }
    }
    if policy.conditioning.variant.uses_foresight() && policy.conditioning.frame_stride != foresight.frame_stride {
        return Err(Error::Checkpoint("policy and foresight frame strides differ".into()));
    }
    Ok(())
}

pub fn evaluate_closed_loop(
    policy: &PolicyBundle,
    foresight: &ForesightBundle,
    scenarios: &[Scenario],
    n_episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    check_compatible(policy, foresight, scenarios)?;
    let mut agent = PolicyAgent::new(policy, Some(&foresight.model));
    evaluate_agent(&mut agent, policy.conditioning.variant.as_str(), scenarios, None, n_episodes, seed)
}

/// Runs the clean evaluation and every `(kind, magnitude)` pair.
pub fn perturbation_sweep(
    policy: &PolicyBundle,
    foresight: &ForesightBundle,
    scenarios: &[Scenario],
    kinds: &[PerturbKind],
    magnitudes: &[f64],
    n_episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    check_compatible(policy, foresight, scenarios)?;
    let mut agent = PolicyAgent::new(policy, Some(&foresight.model));
    let label = policy.conditioning.variant.as_str();
    let mut report = evaluate_agent(&mut agent, label, scenarios, None, n_episodes, seed)?;
    for &k in kinds {
        for &m in magnitudes {
            let r = evaluate_agent(&mut agent, label, scenarios, Some((k, m)), n_episodes, seed)?;
            report.rows.extend(r.rows);
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    HorizonM,
    ClustersK,
    DenoiseT,
}

impl AblationAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationAxis::HorizonM => "horizon_M",
            AblationAxis::ClustersK => "clusters_K",
            AblationAxis::DenoiseT => "denoise_T",
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "horizon_M" => Ok(AblationAxis::HorizonM),
            "clusters_K" => Ok(AblationAxis::ClustersK),
            "denoise_T" => Ok(AblationAxis::DenoiseT),
            other => Err(Error::InvalidArgument(format!("unknown ablation axis {other:?}"))),
        }
    }
}

/// A cluster-scale list written `2` or `1+2+4+8`; `hier` is the default
/// hierarchy.
pub fn parse_scales(s: &str) -> Result<Vec<usize>> {
    if s == "hier" {
        return Ok(DEFAULT_SCALES.to_vec());
    }
    s.split('+')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .ok()
                .filter(|&k| k > 0)
                .ok_or_else(|| Error::InvalidArgument(format!("bad cluster scale {p:?}")))
        })
        .collect()
}

/// Inference-time sweep: each value changes the conditioning of the
/// trained policy, nothing is retrained. `denoise_T = 0` switches to the
/// current-frame path without foresight.
pub fn run_ablation(
    axis: AblationAxis,
    values: &[String],
    policy: &PolicyBundle,
    foresight: &ForesightBundle,
    scenarios: &[Scenario],
    n_episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    check_compatible(policy, foresight, scenarios)?;
    let mut report = EvalReport::default();
    for v in values {
        let mut variant = policy.clone();
        let c = &mut variant.conditioning;
        let bad = || Error::InvalidArgument(format!("bad {axis} value {v:?}"));
        match axis {
            AblationAxis::HorizonM => {
                let m: usize = v.parse().map_err(|_| bad())?;
                if c.context_frames + m > foresight.model.config.max_frames {
                    return Err(Error::Geometry(format!(
                        "M={m} with {} context frames exceeds the trained horizon {}",
                        c.context_frames, foresight.model.config.max_frames
                    )));
                }
                c.rollout.horizon = m;
            }
            AblationAxis::ClustersK => c.scales = parse_scales(v)?,
            AblationAxis::DenoiseT => {
                let t: usize = v.parse().map_err(|_| bad())?;
                if t == 0 {
                    c.variant = Variant::CurrentFrameOa;
                } else {
                    c.rollout.denoise_steps = t;
                }
            }
        }
        let mut agent = PolicyAgent::new(&variant, Some(&foresight.model));
        let r = evaluate_agent(&mut agent, &format!("{axis}={v}"), scenarios, None, n_episodes, seed)?;
        report.rows.extend(r.rows);
    }
    Ok(report)
}
