use std::path::Path;

use rand::Rng;

use super::checkpoint::{ForesightBundle, PolicyBundle};
use super::config::{Conditioning, TrainConfig, Variant};
use super::optim::{accumulate, optimizer_step, zero_grads, AdamState};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::factorize::{aggregate_prototypes, hierarchical_prototypes, PROTOTYPE_EXTRA_COLS};
use crate::foresight::{rollout, ForesightModel, RolloutConfig};
use crate::policy::{ActionNorm, ConditionTokens, PolicyModel};
use crate::rng::{derive_seed, stream};
use crate::world::{mean_rows, Dataset, EpisodeRecord, GridSpec};

/// `(step, mean batch loss)` pairs.
pub type LossCurve = Vec<(usize, f64)>;

/// Frame indices `current - (count-1)*stride, .., current`, clamped at 0.
pub fn context_indices(current: usize, count: usize, stride: usize) -> Vec<usize> {
    (0..count)
        .rev()
        .map(|k| current.saturating_sub(k * stride))
        .collect()
}

/// Assembles condition tokens for the newest of `frames` (all frames seen so
/// far in the episode).
#[allow(clippy::too_many_arguments)]
pub fn build_condition(
    cond: &Conditioning,
    foresight: Option<&ForesightModel>,
    grid: &GridSpec,
    frames: &[Tensor],
    state: &[f64],
    task_id: usize,
    seed: u64,
) -> Result<ConditionTokens> {
    let current = frames
        .last()
        .ok_or_else(|| Error::InvalidArgument("no observed frame".into()))?;
    let width = grid.feat_dim + PROTOTYPE_EXTRA_COLS;
    let base = |prototypes| ConditionTokens {
        task_id,
        scene: mean_rows(current),
        state: state.to_vec(),
        prototypes,
    };
    if cond.variant == Variant::NoConditioning {
        return Ok(base(Tensor::zeros(&[0, width])));
    }
    let scales: &[usize] = match cond.variant {
        Variant::ForesightFullFrame => &[1],
        _ => &cond.scales,
    };
    let mut per_frame = vec![current.clone()];
    if cond.variant.uses_foresight() && cond.rollout.horizon > 0 {
        let model = foresight.ok_or_else(|| Error::InvalidArgument(format!("variant {} needs a foresight model", cond.variant)))?;
        let history: Vec<Tensor> = context_indices(frames.len() - 1, cond.context_frames, cond.frame_stride)
            .into_iter()
            .map(|i| frames[i].clone())
            .collect();
        let rc = RolloutConfig {
            seed: derive_seed(cond.rollout.seed, &[seed]),
            ..cond.rollout
        };
        per_frame.extend(rollout(model, &history, &rc)?);
    }
    let sets = per_frame
        .iter()
        .enumerate()
        .map(|(m, f)| Ok(hierarchical_prototypes(f, grid, scales, cond.max_iter, derive_seed(seed, &[0x9e, m as u64]))?.at_offset(m)))
        .collect::<Result<Vec<_>>>()?;
    Ok(base(aggregate_prototypes(&sets)?.feature_matrix()))
}

fn check_grid(model_grid: (usize, usize, usize), grid: &GridSpec) -> Result<()> {
    if model_grid != (grid.patch_rows, grid.patch_cols, grid.feat_dim) {
        return Err(Error::Geometry(format!(
            "model expects {:?} latents, dataset has {}x{}x{}",
            model_grid, grid.patch_rows, grid.patch_cols, grid.feat_dim
        )));
    }
    Ok(())
}

pub fn dataset_grid(data: &Dataset) -> GridSpec {
    GridSpec {
        patch_rows: data.manifest.patch_rows,
        patch_cols: data.manifest.patch_cols,
        feat_dim: data.manifest.feat_dim,
    }
}

/// Stage I on arbitrary frame sequences: uniformly drawn length-`horizon`
/// sub-sequences (spaced by the frame stride), flow-matching loss, Adam.
pub fn train_foresight_on(cfg: &TrainConfig, sequences: &[Vec<Tensor>], grid: &GridSpec) -> Result<(ForesightBundle, LossCurve)> {
    cfg.validate()?;
    let mut model = ForesightModel::new(cfg.foresight_config(grid), derive_seed(cfg.seed, &[1]))?;
    let stride = cfg.conditioning.frame_stride;
    let span = (cfg.horizon - 1) * stride + 1;
    let usable: Vec<&Vec<Tensor>> = sequences.iter().filter(|s| s.len() >= span).collect();
    if cfg.steps > 0 && usable.is_empty() {
        return Err(Error::Dataset(format!("no sequence spans {span} frames")));
    }
    for s in &usable {
        if s.iter().any(|f| f.rows() != grid.tokens() || f.cols() != grid.feat_dim) {
            return Err(Error::Geometry("frame shape differs from the grid".into()));
        }
    }
    let mut rng = stream(cfg.seed, &[0x7a1]);
    let mut opt = AdamState::new(&model.params);
    let mut curve = Vec::with_capacity(cfg.steps);
    let w = 1.0 / cfg.batch_size as f64;
    for step in 0..cfg.steps {
        let mut grads = zero_grads(&model.params);
        let mut total = 0.0;
        for b in 0..cfg.batch_size {
            let seq = usable[rng.random_range(0..usable.len())];
            let start = rng.random_range(0..=seq.len() - span);
            let clip: Vec<Tensor> = (0..cfg.horizon).map(|k| seq[start + k * stride].clone()).collect();
            let (loss, g) = model.loss(&clip, derive_seed(cfg.seed, &[step as u64, b as u64]))?;
            total += loss;
            accumulate(&mut grads, &g, w)?;
        }
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("foresight loss at step {step}")));
        }
        optimizer_step(&mut model.params, &grads, &mut opt, cfg.learning_rate_at(step), cfg.weight_decay())?;
        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            curve.push((step, total * w));
        }
    }
    Ok((
        ForesightBundle {
            model,
            frame_stride: stride,
            global_step: cfg.steps,
        },
        curve,
    ))
}

pub fn train_foresight(cfg: &TrainConfig, data: &Dataset) -> Result<(ForesightBundle, LossCurve)> {
    let seqs: Vec<Vec<Tensor>> = data
        .episodes
        .iter()
        .map(|e| e.frames.iter().map(|f| f.tokens.clone()).collect())
        .collect();
    train_foresight_on(cfg, &seqs, &dataset_grid(data))
}

/// One Stage II example: conditions and the normalized expert chunk.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySample {
    pub cond: ConditionTokens,
    pub chunk: Tensor,
}

/// Expert actions `tick..tick+len`, padded with the episode's last action.
pub fn expert_chunk(ep: &EpisodeRecord, tick: usize, len: usize) -> Result<Tensor> {
    let last = *ep
        .actions
        .last()
        .ok_or_else(|| Error::Dataset("episode without actions".into()))?;
    let data = (0..len)
        .flat_map(|k| ep.actions.get(tick + k).copied().unwrap_or(last))
        .collect();
    Tensor::matrix(len, last.len(), data)
}

/// Per-tick seed for rollouts and clustering in Stage II.
pub fn sample_seed(seed: u64, episode: usize, tick: usize) -> u64 {
    derive_seed(seed, &[0x5eed, episode as u64, tick as u64])
}

/// Builds every Stage II example. Rollouts are computed once per
/// (episode, tick) and reused across optimizer steps.
pub fn build_policy_samples(
    cfg: &TrainConfig,
    data: &Dataset,
    conditioning: &Conditioning,
    foresight: Option<&ForesightModel>,
    norm: &ActionNorm,
) -> Result<Vec<PolicySample>> {
    let grid = dataset_grid(data);
    let mut out = Vec::new();
    for (e, ep) in data.episodes.iter().enumerate() {
        let frames: Vec<Tensor> = ep.frames.iter().map(|f| f.tokens.clone()).collect();
        for tick in (0..ep.len()).step_by(cfg.sample_stride) {
            let cond = build_condition(
                conditioning,
                foresight,
                &grid,
                &frames[..=tick],
                &ep.states[tick],
                ep.task_id,
                sample_seed(cfg.seed, e, tick),
            )?;
            let chunk = norm.normalize(&expert_chunk(ep, tick, cfg.policy.chunk_len)?)?;
            out.push(PolicySample { cond, chunk });
        }
    }
    Ok(out)
}

/// Stage II: trains a policy against fixed conditions; the foresight model
/// is only read.
pub fn train_policy(cfg: &TrainConfig, data: &Dataset, foresight: &ForesightBundle) -> Result<(PolicyBundle, LossCurve)> {
    cfg.validate()?;
    let grid = dataset_grid(data);
    let fc = &foresight.model.config;
    check_grid((fc.patch_rows, fc.patch_cols, fc.feat_dim), &grid)?;
    if let Some(ep) = data.episodes.iter().find(|e| e.task_id >= cfg.policy.n_tasks) {
        return Err(Error::Dataset(format!("task id {} exceeds n_tasks {}", ep.task_id, cfg.policy.n_tasks)));
    }
    let conditioning = Conditioning {
        frame_stride: foresight.frame_stride,
        ..cfg.conditioning.clone()
    };
    let norm = ActionNorm::fit(
        crate::world::ACTION_DIM,
        data.episodes.iter().flat_map(|e| e.actions.iter().map(|a| a.as_slice())),
    )?;
    let mut model = PolicyModel::new(cfg.policy_config(grid.feat_dim), derive_seed(cfg.seed, &[2]))?;
    model.norm = norm.clone();
    let samples = if cfg.steps > 0 {
        build_policy_samples(cfg, data, &conditioning, Some(&foresight.model), &norm)?
    } else {
        Vec::new()
    };
    let curve = fit_policy(cfg, &mut model, &samples)?;
    Ok((
        PolicyBundle {
            model,
            conditioning,
            global_step: cfg.steps,
        },
        curve,
    ))
}

/// Optimizer loop over prepared samples.
pub fn fit_policy(cfg: &TrainConfig, model: &mut PolicyModel, samples: &[PolicySample]) -> Result<LossCurve> {
    if cfg.steps > 0 && samples.is_empty() {
        return Err(Error::Dataset("no policy training samples".into()));
    }
    let mut rng = stream(cfg.seed, &[0x90c]);
    let mut opt = AdamState::new(&model.params);
    let mut curve = Vec::with_capacity(cfg.steps);
    let w = 1.0 / cfg.batch_size as f64;
    for step in 0..cfg.steps {
        let mut grads = zero_grads(&model.params);
        let mut total = 0.0;
        for b in 0..cfg.batch_size {
            let s = &samples[rng.random_range(0..samples.len())];
            let (loss, g) = model.loss(&s.chunk, &s.cond, derive_seed(cfg.seed, &[0xb, step as u64, b as u64]))?;
            total += loss;
            accumulate(&mut grads, &g, w)?;
        }
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("policy loss at step {step}")));
        }
        optimizer_step(&mut model.params, &grads, &mut opt, cfg.learning_rate_at(step), cfg.weight_decay())?;
        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            curve.push((step, total * w));
        }
    }
    Ok(curve)
}

pub fn write_loss_csv(path: &Path, curve: &[(usize, f64)]) -> Result<()> {
    let mut s = String::from("step,loss\n");
    for (step, loss) in curve {
        s.push_str(&format!("{step},{loss}\n"));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
