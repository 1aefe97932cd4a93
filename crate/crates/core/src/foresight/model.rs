use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::flow::{euler_integrate, flow_interpolate, flow_target};
use super::mask::build_block_causal_mask;
use crate::diffcore::{add_adaln_params, adaln_modulate, sinusoidal, Graph, ParameterStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{normal_vec, stream};

/// Scale applied to flow time before its sinusoidal embedding.
pub(crate) const TIME_EMBED_SCALE: f64 = 1000.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForesightConfig {
    pub n_layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Longest frame sequence the model is trained and rolled out on.
    pub max_frames: usize,
    pub patch_rows: usize,
    pub patch_cols: usize,
    pub feat_dim: usize,
}

impl Default for ForesightConfig {
    fn default() -> Self {
        ForesightConfig {
            n_layers: 3,
            hidden: 64,
            heads: 4,
            mlp_ratio: 4,
            max_frames: 10,
            patch_rows: 8,
            patch_cols: 8,
            feat_dim: 16,
        }
    }
}

impl ForesightConfig {
    pub fn tokens(&self) -> usize {
        self.patch_rows * self.patch_cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::InvalidArgument("hidden must be a positive multiple of heads".into()));
        }
        if self.hidden < 6 || self.tokens() == 0 || self.feat_dim == 0 || self.max_frames == 0 {
            return Err(Error::InvalidArgument("degenerate foresight geometry".into()));
        }
        Ok(())
    }
}

/// Horizon and sampler settings for autoregressive rollout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub horizon: usize,
    pub denoise_steps: usize,
    pub seed: u64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            horizon: 4,
            denoise_steps: 4,
            seed: 0,
        }
    }
}

/// Per-frame noise levels and noise tensors for one training draw.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowDraw {
    pub times: Vec<f64>,
    pub noise: Vec<Tensor>,
}

impl FlowDraw {
    /// Independent `t_i ~ U(0, 1)` and `eps_i ~ N(0, I)` for each frame.
    pub fn sample(seed: u64, frames: usize, tokens: usize, dim: usize) -> FlowDraw {
        let mut rng = stream(seed, &[0xf0e5]);
        let times = (0..frames).map(|_| rng.random::<f64>()).collect();
        let noise = (0..frames)
            .map(|_| Tensor::matrix(tokens, dim, normal_vec(&mut rng, tokens * dim)).expect("sized"))
            .collect();
        FlowDraw { times, noise }
    }
}

/// Velocity field over the newest frame slot, conditioned on clean history.
pub trait FrameField {
    fn frame_shape(&self) -> (usize, usize);
    fn max_frames(&self) -> usize;
    fn next_frame_velocity(&self, history: &[Tensor], z: &Tensor, t: f64) -> Result<Tensor>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForesightModel {
    pub config: ForesightConfig,
    pub params: ParameterStore,
}

fn block_name(i: usize, part: &str) -> String {
    format!("blocks.{i:02}.{part}")
}

/// Fixed positional code: frame index, patch row and patch column each fill
/// their own slice of the hidden channels.
fn positional_rows(cfg: &ForesightConfig, frames: usize) -> Tensor {
    let h = cfg.hidden;
    let part = (h / 3) & !1;
    let (pf, pr) = (part, part);
    let pc = h - pf - pr;
    let l = cfg.tokens();
    let mut data = Vec::with_capacity(frames * l * h);
    for f in 0..frames {
        let ef = sinusoidal(f as f64, pf, 100.0);
        for p in 0..l {
            data.extend_from_slice(&ef);
            data.extend(sinusoidal((p / cfg.patch_cols) as f64, pr, 100.0));
            data.extend(sinusoidal((p % cfg.patch_cols) as f64, pc, 100.0));
        }
    }
    Tensor::matrix(frames * l, h, data).expect("sized")
}

pub(crate) fn time_features(times: &[f64], dim: usize) -> Tensor {
    let data = times
        .iter()
        .flat_map(|&t| sinusoidal(t * TIME_EMBED_SCALE, dim, 10_000.0))
        .collect();
    Tensor::matrix(times.len(), dim, data).expect("sized")
}

fn stack(frames: &[Tensor]) -> Result<Tensor> {
    let cols = frames.first().map_or(0, Tensor::cols);
    let rows: usize = frames.iter().map(Tensor::rows).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for f in frames {
        if f.cols() != cols {
            return Err(Error::Shape("frames differ in feature dim".into()));
        }
        data.extend_from_slice(f.data());
    }
    Tensor::matrix(rows, cols, data)
}

impl ForesightModel {
    pub fn new(config: ForesightConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, &[0xf05e]);
        let (h, d) = (config.hidden, config.feat_dim);
        let mut p = ParameterStore::new();
        p.add_linear("embed", d, h, &mut rng)?;
        p.add_linear("time.fc1", h, h, &mut rng)?;
        p.add_linear("time.fc2", h, h, &mut rng)?;
        for i in 0..config.n_layers {
            add_adaln_params(&mut p, &block_name(i, "ada_attn"), h, h, &mut rng)?;
            for proj in ["q", "k", "v", "o"] {
                p.add_linear(&block_name(i, &format!("attn.{proj}")), h, h, &mut rng)?;
            }
            add_adaln_params(&mut p, &block_name(i, "ada_mlp"), h, h, &mut rng)?;
            p.add_linear(&block_name(i, "mlp.fc1"), h, h * config.mlp_ratio, &mut rng)?;
            p.add_linear(&block_name(i, "mlp.fc2"), h * config.mlp_ratio, h, &mut rng)?;
        }
        add_adaln_params(&mut p, "final.ada", h, h, &mut rng)?;
        p.add_linear("head", h, d, &mut rng)?;
        Ok(ForesightModel { config, params: p })
    }

    pub fn tokens(&self) -> usize {
        self.config.tokens()
    }

    fn check_input(&self, noised: &Tensor, times: &[f64]) -> Result<usize> {
        let l = self.tokens();
        let frames = times.len();
        if frames == 0 || frames > self.config.max_frames {
            return Err(Error::Geometry(format!(
                "{frames} frames, model supports 1..={}",
                self.config.max_frames
            )));
        }
        if noised.rows() != frames * l || noised.cols() != self.config.feat_dim {
            return Err(Error::Geometry(format!(
                "input {:?}, expected [{}, {}]",
                noised.shape(),
                frames * l,
                self.config.feat_dim
            )));
        }
        if times.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidArgument("flow times must lie in [0, 1]".into()));
        }
        Ok(frames)
    }

    /// Records the forward pass on `g` using `params` (which may differ from
    /// `self.params`, e.g. under gradient checking).
    pub fn forward_graph(&self, g: &mut Graph, params: &ParameterStore, noised: &Tensor, times: &[f64]) -> Result<Var> {
        let frames = self.check_input(noised, times)?;
        let cfg = &self.config;
        let l = self.tokens();
        let mask = build_block_causal_mask(frames, l)?;
        let groups: Rc<[usize]> = (0..frames * l).map(|r| r / l).collect();

        let x = g.constant(noised.clone());
        let emb = g.dense(params, "embed", x)?;
        let pos = g.constant(positional_rows(cfg, frames));
        let mut h = g.add(emb, pos)?;

        let tf = g.constant(time_features(times, cfg.hidden));
        let c = g.dense(params, "time.fc1", tf)?;
        let c = g.silu(c);
        let c = g.dense(params, "time.fc2", c)?;
        let cond = g.silu(c);

        for i in 0..cfg.n_layers {
            let a = adaln_modulate(g, params, &block_name(i, "ada_attn"), h, cond, groups.clone())?;
            let q = g.dense(params, &block_name(i, "attn.q"), a)?;
            let k = g.dense(params, &block_name(i, "attn.k"), a)?;
            let v = g.dense(params, &block_name(i, "attn.v"), a)?;
            let att = g.attention(q, k, v, cfg.heads, &mask)?;
            let o = g.dense(params, &block_name(i, "attn.o"), att)?;
            h = g.add(h, o)?;

            let m = adaln_modulate(g, params, &block_name(i, "ada_mlp"), h, cond, groups.clone())?;
            let m = g.dense(params, &block_name(i, "mlp.fc1"), m)?;
            let m = g.gelu(m);
            let m = g.dense(params, &block_name(i, "mlp.fc2"), m)?;
            h = g.add(h, m)?;
        }
        let f = adaln_modulate(g, params, "final.ada", h, cond, groups)?;
        g.dense(params, "head", f)
    }

    /// Velocity prediction for every token of every frame. `noised` is the
    /// frame-major stack `[T*L, d]`; `times[i]` is frame `i`'s flow time.
    pub fn forward(&self, noised: &Tensor, times: &[f64]) -> Result<Tensor> {
        let mut g = Graph::new();
        let out = self.forward_graph(&mut g, &self.params, noised, times)?;
        g.check_finite()?;
        Ok(g.value(out).clone())
    }

    fn noised_inputs(&self, clean: &[Tensor], draw: &FlowDraw) -> Result<(Tensor, Tensor)> {
        if draw.times.len() != clean.len() || draw.noise.len() != clean.len() {
            return Err(Error::Shape("flow draw does not match sequence length".into()));
        }
        let mut noised = Vec::with_capacity(clean.len());
        let mut target = Vec::with_capacity(clean.len());
        for ((z, e), &t) in clean.iter().zip(&draw.noise).zip(&draw.times) {
            if !z.same_shape(e) {
                return Err(Error::Shape("noise shape differs from frame".into()));
            }
            noised.push(Tensor::new(z.shape().to_vec(), flow_interpolate(z.data(), e.data(), t)?)?);
            target.push(Tensor::new(z.shape().to_vec(), flow_target(z.data(), e.data())?)?);
        }
        Ok((stack(&noised)?, stack(&target)?))
    }

    /// Mean over frames and tokens of the squared velocity error, with every
    /// frame noised at its own level, in one masked pass. Returns the loss
    /// and its gradient w.r.t. `params`.
    pub fn loss_with_draw(&self, params: &ParameterStore, clean: &[Tensor], draw: &FlowDraw) -> Result<(f64, ParameterStore)> {
        let (noised, target) = self.noised_inputs(clean, draw)?;
        let mut g = Graph::new();
        let pred = self.forward_graph(&mut g, params, &noised, &draw.times)?;
        let scale = 1.0 / (clean.len() * self.tokens()) as f64;
        let loss = g.squared_error(pred, &target, scale)?;
        let grads = g.backward(loss)?;
        Ok((g.value(loss).item(), grads.for_params(params)))
    }

    /// Training loss for a clean sequence with noise drawn from `seed`.
    pub fn loss(&self, clean: &[Tensor], seed: u64) -> Result<(f64, ParameterStore)> {
        let draw = FlowDraw::sample(seed, clean.len(), self.tokens(), self.config.feat_dim);
        self.loss_with_draw(&self.params, clean, &draw)
    }

    /// Same objective computed frame by frame: frame `i` is predicted from a
    /// pass over frames `0..=i` only. Returns each frame's contribution.
    pub fn sequential_frame_losses(&self, clean: &[Tensor], draw: &FlowDraw) -> Result<Vec<f64>> {
        let (noised, target) = self.noised_inputs(clean, draw)?;
        let (l, d) = (self.tokens(), self.config.feat_dim);
        let scale = 1.0 / (clean.len() * l) as f64;
        (0..clean.len())
            .map(|i| {
                let prefix = Tensor::matrix((i + 1) * l, d, noised.data()[..(i + 1) * l * d].to_vec())?;
                let out = self.forward(&prefix, &draw.times[..=i])?;
                let s: f64 = out.data()[i * l * d..]
                    .iter()
                    .zip(&target.data()[i * l * d..(i + 1) * l * d])
                    .map(|(p, t)| (p - t) * (p - t))
                    .sum();
                Ok(scale * s)
            })
            .collect()
    }
}

impl FrameField for ForesightModel {
    fn frame_shape(&self) -> (usize, usize) {
        (self.tokens(), self.config.feat_dim)
    }

    fn max_frames(&self) -> usize {
        self.config.max_frames
    }

    fn next_frame_velocity(&self, history: &[Tensor], z: &Tensor, t: f64) -> Result<Tensor> {
        let mut frames = history.to_vec();
        frames.push(z.clone());
        let x = stack(&frames)?;
        let mut times = vec![1.0; history.len()];
        times.push(t);
        let out = self.forward(&x, &times)?;
        let (l, d) = self.frame_shape();
        Tensor::matrix(l, d, out.data()[history.len() * l * d..].to_vec())
    }
}

/// Starting noise for the new frame slot; exposed so oracle fields can
/// reproduce it.
pub fn sampler_noise(config: &RolloutConfig, history_len: usize, tokens: usize, dim: usize) -> Tensor {
    let mut rng = stream(config.seed, &[0x5a3e, history_len as u64]);
    Tensor::matrix(tokens, dim, normal_vec(&mut rng, tokens * dim)).expect("sized")
}

/// Euler-integrates the field for the next frame, history held clean.
pub fn sample_next_frame<F: FrameField + ?Sized>(field: &F, history: &[Tensor], config: &RolloutConfig) -> Result<Tensor> {
    if history.is_empty() {
        return Err(Error::InvalidArgument("history must contain at least one frame".into()));
    }
    if history.len() >= field.max_frames() {
        return Err(Error::Geometry(format!(
            "history of {} leaves no slot within {} frames",
            history.len(),
            field.max_frames()
        )));
    }
    let (l, d) = field.frame_shape();
    if history.iter().any(|h| h.rows() != l || h.cols() != d) {
        return Err(Error::Geometry("history frame shape mismatch".into()));
    }
    let eps = sampler_noise(config, history.len(), l, d);
    euler_integrate(eps, config.denoise_steps, |z, t| field.next_frame_velocity(history, z, t))
}

/// Generates `config.horizon` frames autoregressively, each conditioned on
/// the observed history plus everything generated so far.
pub fn rollout<F: FrameField + ?Sized>(field: &F, history: &[Tensor], config: &RolloutConfig) -> Result<Vec<Tensor>> {
    if config.horizon == 0 {
        return Ok(Vec::new());
    }
    if history.len() + config.horizon > field.max_frames() {
        return Err(Error::Geometry(format!(
            "history {} + horizon {} exceeds {} frames",
            history.len(),
            config.horizon,
            field.max_frames()
        )));
    }
    let mut frames = history.to_vec();
    let mut out = Vec::with_capacity(config.horizon);
    for _ in 0..config.horizon {
        let next = sample_next_frame(field, &frames, config)?;
        frames.push(next.clone());
        out.push(next);
    }
    Ok(out)
}
