use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::norm::{ActionChunk, ActionNorm};
use crate::diffcore::{
    add_adaln_params, adaln_modulate, sinusoidal, AttentionMask, Graph, ParameterStore, Tensor, Var,
};
use crate::error::{Error, Result};
use crate::factorize::PROTOTYPE_EXTRA_COLS;
use crate::foresight::{euler_integrate, flow_interpolate, flow_target, time_features};
use crate::rng::{normal_vec, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub n_layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub chunk_len: usize,
    pub action_dim: usize,
    pub state_dim: usize,
    pub n_tasks: usize,
    /// Width of the latent tokens (scene token and prototype vectors).
    pub feat_dim: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            n_layers: 2,
            hidden: 64,
            heads: 4,
            mlp_ratio: 4,
            chunk_len: 16,
            action_dim: 3,
            state_dim: 3,
            n_tasks: 2,
            feat_dim: 16,
        }
    }
}

impl PolicyConfig {
    pub fn proto_dim(&self) -> usize {
        self.feat_dim + PROTOTYPE_EXTRA_COLS
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.heads == 0 || self.hidden == 0 || self.hidden % self.heads != 0 {
            return Err(Error::InvalidArgument("hidden must be a positive multiple of heads".into()));
        }
        if self.chunk_len == 0 || self.action_dim == 0 || self.state_dim == 0 || self.n_tasks == 0 || self.feat_dim == 0 {
            return Err(Error::InvalidArgument("degenerate policy geometry".into()));
        }
        Ok(())
    }
}

/// Task, pooled-scene and state inputs plus the (possibly empty) prototype
/// rows `[N, d + 3]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionTokens {
    pub task_id: usize,
    pub scene: Vec<f64>,
    pub state: Vec<f64>,
    pub prototypes: Tensor,
}

impl ConditionTokens {
    pub fn without_prototypes(&self) -> ConditionTokens {
        ConditionTokens {
            prototypes: Tensor::zeros(&[0, self.prototypes.cols()]),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyModel {
    pub config: PolicyConfig,
    pub params: ParameterStore,
    pub norm: ActionNorm,
}

fn block_name(i: usize, part: &str) -> String {
    format!("blocks.{i:02}.{part}")
}

/// Name of the object-branch value projection of block `i`.
pub fn object_value_prefix(i: usize) -> String {
    block_name(i, "cross.v_obj")
}

/// `attn(Q, K_c, V_c) + attn(Q, K_S, V_S)` with dense masks. An absent
/// object branch contributes an explicit zero.
pub fn dual_cross_attention(
    g: &mut Graph,
    q: Var,
    cond: (Var, Var),
    objects: Option<(Var, Var)>,
    heads: usize,
) -> Result<Var> {
    let n = g.value(q).rows();
    let mc = g.value(cond.0).rows();
    let a = g.attention(q, cond.0, cond.1, heads, &AttentionMask::dense(n, mc))?;
    let b = match objects {
        Some((k, v)) if g.value(k).rows() > 0 => {
            let ms = g.value(k).rows();
            g.attention(q, k, v, heads, &AttentionMask::dense(n, ms))?
        }
        _ => {
            let shape = g.value(a).shape().to_vec();
            g.constant(Tensor::zeros(&shape))
        }
    };
    g.add(a, b)
}

/// Octaves of the coordinate embedding applied to the state and to the
/// trailing position columns of prototype rows.
pub const COORD_OCTAVES: usize = 6;

/// Appends `sin(2^k pi v), cos(2^k pi v)` for `k < COORD_OCTAVES` of every
/// value in the last `coords` columns of each row.
fn with_coord_features(rows: &Tensor, coords: usize) -> Tensor {
    let (n, w) = (rows.rows(), rows.cols());
    let extra = 2 * COORD_OCTAVES * coords;
    let mut data = Vec::with_capacity(n * (w + extra));
    for r in 0..n {
        let row = rows.row(r);
        data.extend_from_slice(row);
        for &v in &row[w - coords..] {
            for k in 0..COORD_OCTAVES {
                let a = std::f64::consts::PI * (1u64 << k) as f64 * v;
                data.push(a.sin());
                data.push(a.cos());
            }
        }
    }
    Tensor::matrix(n, w + extra, data).expect("sized")
}

fn chunk_positions(len: usize, hidden: usize) -> Tensor {
    let data = (0..len).flat_map(|i| sinusoidal(i as f64, hidden, 100.0)).collect();
    Tensor::matrix(len, hidden, data).expect("sized")
}

impl PolicyModel {
    pub fn new(config: PolicyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, &[0x9011]);
        let c = &config;
        let h = c.hidden;
        let mut p = ParameterStore::new();
        p.add_linear("action_in", c.action_dim, h, &mut rng)?;
        p.add_linear("time.fc1", h, h, &mut rng)?;
        p.add_linear("time.fc2", h, h, &mut rng)?;
        let table = (0..c.n_tasks * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        p.insert("cond.task_table", Tensor::matrix(c.n_tasks, h, table)?)?;
        p.add_linear("cond.scene", c.feat_dim, h, &mut rng)?;
        p.add_linear("cond.state", c.state_dim * (1 + 2 * COORD_OCTAVES), h, &mut rng)?;
        p.add_linear("proto_in", c.proto_dim() + 2 * COORD_OCTAVES * PROTOTYPE_EXTRA_COLS, h, &mut rng)?;
        for i in 0..c.n_layers {
            add_adaln_params(&mut p, &block_name(i, "ada_self"), h, h, &mut rng)?;
            for proj in ["q", "k", "v", "o"] {
                p.add_linear(&block_name(i, &format!("self.{proj}")), h, h, &mut rng)?;
            }
            add_adaln_params(&mut p, &block_name(i, "ada_cross"), h, h, &mut rng)?;
            for proj in ["q", "k_cond", "v_cond", "k_obj", "o"] {
                p.add_linear(&block_name(i, &format!("cross.{proj}")), h, h, &mut rng)?;
            }
            p.add_zero_linear(&object_value_prefix(i), h, h)?;
            add_adaln_params(&mut p, &block_name(i, "ada_mlp"), h, h, &mut rng)?;
            p.add_linear(&block_name(i, "mlp.fc1"), h, h * c.mlp_ratio, &mut rng)?;
            p.add_linear(&block_name(i, "mlp.fc2"), h * c.mlp_ratio, h, &mut rng)?;
        }
        add_adaln_params(&mut p, "final.ada", h, h, &mut rng)?;
        p.add_linear("head", h, c.action_dim, &mut rng)?;
        Ok(PolicyModel {
            norm: ActionNorm::identity(c.action_dim),
            config,
            params: p,
        })
    }

    fn check_cond(&self, cond: &ConditionTokens) -> Result<()> {
        let c = &self.config;
        if cond.task_id >= c.n_tasks {
            return Err(Error::InvalidArgument(format!("task id {} of {}", cond.task_id, c.n_tasks)));
        }
        if cond.scene.len() != c.feat_dim || cond.state.len() != c.state_dim {
            return Err(Error::Shape(format!(
                "scene {} / state {} vs {} / {}",
                cond.scene.len(),
                cond.state.len(),
                c.feat_dim,
                c.state_dim
            )));
        }
        if cond.prototypes.shape().len() != 2 || cond.prototypes.cols() != c.proto_dim() {
            return Err(Error::Shape(format!("prototype rows {:?}, expected width {}", cond.prototypes.shape(), c.proto_dim())));
        }
        Ok(())
    }

    /// Records the velocity prediction for the normalized noised chunk.
    pub fn forward_graph(&self, g: &mut Graph, params: &ParameterStore, noised: &Tensor, t: f64, cond: &ConditionTokens) -> Result<Var> {
        let c = &self.config;
        if noised.shape() != [c.chunk_len, c.action_dim] {
            return Err(Error::Shape(format!("chunk {:?}, expected [{}, {}]", noised.shape(), c.chunk_len, c.action_dim)));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidArgument(format!("flow time {t} outside [0, 1]")));
        }
        self.check_cond(cond)?;
        let groups: Rc<[usize]> = vec![0; c.chunk_len].into();

        let x = g.constant(noised.clone());
        let x = g.dense(params, "action_in", x)?;
        let pos = g.constant(chunk_positions(c.chunk_len, c.hidden));
        let mut h = g.add(x, pos)?;

        let tf = g.constant(time_features(&[t], c.hidden));
        let te = g.dense(params, "time.fc1", tf)?;
        let te = g.silu(te);
        let te = g.dense(params, "time.fc2", te)?;
        let te = g.silu(te);

        let table = g.param(params, "cond.task_table")?;
        let task = g.gather_rows(table, &[cond.task_id])?;
        let scene = g.constant(Tensor::matrix(1, c.feat_dim, cond.scene.clone())?);
        let scene = g.dense(params, "cond.scene", scene)?;
        let state = Tensor::matrix(1, c.state_dim, cond.state.clone())?;
        let state = g.constant(with_coord_features(&state, c.state_dim));
        let state = g.dense(params, "cond.state", state)?;
        let cond_tokens = g.concat_rows(&[task, scene, state])?;
        let objects = if cond.prototypes.rows() > 0 {
            let s = g.constant(with_coord_features(&cond.prototypes, PROTOTYPE_EXTRA_COLS));
            Some(g.dense(params, "proto_in", s)?)
        } else {
            None
        };

        let self_mask = AttentionMask::dense(c.chunk_len, c.chunk_len);
        for i in 0..c.n_layers {
            let a = adaln_modulate(g, params, &block_name(i, "ada_self"), h, te, groups.clone())?;
            let q = g.dense(params, &block_name(i, "self.q"), a)?;
            let k = g.dense(params, &block_name(i, "self.k"), a)?;
            let v = g.dense(params, &block_name(i, "self.v"), a)?;
            let att = g.attention(q, k, v, c.heads, &self_mask)?;
            let o = g.dense(params, &block_name(i, "self.o"), att)?;
            h = g.add(h, o)?;

            let a = adaln_modulate(g, params, &block_name(i, "ada_cross"), h, te, groups.clone())?;
            let q = g.dense(params, &block_name(i, "cross.q"), a)?;
            let kc = g.dense(params, &block_name(i, "cross.k_cond"), cond_tokens)?;
            let vc = g.dense(params, &block_name(i, "cross.v_cond"), cond_tokens)?;
            let obj = match objects {
                Some(s) => {
                    let ks = g.dense(params, &block_name(i, "cross.k_obj"), s)?;
                    let vs = g.dense(params, &object_value_prefix(i), s)?;
                    Some((ks, vs))
                }
                None => None,
            };
            let att = dual_cross_attention(g, q, (kc, vc), obj, c.heads)?;
            let o = g.dense(params, &block_name(i, "cross.o"), att)?;
            h = g.add(h, o)?;

            let m = adaln_modulate(g, params, &block_name(i, "ada_mlp"), h, te, groups.clone())?;
            let m = g.dense(params, &block_name(i, "mlp.fc1"), m)?;
            let m = g.gelu(m);
            let m = g.dense(params, &block_name(i, "mlp.fc2"), m)?;
            h = g.add(h, m)?;
        }
        let f = adaln_modulate(g, params, "final.ada", h, te, groups)?;
        g.dense(params, "head", f)
    }

    /// Velocity prediction `[L_a, D]` for a normalized noised chunk.
    pub fn forward(&self, noised: &Tensor, t: f64, cond: &ConditionTokens) -> Result<Tensor> {
        let mut g = Graph::new();
        let out = self.forward_graph(&mut g, &self.params, noised, t, cond)?;
        g.check_finite()?;
        Ok(g.value(out).clone())
    }

    fn draw(&self, seed: u64) -> (f64, Tensor) {
        let (l, d) = (self.config.chunk_len, self.config.action_dim);
        let mut rng = stream(seed, &[0xac7]);
        let t = rng.random::<f64>();
        (t, Tensor::matrix(l, d, normal_vec(&mut rng, l * d)).expect("sized"))
    }

    /// Flow-matching loss for a normalized clean chunk with an explicit draw:
    /// mean over action rows of the squared velocity error.
    pub fn loss_with_draw(
        &self,
        params: &ParameterStore,
        clean: &Tensor,
        cond: &ConditionTokens,
        t: f64,
        eps: &Tensor,
    ) -> Result<(f64, ParameterStore)> {
        if !clean.same_shape(eps) {
            return Err(Error::Shape("noise shape differs from chunk".into()));
        }
        let noised = Tensor::new(clean.shape().to_vec(), flow_interpolate(clean.data(), eps.data(), t)?)?;
        let target = Tensor::new(clean.shape().to_vec(), flow_target(clean.data(), eps.data())?)?;
        let mut g = Graph::new();
        let pred = self.forward_graph(&mut g, params, &noised, t, cond)?;
        let loss = g.squared_error(pred, &target, 1.0 / clean.rows() as f64)?;
        let grads = g.backward(loss)?;
        Ok((g.value(loss).item(), grads.for_params(params)))
    }

    /// One `(t, eps)` draw from `seed`; `clean` is already normalized.
    pub fn loss(&self, clean: &Tensor, cond: &ConditionTokens, seed: u64) -> Result<(f64, ParameterStore)> {
        let (t, eps) = self.draw(seed);
        self.loss_with_draw(&self.params, clean, cond, t, &eps)
    }

    /// Samples a chunk in raw action units.
    pub fn sample(&self, cond: &ConditionTokens, steps: usize, seed: u64) -> Result<ActionChunk> {
        let shape = (self.config.chunk_len, self.config.action_dim);
        sample_chunk_with(shape, steps, seed, &self.norm, |z, t| self.forward(z, t, cond))
    }
}

/// Starting noise for chunk sampling.
pub fn chunk_noise(shape: (usize, usize), seed: u64) -> Tensor {
    let mut rng = stream(seed, &[0x5c4]);
    Tensor::matrix(shape.0, shape.1, normal_vec(&mut rng, shape.0 * shape.1)).expect("sized")
}

/// Euler-integrates `field` from seeded noise and de-normalizes.
pub fn sample_chunk_with<F>(shape: (usize, usize), steps: usize, seed: u64, norm: &ActionNorm, field: F) -> Result<ActionChunk>
where
    F: FnMut(&Tensor, f64) -> Result<Tensor>,
{
    let z = euler_integrate(chunk_noise(shape, seed), steps, field)?;
    ActionChunk::new(norm.denormalize(&z)?)
}
