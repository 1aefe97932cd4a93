//! Differentiable numerics: tensors, named parameters, attention masks, a
//! reverse-mode tape, and a finite-difference gradient checker.

mod gemm;
mod gradcheck;
mod graph;
mod mask;
mod params;
mod tensor;

use std::rc::Rc;

pub use gradcheck::{gradient_check, relative_error, GradCheckReport};
pub use graph::{Gradients, Graph, Var, LAYER_NORM_EPS};
pub use mask::AttentionMask;
pub use params::ParameterStore;
pub use tensor::Tensor;

use crate::error::Result;

/// Single-head `softmax(QK^T/sqrt(d) + mask) V`.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor, mask: &AttentionMask) -> Result<Tensor> {
    let mut g = Graph::new();
    let (q, k, v) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
    let out = g.attention(q, k, v, 1, mask)?;
    g.check_finite()?;
    Ok(g.value(out).clone())
}

/// `LayerNorm(x) * (1 + gamma) + beta`, where `gamma` and `beta` are affine
/// maps of `t_embed` stored under `{prefix}.gamma` and `{prefix}.beta`.
///
/// `t_embed` has one row per conditioning group; row `r` of `x` is modulated
/// by group `groups[r]`.
pub fn adaln_modulate(
    g: &mut Graph,
    store: &ParameterStore,
    prefix: &str,
    x: Var,
    t_embed: Var,
    groups: Rc<[usize]>,
) -> Result<Var> {
    let gamma = g.dense(store, &format!("{prefix}.gamma"), t_embed)?;
    let beta = g.dense(store, &format!("{prefix}.beta"), t_embed)?;
    let normed = g.layer_norm(x);
    g.modulate(normed, gamma, beta, groups)
}

/// Registers the two affine maps used by [`adaln_modulate`].
pub fn add_adaln_params(
    store: &mut ParameterStore,
    prefix: &str,
    cond_dim: usize,
    dim: usize,
    rng: &mut crate::rng::Stream,
) -> Result<()> {
    store.add_linear(&format!("{prefix}.gamma"), cond_dim, dim, rng)?;
    store.add_linear(&format!("{prefix}.beta"), cond_dim, dim, rng)
}

/// Sinusoidal embedding of a scalar position into `dim` channels
/// (`[sin(p w_0), .., cos(p w_0), ..]`, `w_i = base^(-i / half)`).
pub fn sinusoidal(position: f64, dim: usize, base: f64) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let w = base.powf(-(i as f64) / half.max(1) as f64);
        out[i] = (position * w).sin();
        out[half + i] = (position * w).cos();
    }
    out
}
