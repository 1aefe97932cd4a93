use crate::diffcore::{gradient_check, GradCheckReport, Graph, Tensor};
use crate::error::Result;
use crate::foresight::{FlowDraw, ForesightConfig, ForesightModel};
use crate::policy::{ConditionTokens, PolicyConfig, PolicyModel};
use crate::rng::{normal_vec, stream};

pub const GRAD_CHECK_EPS: f64 = 1e-5;
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

fn random(rows: usize, cols: usize, seed: u64, label: u64) -> Tensor {
    Tensor::matrix(rows, cols, normal_vec(&mut stream(seed, &[label]), rows * cols)).expect("sized")
}

/// Foresight loss gradient on a 2-frame, 2x2-patch, 4-channel, 1-layer model.
pub fn grad_check_foresight(seed: u64) -> Result<GradCheckReport> {
    let cfg = ForesightConfig {
        n_layers: 1,
        hidden: 8,
        heads: 2,
        mlp_ratio: 2,
        max_frames: 2,
        patch_rows: 2,
        patch_cols: 2,
        feat_dim: 4,
    };
    let model = ForesightModel::new(cfg, seed)?;
    let clean = vec![random(4, 4, seed, 1), random(4, 4, seed, 2)];
    let draw = FlowDraw::sample(seed, 2, 4, 4);
    gradient_check(|p| model.loss_with_draw(p, &clean, &draw), &model.params, GRAD_CHECK_EPS)
}

/// Policy loss gradient on a 1-layer model whose object branch has been
/// moved off zero so that every parameter receives gradient.
pub fn grad_check_policy(seed: u64) -> Result<GradCheckReport> {
    let cfg = PolicyConfig {
        n_layers: 1,
        hidden: 8,
        heads: 2,
        mlp_ratio: 2,
        chunk_len: 4,
        action_dim: 3,
        state_dim: 3,
        n_tasks: 2,
        feat_dim: 4,
    };
    let mut model = PolicyModel::new(cfg.clone(), seed)?;
    for (i, (name, t)) in model.params.iter_mut().enumerate() {
        if name.contains("v_obj") {
            let fill = random(1, t.len(), seed, 100 + i as u64);
            t.data_mut().iter_mut().zip(fill.data()).for_each(|(a, b)| *a = 0.3 * b);
        }
    }
    let cond = ConditionTokens {
        task_id: 1,
        scene: random(1, 4, seed, 3).into_data(),
        state: random(1, 3, seed, 4).into_data(),
        prototypes: random(3, cfg.proto_dim(), seed, 5),
    };
    let chunk = random(4, 3, seed, 6);
    let eps = random(4, 3, seed, 7);
    gradient_check(|p| model.loss_with_draw(p, &chunk, &cond, 0.37, &eps), &model.params, GRAD_CHECK_EPS)
}

/// Mean-squared output of the policy forward, differentiated w.r.t. all
/// parameters.
pub fn policy_output_energy(model: &PolicyModel, params: &crate::diffcore::ParameterStore, x: &Tensor, t: f64, cond: &ConditionTokens) -> Result<(f64, crate::diffcore::ParameterStore)> {
    let mut g = Graph::new();
    let o = model.forward_graph(&mut g, params, x, t, cond)?;
    let n = g.value(o).len() as f64;
    let zero = Tensor::zeros(g.value(o).shape());
    let l = g.squared_error(o, &zero, 1.0 / n)?;
    let grads = g.backward(l)?;
    Ok((g.value(l).item(), grads.for_params(params)))
}
