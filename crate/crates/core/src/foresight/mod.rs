//! Latent foresight: a block-causal flow-matching transformer over frame
//! sequences of patch tokens, plus its Euler sampler and rollout.

mod flow;
mod mask;
mod model;

pub use flow::{euler_integrate, flow_interpolate, flow_target, FlowSample};
pub use mask::build_block_causal_mask;
pub use model::{
    rollout, sample_next_frame, sampler_noise, FlowDraw, ForesightConfig, ForesightModel, FrameField, RolloutConfig,
};
pub(crate) use model::time_features;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{gradient_check, Tensor};
    use crate::rng::{normal_vec, stream};

    fn tiny() -> ForesightConfig {
        ForesightConfig {
            n_layers: 2,
            hidden: 12,
            heads: 2,
            mlp_ratio: 2,
            max_frames: 5,
            patch_rows: 2,
            patch_cols: 2,
            feat_dim: 3,
        }
    }

    fn frames(n: usize, cfg: &ForesightConfig, seed: u64) -> Vec<Tensor> {
        let mut rng = stream(seed, &[1]);
        (0..n)
            .map(|_| Tensor::matrix(cfg.tokens(), cfg.feat_dim, normal_vec(&mut rng, cfg.tokens() * cfg.feat_dim)).unwrap())
            .collect()
    }

    fn stacked(fs: &[Tensor]) -> Tensor {
        let cols = fs[0].cols();
        let data: Vec<f64> = fs.iter().flat_map(|f| f.data().iter().copied()).collect();
        Tensor::matrix(data.len() / cols, cols, data).unwrap()
    }

    #[test]
    fn future_frames_do_not_leak() {
        let cfg = tiny();
        let m = ForesightModel::new(cfg.clone(), 3).unwrap();
        let mut fs = frames(4, &cfg, 0);
        let times = [0.2, 0.9, 0.4, 0.6];
        let a = m.forward(&stacked(&fs), &times).unwrap();
        fs[2] = frames(1, &cfg, 99).remove(0);
        let mut t2 = times;
        t2[3] = 0.05;
        let b = m.forward(&stacked(&fs), &t2).unwrap();
        let n = 2 * cfg.tokens() * cfg.feat_dim;
        assert!(a.data()[..n].iter().zip(&b.data()[..n]).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.data()[n..].iter().zip(&b.data()[n..]).any(|(x, y)| x != y));
    }

    #[test]
    fn parallel_loss_equals_sequential_sum() {
        let cfg = tiny();
        let m = ForesightModel::new(cfg.clone(), 5).unwrap();
        let fs = frames(5, &cfg, 2);
        let draw = FlowDraw::sample(11, 5, cfg.tokens(), cfg.feat_dim);
        let (par, _) = m.loss_with_draw(&m.params, &fs, &draw).unwrap();
        let seq: f64 = m.sequential_frame_losses(&fs, &draw).unwrap().iter().sum();
        assert!((par - seq).abs() <= 1e-10 * par.abs().max(1.0), "{par} {seq}");
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let cfg = ForesightConfig {
            n_layers: 1,
            hidden: 8,
            feat_dim: 4,
            ..tiny()
        };
        let m = ForesightModel::new(cfg.clone(), 0).unwrap();
        let fs = frames(2, &cfg, 0);
        let draw = FlowDraw::sample(0, 2, cfg.tokens(), cfg.feat_dim);
        let rep = gradient_check(|p| m.loss_with_draw(p, &fs, &draw), &m.params, 1e-5).unwrap();
        assert!(rep.max_relative_error <= 1e-4, "{rep:?}");
    }

    #[test]
    fn loss_is_deterministic_per_seed() {
        let cfg = tiny();
        let m = ForesightModel::new(cfg.clone(), 1).unwrap();
        let fs = frames(3, &cfg, 0);
        let (a, ga) = m.loss(&fs, 4).unwrap();
        let (b, gb) = m.loss(&fs, 4).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(ga.bitwise_eq(&gb));
        let (c, _) = m.loss(&fs, 5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn forward_rejects_bad_geometry() {
        let cfg = tiny();
        let m = ForesightModel::new(cfg.clone(), 1).unwrap();
        let fs = frames(6, &cfg, 0);
        assert!(m.forward(&stacked(&fs), &[0.5; 6]).is_err());
        assert!(m.forward(&stacked(&fs[..2]), &[0.5]).is_err());
        assert!(m.forward(&stacked(&fs[..1]), &[1.5]).is_err());
    }

    struct Oracle {
        target: Tensor,
        config: RolloutConfig,
    }

    impl FrameField for Oracle {
        fn frame_shape(&self) -> (usize, usize) {
            (self.target.rows(), self.target.cols())
        }
        fn max_frames(&self) -> usize {
            8
        }
        fn next_frame_velocity(&self, history: &[Tensor], _z: &Tensor, _t: f64) -> crate::Result<Tensor> {
            let (l, d) = self.frame_shape();
            let eps = sampler_noise(&self.config, history.len(), l, d);
            Ok(Tensor::matrix(l, d, flow_target(self.target.data(), eps.data())?)?)
        }
    }

    #[test]
    fn oracle_field_recovers_target() {
        let target = Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        for steps in [1, 2, 4, 8, 16] {
            let config = RolloutConfig { horizon: 3, denoise_steps: steps, seed: 9 };
            let o = Oracle { target: target.clone(), config };
            let out = rollout(&o, &[target.clone()], &config).unwrap();
            assert_eq!(out.len(), 3);
            for f in out {
                assert!(f.max_abs_diff(&target) <= 1e-12);
            }
        }
    }

    #[test]
    fn rollout_respects_frame_budget() {
        let cfg = tiny();
        let m = ForesightModel::new(cfg.clone(), 1).unwrap();
        let hist = frames(2, &cfg, 0);
        let rc = RolloutConfig { horizon: 3, denoise_steps: 2, seed: 0 };
        let a = rollout(&m, &hist, &rc).unwrap();
        let b = rollout(&m, &hist, &rc).unwrap();
        assert_eq!(a.len(), 3);
        assert!(a.iter().zip(&b).all(|(x, y)| x.bitwise_eq(y)));
        let rc = RolloutConfig { horizon: 4, ..rc };
        assert!(rollout(&m, &hist, &rc).is_err());
        assert!(sample_next_frame(&m, &[], &rc).is_err());
    }
}
