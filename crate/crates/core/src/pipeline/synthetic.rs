//! Latent sequences with known linear dynamics, for checking that Stage I
//! learns to predict rather than copy.

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::foresight::{sample_next_frame, FrameField, RolloutConfig};
use crate::rng::{derive_seed, normal_vec, stream};

/// `z_{k+1} = z_k M` applied to every token, with `M` a block rotation.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearDynamics {
    pub transition: Tensor,
    pub tokens: usize,
}

impl LinearDynamics {
    /// Rotations by `angles[i]` in the channel planes `(2i, 2i+1)`.
    pub fn block_rotation(tokens: usize, angles: &[f64]) -> Self {
        let d = 2 * angles.len();
        let mut m = vec![0.0; d * d];
        for (i, &a) in angles.iter().enumerate() {
            let (s, c) = a.sin_cos();
            let (r, q) = (2 * i, 2 * i + 1);
            m[r * d + r] = c;
            m[r * d + q] = s;
            m[q * d + r] = -s;
            m[q * d + q] = c;
        }
        LinearDynamics {
            transition: Tensor::matrix(d, d, m).expect("sized"),
            tokens,
        }
    }

    pub fn dim(&self) -> usize {
        self.transition.rows()
    }

    pub fn advance(&self, z: &Tensor) -> Tensor {
        let d = self.dim();
        let m = self.transition.data();
        let mut out = vec![0.0; z.len()];
        for (row, o) in z.data().chunks(d).zip(out.chunks_mut(d)) {
            for (j, oj) in o.iter_mut().enumerate() {
                *oj = (0..d).map(|k| row[k] * m[k * d + j]).sum();
            }
        }
        Tensor::matrix(z.rows(), d, out).expect("sized")
    }

    pub fn sequence(&self, frames: usize, seed: u64) -> Vec<Tensor> {
        let (l, d) = (self.tokens, self.dim());
        let mut z = Tensor::matrix(l, d, normal_vec(&mut stream(seed, &[0x11d]), l * d)).expect("sized");
        let mut out = Vec::with_capacity(frames);
        for _ in 0..frames {
            out.push(z.clone());
            z = self.advance(&z);
        }
        out
    }

    pub fn sequences(&self, count: usize, frames: usize, seed: u64) -> Vec<Vec<Tensor>> {
        (0..count).map(|i| self.sequence(frames, derive_seed(seed, &[i as u64]))).collect()
    }
}

/// Mean per-entry squared error of one-step prediction from the first
/// `context` frames of each sequence, and of repeating the last context
/// frame.
pub fn one_step_errors<F: FrameField>(field: &F, sequences: &[Vec<Tensor>], context: usize, config: &RolloutConfig) -> Result<(f64, f64)> {
    let (mut model, mut copy, mut n) = (0.0, 0.0, 0usize);
    for (i, seq) in sequences.iter().enumerate() {
        if seq.len() <= context || context == 0 {
            return Err(Error::InvalidArgument("sequence too short for the context".into()));
        }
        let rc = RolloutConfig {
            seed: derive_seed(config.seed, &[i as u64]),
            ..*config
        };
        let pred = sample_next_frame(field, &seq[..context], &rc)?;
        let truth = &seq[context];
        let last = &seq[context - 1];
        for ((p, t), c) in pred.data().iter().zip(truth.data()).zip(last.data()) {
            model += (p - t) * (p - t);
            copy += (c - t) * (c - t);
            n += 1;
        }
    }
    Ok((model / n as f64, copy / n as f64))
}
