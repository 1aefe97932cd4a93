use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Per-dimension z-score statistics for actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const MIN_STD: f64 = 1e-6;

impl ActionNorm {
    pub fn identity(dim: usize) -> Self {
        ActionNorm {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits mean and standard deviation over the rows of `rows`; near-constant
    /// dimensions keep unit scale.
    pub fn fit<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            if r.len() != dim {
                return Err(Error::Shape(format!("action row of {} vs {dim}", r.len())));
            }
            n += 1;
            for i in 0..dim {
                sum[i] += r[i];
                sq[i] += r[i] * r[i];
            }
        }
        if n == 0 {
            return Err(Error::InvalidArgument("no actions to fit".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = (0..dim)
            .map(|i| {
                let var = (sq[i] / n as f64 - mean[i] * mean[i]).max(0.0);
                let s = var.sqrt();
                if s < MIN_STD {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(ActionNorm { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, t: &Tensor) -> Result<()> {
        if t.cols() != self.dim() {
            return Err(Error::Shape(format!("chunk width {} vs {}", t.cols(), self.dim())));
        }
        Ok(())
    }

    pub fn normalize(&self, raw: &Tensor) -> Result<Tensor> {
        self.check(raw)?;
        let d = self.dim();
        let data = raw
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % d]) / self.std[i % d])
            .collect();
        Tensor::new(raw.shape().to_vec(), data)
    }

    pub fn denormalize(&self, z: &Tensor) -> Result<Tensor> {
        self.check(z)?;
        let d = self.dim();
        let data = z
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.std[i % d] + self.mean[i % d])
            .collect();
        Tensor::new(z.shape().to_vec(), data)
    }
}

/// `L_a x D` actions in raw units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionChunk {
    pub actions: Tensor,
}

impl ActionChunk {
    pub fn new(actions: Tensor) -> Result<Self> {
        if actions.shape().len() != 2 {
            return Err(Error::Shape(format!("action chunk must be a matrix, got {:?}", actions.shape())));
        }
        if !actions.is_finite() {
            return Err(Error::NonFinite("action chunk".into()));
        }
        Ok(ActionChunk { actions })
    }

    pub fn len(&self) -> usize {
        self.actions.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.rows() == 0
    }

    pub fn action(&self, i: usize) -> &[f64] {
        self.actions.row(i)
    }
}
