use std::collections::BTreeMap;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::Stream;

/// Named model parameters, iterated in lexicographic name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name {name}"
            )));
        }
        self.tensors.insert(name, value);
        Ok(())
    }

    /// Weight `[fan_in, fan_out]` and bias `[fan_out]`, both drawn from
    /// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn add_linear(
        &mut self,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut Stream,
    ) -> Result<()> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let b = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        self.insert(format!("{prefix}.weight"), Tensor::matrix(fan_in, fan_out, w)?)?;
        self.insert(format!("{prefix}.bias"), Tensor::new(vec![fan_out], b)?)
    }

    /// Linear map whose weight and bias start at exactly zero.
    pub fn add_zero_linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> Result<()> {
        self.insert(format!("{prefix}.weight"), Tensor::zeros(&[fan_in, fan_out]))?;
        self.insert(format!("{prefix}.bias"), Tensor::zeros(&[fan_out]))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// SHA-256 over names, shapes, and raw little-endian values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update(name.as_bytes());
            for &s in t.shape() {
                h.update((s as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn bitwise_eq(&self, other: &ParameterStore) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((na, a), (nb, b))| na == nb && a.bitwise_eq(b))
    }
}

impl FromIterator<(String, Tensor)> for ParameterStore {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParameterStore {
            tensors: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn names_unique_and_sorted() {
        let mut p = ParameterStore::new();
        p.insert("b", Tensor::scalar(1.0)).unwrap();
        p.insert("a", Tensor::scalar(2.0)).unwrap();
        assert!(p.insert("a", Tensor::scalar(3.0)).is_err());
        let names: Vec<_> = p.names().cloned().collect();
        assert_eq!(names, ["a", "b"]);
    }

    #[test]
    fn linear_init_within_bounds() {
        let mut p = ParameterStore::new();
        p.add_linear("l", 16, 4, &mut stream(1, &[])).unwrap();
        let w = p.get("l.weight").unwrap();
        assert!(w.data().iter().all(|v| v.abs() <= 0.25));
        p.add_zero_linear("z", 3, 2).unwrap();
        assert!(p.get("z.weight").unwrap().data().iter().all(|&v| v == 0.0));
    }
}
