//! Oracles shared by the integration test targets.
#![allow(dead_code)]

use protoflow::diffcore::Tensor;
use protoflow::rng::{normal_vec, stream};
use rand::Rng;

/// Exact K-means optimum by enumerating every labelling with no empty
/// cluster. Only for tiny instances (`K^L` labellings).
pub fn brute_force_kmeans(points: &Tensor, k: usize) -> f64 {
    let (n, d) = (points.rows(), points.cols());
    let total = k.pow(n as u32);
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    for code in 0..total {
        let mut c = code;
        for l in labels.iter_mut() {
            *l = c % k;
            c /= k;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for j in 0..d {
                sums[l][j] += points.row(p)[j];
            }
        }
        if counts.contains(&0) {
            continue;
        }
        let mut obj = 0.0;
        for (p, &l) in labels.iter().enumerate() {
            for j in 0..d {
                let m = sums[l][j] / counts[l] as f64;
                obj += (points.row(p)[j] - m).powi(2);
            }
        }
        best = best.min(obj);
    }
    best
}

/// `k` well-separated blobs: centres at distance >= 10 apart, each point
/// within 0.5 per coordinate of its centre. Every blob gets at least one
/// point.
pub fn separated_instance(n: usize, k: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = stream(seed, &[0xb10b]);
    let centres: Vec<Vec<f64>> = (0..k)
        .map(|c| (0..d).map(|j| if j == c % d { 10.0 * (1 + c / d) as f64 } else { 0.0 }).collect())
        .collect();
    let mut data = Vec::with_capacity(n * d);
    for p in 0..n {
        let c = if p < k { p } else { rng.random_range(0..k) };
        for j in 0..d {
            data.push(centres[c][j] + rng.random_range(-0.5..0.5));
        }
    }
    Tensor::matrix(n, d, data).unwrap()
}

pub fn random_points(n: usize, d: usize, seed: u64) -> Tensor {
    Tensor::matrix(n, d, normal_vec(&mut stream(seed, &[0x9a7]), n * d)).unwrap()
}
