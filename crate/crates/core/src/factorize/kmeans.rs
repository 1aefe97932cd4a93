use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// `[K, d]`.
    pub centroids: Tensor,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub objective: f64,
    pub iterations_run: usize,
    /// True when a full assignment pass left every label unchanged.
    pub converged: bool,
    /// Objective after each assignment + update iteration.
    pub trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `sum_k sum_{l in C_k} |z_l - c_k|^2`.
pub fn kmeans_objective(points: &Tensor, centroids: &Tensor, assignments: &[usize]) -> Result<f64> {
    if assignments.len() != points.rows() || points.cols() != centroids.cols() {
        return Err(Error::Shape("objective: points, centroids and assignments disagree".into()));
    }
    let mut total = 0.0;
    for (l, &k) in assignments.iter().enumerate() {
        if k >= centroids.rows() {
            return Err(Error::InvalidArgument(format!("assignment {k} out of range")));
        }
        total += sq_dist(points.row(l), centroids.row(k));
    }
    Ok(total)
}

/// Nearest centroid per point, lowest index on ties.
pub fn nearest_assignments(points: &Tensor, centroids: &Tensor) -> Vec<usize> {
    (0..points.rows())
        .map(|l| {
            let p = points.row(l);
            let mut best = (0, f64::INFINITY);
            for k in 0..centroids.rows() {
                let d = sq_dist(p, centroids.row(k));
                if d < best.1 {
                    best = (k, d);
                }
            }
            best.0
        })
        .collect()
}

fn kmeans_pp(points: &Tensor, k: usize, seed: u64) -> Tensor {
    let (n, d) = (points.rows(), points.cols());
    let mut rng = stream(seed, &[0xc1a5]);
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = (0..n).map(|l| sq_dist(points.row(l), points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (l, &w) in dist.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(l);
                    if u < w {
                        break;
                    }
                    u -= w;
                }
            }
            pick.expect("positive total")
        } else {
            // every point coincides with a centre already
            (0..n).find(|l| !chosen.contains(l)).expect("k <= n")
        };
        chosen.push(next);
        for (l, dl) in dist.iter_mut().enumerate() {
            *dl = dl.min(sq_dist(points.row(l), points.row(next)));
        }
    }
    let data = chosen.iter().flat_map(|&l| points.row(l).to_vec()).collect();
    Tensor::matrix(k, d, data).expect("sized")
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(points: &Tensor, centroids: &Tensor, assign: &mut [usize]) {
    let k = centroids.rows();
    loop {
        let mut counts = vec![0usize; k];
        for &a in assign.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut best: Option<(usize, f64)> = None;
        for (l, &a) in assign.iter().enumerate() {
            if counts[a] < 2 {
                continue;
            }
            let d = sq_dist(points.row(l), centroids.row(a));
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((l, d));
            }
        }
        let (l, _) = best.expect("k <= n leaves a multi-member cluster");
        assign[l] = empty;
    }
}

fn means(points: &Tensor, assign: &[usize], k: usize) -> Tensor {
    let d = points.cols();
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    for (l, &a) in assign.iter().enumerate() {
        counts[a] += 1;
        for (s, v) in sums[a * d..(a + 1) * d].iter_mut().zip(points.row(l)) {
            *s += v;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        for s in &mut sums[c * d..(c + 1) * d] {
            *s /= n as f64;
        }
    }
    Tensor::matrix(k, d, sums).expect("sized")
}

/// Lloyd's algorithm from a k-means++ start.
pub fn lloyd_kmeans(points: &Tensor, k: usize, max_iter: usize, seed: u64) -> Result<ClusterResult> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("need 1 <= K <= L, got K={k}, L={n}")));
    }
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be >= 1".into()));
    }
    if !points.is_finite() {
        return Err(Error::NonFinite("k-means input".into()));
    }
    let mut centroids = kmeans_pp(points, k, seed);
    let mut assign: Option<Vec<usize>> = None;
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        let mut next = nearest_assignments(points, &centroids);
        repair_empty(points, &centroids, &mut next);
        if assign.as_ref() == Some(&next) {
            converged = true;
            break;
        }
        centroids = means(points, &next, k);
        trace.push(kmeans_objective(points, &centroids, &next)?);
        assign = Some(next);
    }
    let assignments = assign.expect("max_iter >= 1");
    if !converged {
        let mut check = nearest_assignments(points, &centroids);
        repair_empty(points, &centroids, &mut check);
        converged = check == assignments;
    }
    Ok(ClusterResult {
        objective: *trace.last().expect("non-empty"),
        iterations_run: trace.len(),
        centroids,
        assignments,
        converged,
        trace,
    })
}

/// Lowest-objective result over `restarts` independently seeded runs; the
/// earliest restart wins ties.
pub fn best_of_restarts(points: &Tensor, k: usize, max_iter: usize, restarts: usize, seed: u64) -> Result<ClusterResult> {
    let mut best: Option<ClusterResult> = None;
    for r in 0..restarts.max(1) {
        let res = lloyd_kmeans(points, k, max_iter, derive_seed(seed, &[r as u64]))?;
        if best.as_ref().is_none_or(|b| res.objective < b.objective) {
            best = Some(res);
        }
    }
    Ok(best.expect("at least one restart"))
}
