//! Spherical k-means (Lloyd's algorithm with unit-norm centroids).
//!
//! Seeding is k-means++ with a fixed seed. Centroids are L2-renormalized
//! after every update so cluster ranking stays consistent with cosine
//! search; because every centroid is always an attainable unit vector, the
//! clustering objective is non-increasing across iterations.

use rand::Rng;

use crate::linalg::{l2_norm, squared_distance};
use crate::rng::sub_rng;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct KmeansResult {
    /// k x dim row-major unit-norm centroids.
    pub centroids: Vec<f64>,
    /// Cluster index per input vector.
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroid after each
    /// assignment pass.
    pub objective_trace: Vec<f64>,
}

fn nearest_centroid(v: &[f64], centroids: &[f64], k: usize, dim: usize) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for c in 0..k {
        let d = squared_distance(v, &centroids[c * dim..(c + 1) * dim]);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

/// Cluster `n` unit vectors (`data` is n x dim row-major) into `k` clusters.
pub fn kmeans(data: &[f64], dim: usize, k: usize, iters: usize, seed: u64) -> Result<KmeansResult> {
    let n = data.len() / dim;
    if n == 0 || data.len() % dim != 0 {
        return Err(Error::Empty("kmeans input".into()));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k {k} must be in 1..={n}"
        )));
    }
    let mut rng = sub_rng(seed, "kmeans");

    // k-means++ seeding.
    let mut centroids = vec![0.0; k * dim];
    let first = rng.random_range(0..n);
    centroids[..dim].copy_from_slice(&data[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = (0..n)
        .map(|i| squared_distance(&data[i * dim..(i + 1) * dim], &centroids[..dim]))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let choice = if total <= 0.0 {
            // All remaining points coincide with chosen centroids; take the
            // first unused position deterministically.
            (0..n)
                .find(|&i| {
                    (0..c).all(|cc| data[i * dim..(i + 1) * dim] != centroids[cc * dim..(cc + 1) * dim])
                })
                .unwrap_or(0)
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        centroids[c * dim..(c + 1) * dim]
            .copy_from_slice(&data[choice * dim..(choice + 1) * dim]);
        for i in 0..n {
            let d = squared_distance(
                &data[i * dim..(i + 1) * dim],
                &centroids[c * dim..(c + 1) * dim],
            );
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }

    let mut assignments = vec![0usize; n];
    let mut objective_trace = Vec::with_capacity(iters);
    for _ in 0..iters {
        // Assignment pass.
        let mut objective = 0.0;
        for i in 0..n {
            let (c, d) = nearest_centroid(&data[i * dim..(i + 1) * dim], &centroids, k, dim);
            assignments[i] = c;
            objective += d;
        }
        objective_trace.push(objective);

        // Update pass: normalized cluster means.
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignments[i];
            counts[c] += 1;
            let row = &data[i * dim..(i + 1) * dim];
            let acc = &mut sums[c * dim..(c + 1) * dim];
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed an empty cluster from the farthest point of the
                // largest cluster (ties: lower cluster, then lower point).
                let largest = (0..k).max_by_key(|&cc| (counts[cc], std::cmp::Reverse(cc))).unwrap();
                let mut far_i = None;
                let mut far_d = -1.0;
                for i in 0..n {
                    if assignments[i] == largest {
                        let d = squared_distance(
                            &data[i * dim..(i + 1) * dim],
                            &centroids[largest * dim..(largest + 1) * dim],
                        );
                        if d > far_d {
                            far_d = d;
                            far_i = Some(i);
                        }
                    }
                }
                let i = far_i.expect("largest cluster is non-empty");
                centroids[c * dim..(c + 1) * dim]
                    .copy_from_slice(&data[i * dim..(i + 1) * dim]);
                continue;
            }
            let mean: Vec<f64> = sums[c * dim..(c + 1) * dim]
                .iter()
                .map(|s| s / counts[c] as f64)
                .collect();
            let norm = l2_norm(&mean);
            if norm > 1e-12 {
                for (slot, &m) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&mean) {
                    *slot = m / norm;
                }
            }
            // A (near-)zero mean keeps the previous centroid.
        }
    }

    // Final assignment against the final centroids.
    let mut objective = 0.0;
    for i in 0..n {
        let (c, d) = nearest_centroid(&data[i * dim..(i + 1) * dim], &centroids, k, dim);
        assignments[i] = c;
        objective += d;
    }
    objective_trace.push(objective);

    Ok(KmeansResult {
        centroids,
        assignments,
        objective_trace,
    })
}
