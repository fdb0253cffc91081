//! Seeded k-means (greedy k-means++ seeding, Lloyd iterations).

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// k × d
    pub centroids: DMatrix<f64>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.nrows()];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }
}

fn weighted_pick(weights: &[f64], mut target: f64) -> usize {
    for (i, &w) in weights.iter().enumerate() {
        if target < w {
            return i;
        }
        target -= w;
    }
    // rounding left a remainder: last positive weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

fn sq_dist_row(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, j: usize) -> f64 {
    (0..x.ncols()).map(|t| (x[(i, t)] - c[(j, t)]).powi(2)).sum()
}

/// Cluster rows of `x` into `k` groups. Panics if `k == 0` or `k > n`.
pub fn kmeans(x: &DMatrix<f64>, k: usize, seed: u64, max_iter: usize) -> KMeansResult {
    let n = x.nrows();
    assert!(k >= 1 && k <= n, "k-means needs 1 <= k <= n (k={k}, n={n})");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = x.ncols();

    let mut centroids = DMatrix::zeros(k, d);
    let first = rng.random_range(0..n);
    centroids.set_row(0, &x.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist_row(x, i, &centroids, 0)).collect();
    let trials = 2 + (k as f64).ln().floor() as usize;
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        if !(total > 0.0) {
            // all points coincide with a chosen centroid
            let pick = rng.random_range(0..n);
            centroids.set_row(c, &x.row(pick));
            continue;
        }
        // greedy seeding: draw several D²-weighted candidates, keep the one
        // that lowers the potential most
        let mut best: Option<(f64, Vec<f64>, usize)> = None;
        for _ in 0..trials {
            let cand = weighted_pick(&nearest, rng.random::<f64>() * total);
            let updated: Vec<f64> = (0..n)
                .map(|i| nearest[i].min((0..d).map(|t| (x[(i, t)] - x[(cand, t)]).powi(2)).sum()))
                .collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.0) {
                best = Some((potential, updated, cand));
            }
        }
        let (_, updated, pick) = best.expect("at least one trial");
        centroids.set_row(c, &x.row(pick));
        nearest = updated;
    }

    let mut assignment = vec![usize::MAX; n];
    let mut iterations = 0;
    for it in 0..max_iter.max(1) {
        iterations = it + 1;
        let mut changed = false;
        for (i, slot) in assignment.iter_mut().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for j in 0..k {
                let dist = sq_dist_row(x, i, &centroids, j);
                if dist < best.0 {
                    best = (dist, j);
                }
            }
            if *slot != best.1 {
                *slot = best.1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = DMatrix::<f64>::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            counts[c] += 1;
            for t in 0..d {
                sums[(c, t)] += x[(i, t)];
            }
        }
        for j in 0..k {
            // an empty cluster keeps its previous centroid
            if counts[j] > 0 {
                for t in 0..d {
                    centroids[(j, t)] = sums[(j, t)] / counts[j] as f64;
                }
            }
        }
    }
    KMeansResult { centroids, assignment, iterations }
}
