//! Lloyd's k-means with k-means++ seeding.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, shape_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// Cluster index of every input point.
    pub assignments: Vec<usize>,
    /// `k × dim`; rows of clusters that ended up empty keep their last position.
    pub centroids: Array2<f64>,
    /// Sum of squared distances after each assignment step.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeans {
    pub fn objective(&self) -> f64 {
        self.objective_history.last().copied().unwrap_or(0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn seed_centroids(points: &[Array1<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p.as_slice().unwrap(), points[chosen[0]].as_slice().unwrap()))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
                pick = i;
            }
            pick
        } else {
            // every remaining point coincides with a chosen centre
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            let d = sq_dist(p.as_slice().unwrap(), points[next].as_slice().unwrap());
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    chosen
}

/// Partitions `points` into at most `k` groups. Deterministic for a fixed
/// seed; stops when assignments stop changing or after `max_iter` rounds.
pub fn kmeans(points: &[Array1<f64>], k: usize, seed: u64, max_iter: usize) -> Result<KMeans> {
    if k == 0 {
        return Err(invalid("k must be positive"));
    }
    if points.is_empty() {
        return Err(invalid("cannot cluster an empty set"));
    }
    if k > points.len() {
        return Err(invalid(format!("k = {k} exceeds the number of points ({})", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(shape_err("embeddings have differing dimensions"));
    }
    let points: Vec<Array1<f64>> = points.iter().map(|p| p.as_standard_layout().to_owned()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Array2::zeros((k, dim));
    for (c, idx) in seed_centroids(&points, k, &mut rng).into_iter().enumerate() {
        centroids.row_mut(c).assign(&points[idx]);
    }

    let mut assignments = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter.max(1) {
        iterations += 1;
        let mut changed = false;
        let mut objective = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (best, d) = (0..k)
                .map(|c| (c, sq_dist(p.as_slice().unwrap(), centroids.row(c).as_slice().unwrap())))
                .fold((0, f64::INFINITY), |b, x| if x.1 < b.1 { x } else { b });
            objective += d;
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        history.push(objective);
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros((k, dim));
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            let mut row = sums.row_mut(a);
            row += p;
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mean = &sums.row(c) / counts[c] as f64;
                centroids.row_mut(c).assign(&mean);
            }
        }
    }
    Ok(KMeans { assignments, centroids, objective_history: history, iterations })
}
