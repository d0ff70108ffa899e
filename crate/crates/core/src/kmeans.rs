//! One-dimensional k-means (k-means++ seeding, Lloyd refinement, restarts).
//!
//! Values are sorted once; in one dimension every Lloyd assignment is a set of
//! contiguous runs separated by centroid midpoints, so each iteration costs
//! `O(k log n)` with prefix sums. Lloyd's fixed point is then polished with
//! Hartigan moves of whole groups of equal values across run boundaries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iterations: usize,
    /// Largest centroid move that still counts as converged.
    pub tolerance: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iterations: 100,
            tolerance: 1e-9,
        }
    }
}

/// Result of a 1-D clustering. Cluster `j` is the `j`-th smallest centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans1d {
    pub centroids: Vec<f64>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Fewer distinct values than clusters; each distinct value got its own cluster.
    pub degenerate: bool,
}

struct Sorted {
    values: Vec<f64>,
    prefix: Vec<f64>,
    prefix_sq: Vec<f64>,
}

impl Sorted {
    fn new(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut prefix = Vec::with_capacity(sorted.len() + 1);
        let mut prefix_sq = Vec::with_capacity(sorted.len() + 1);
        prefix.push(0.0);
        prefix_sq.push(0.0);
        let (mut acc, mut acc_sq) = (0.0, 0.0);
        for v in &sorted {
            acc += v;
            acc_sq += v * v;
            prefix.push(acc);
            prefix_sq.push(acc_sq);
        }
        Self {
            values: sorted,
            prefix,
            prefix_sq,
        }
    }

    /// Sum of squared deviations of `values[a..b]` from their mean.
    fn sse(&self, a: usize, b: usize) -> f64 {
        if b <= a {
            return 0.0;
        }
        let s = self.prefix[b] - self.prefix[a];
        (self.prefix_sq[b] - self.prefix_sq[a] - s * s / (b - a) as f64).max(0.0)
    }

    /// Start index of each cluster's run, plus `n` at the end.
    fn runs(&self, centroids: &[f64]) -> Vec<usize> {
        let mut starts = Vec::with_capacity(centroids.len() + 1);
        starts.push(0);
        for pair in centroids.windows(2) {
            let mid = 0.5 * (pair[0] + pair[1]);
            starts.push(self.values.partition_point(|&v| v <= mid));
        }
        starts.push(self.values.len());
        starts
    }

    fn inertia(&self, centroids: &[f64], runs: &[usize]) -> f64 {
        centroids
            .iter()
            .enumerate()
            .map(|(j, c)| {
                self.values[runs[j]..runs[j + 1]]
                    .iter()
                    .map(|v| (v - c) * (v - c))
                    .sum::<f64>()
            })
            .sum()
    }
}

fn kmeans_plus_plus(values: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centers = vec![values[rng.random_range(0..values.len())]];
    let mut d2: Vec<f64> = values.iter().map(|v| (v - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 {
                    pick = Some(i);
                    if target < *d {
                        break;
                    }
                    target -= d;
                }
            }
            values[pick.expect("positive total implies a positive distance")]
        } else {
            break;
        };
        centers.push(next);
        for (d, v) in d2.iter_mut().zip(values) {
            *d = d.min((v - next).powi(2));
        }
    }
    centers.sort_by(f64::total_cmp);
    centers
}

fn lloyd(sorted: &Sorted, mut centroids: Vec<f64>, cfg: &KMeansConfig) -> (Vec<f64>, f64) {
    for _ in 0..cfg.max_iterations {
        let runs = sorted.runs(&centroids);
        let mut moved: f64 = 0.0;
        for j in 0..centroids.len() {
            let (a, b) = (runs[j], runs[j + 1]);
            if b > a {
                let mean = (sorted.prefix[b] - sorted.prefix[a]) / (b - a) as f64;
                moved = moved.max((mean - centroids[j]).abs());
                centroids[j] = mean;
            }
        }
        centroids.sort_by(f64::total_cmp);
        if moved <= cfg.tolerance {
            break;
        }
    }
    let runs = sorted.runs(&centroids);
    let inertia = sorted.inertia(&centroids, &runs);
    (centroids, inertia)
}

/// Moves the block of equal values on either side of each run boundary to
/// the neighbouring run while that lowers the total sum of squares. Such a
/// partition is also a Lloyd fixed point, so labels by nearest centroid agree
/// with the runs.
fn hartigan(sorted: &Sorted, centroids: Vec<f64>) -> (Vec<f64>, f64) {
    let mut runs = sorted.runs(&centroids);
    if runs.windows(2).any(|r| r[0] == r[1]) {
        let inertia = sorted.inertia(&centroids, &runs);
        return (centroids, inertia);
    }
    let v = &sorted.values;
    loop {
        let mut improved = false;
        for j in 1..centroids.len() {
            let (a, m, b) = (runs[j - 1], runs[j], runs[j + 1]);
            let current = sorted.sse(a, m) + sorted.sse(m, b);
            let tol = 1e-12 * (1.0 + current);
            let down = a + v[a..m].partition_point(|&x| x < v[m - 1]);
            let up = m + v[m..b].partition_point(|&x| x <= v[m]);
            for cut in [down, up] {
                if cut > a && cut < b && sorted.sse(a, cut) + sorted.sse(cut, b) < current - tol {
                    runs[j] = cut;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            break;
        }
    }
    let centroids: Vec<f64> = runs
        .windows(2)
        .map(|r| (sorted.prefix[r[1]] - sorted.prefix[r[0]]) / (r[1] - r[0]) as f64)
        .collect();
    let inertia = sorted.inertia(&centroids, &runs);
    (centroids, inertia)
}

/// Nearest-centroid label for a value; ties go to the lower cluster.
fn assign(v: f64, centroids: &[f64]) -> usize {
    centroids
        .windows(2)
        .take_while(|pair| v > 0.5 * (pair[0] + pair[1]))
        .count()
}

/// Clusters `values` into `k` groups. Deterministic for a fixed `seed`; each
/// restart draws from its own ChaCha stream so restarts may run in any order.
pub fn kmeans_1d(values: &[f64], k: usize, seed: u64, cfg: &KMeansConfig) -> Result<KMeans1d> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if k == 0 {
        return Err(Error::Domain("k must be positive".into()));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite value {bad}")));
    }
    let sorted = Sorted::new(values);
    let mut distinct = sorted.values.clone();
    distinct.dedup();
    if distinct.len() < k {
        let labels = values
            .iter()
            .map(|v| distinct.partition_point(|d| d < v))
            .collect();
        return Ok(KMeans1d {
            centroids: distinct,
            labels,
            inertia: 0.0,
            degenerate: true,
        });
    }

    let restarts = cfg.restarts.max(1);
    let (centroids, inertia) = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let init = kmeans_plus_plus(&sorted.values, k, &mut rng);
            hartigan(&sorted, lloyd(&sorted, init, cfg).0)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(None, |best: Option<(Vec<f64>, f64)>, cand| match best {
            Some(b) if b.1 <= cand.1 => Some(b),
            _ => Some(cand),
        })
        .expect("at least one restart");

    let labels = values.iter().map(|&v| assign(v, &centroids)).collect();
    Ok(KMeans1d {
        centroids,
        labels,
        inertia,
        degenerate: false,
    })
}
