use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{sq_dist, Matrix};
use crate::rng::{stream, SimRng, Stream};

pub const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansFit {
    pub centroids: Matrix,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    /// Objective after every assignment step.
    pub objective_trace: Vec<f64>,
    pub restart: usize,
}

fn nearest(x: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = sq_dist(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(x: &Matrix, k: usize, rng: &mut SimRng) -> Matrix {
    let n = x.rows();
    let mut centroids = Matrix::zeros(k, x.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(pick)));
        }
    }
    centroids
}

fn lloyd(x: &Matrix, mut centroids: Matrix, restart: usize) -> KMeansFit {
    let (n, k, d) = (x.rows(), centroids.rows(), x.cols());
    let mut assignment = vec![0; n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let mut inertia = 0.0;
        for (i, a) in assignment.iter_mut().enumerate() {
            let (c, dist) = nearest(x.row(i), &centroids);
            *a = c;
            inertia += dist;
        }
        trace.push(inertia);
        if iterations == KMEANS_MAX_ITER {
            break;
        }
        iterations += 1;
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            counts[c] += 1;
            for (s, &v) in sums.row_mut(c).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            // empty clusters keep their previous centroid
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            let new: Vec<f64> = sums.row(c).iter().map(|s| s * inv).collect();
            shift = shift.max(sq_dist(&new, centroids.row(c)).sqrt());
            centroids.row_mut(c).copy_from_slice(&new);
        }
        if shift <= KMEANS_TOL {
            let mut inertia = 0.0;
            for (i, a) in assignment.iter_mut().enumerate() {
                let (c, dist) = nearest(x.row(i), &centroids);
                *a = c;
                inertia += dist;
            }
            trace.push(inertia);
            break;
        }
    }
    KMeansFit {
        inertia: *trace.last().expect("at least one assignment"),
        centroids,
        assignment,
        iterations,
        objective_trace: trace,
        restart,
    }
}

/// k-means++ with [`KMEANS_RESTARTS`] restarts; the lowest-inertia fit wins
/// (earliest restart on ties). Restart `r` draws from stream `(seed, KMeans, r)`.
pub fn kmeans(x: &Matrix, k: usize, seed: u64) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > x.rows() {
        return Err(Error::invalid(format!("k={k} exceeds {} points", x.rows())));
    }
    let fits: Vec<KMeansFit> = (0..KMEANS_RESTARTS)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, Stream::KMeans, r as u64);
            let init = plus_plus_init(x, k, &mut rng);
            lloyd(x, init, r)
        })
        .collect();
    let mut best = None::<KMeansFit>;
    for f in fits {
        if best.as_ref().is_none_or(|b| f.inertia < b.inertia) {
            best = Some(f);
        }
    }
    Ok(best.expect("restarts > 0"))
}

/// Distance of every point to its nearest centroid.
pub fn anomaly_scores(x: &Matrix, fit: &KMeansFit) -> Vec<f64> {
    (0..x.rows())
        .map(|i| nearest(x.row(i), &fit.centroids).1.sqrt())
        .collect()
}
