use super::{GmmParams, SIGMA_FLOOR};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng};

const MAX_LLOYD_ITERS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    pub counts: Vec<usize>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(y: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.row_iter().enumerate() {
        let d = sq_dist(y, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// k-means++ seeding: first centre uniform, later ones drawn with
/// probability proportional to squared distance from the nearest chosen one.
fn plus_plus_seeds(ys: &Matrix, m: usize, rng: &mut SeededRng) -> Matrix {
    let n = ys.rows();
    let mut chosen = vec![rng.below(n)];
    let mut d2: Vec<f64> = ys.row_iter().map(|y| sq_dist(y, ys.row(chosen[0]))).collect();
    while chosen.len() < m {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && *w > 0.0 {
                    pick = i;
                    break;
                }
            }
            // guard against rounding selecting a zero-weight tail element
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|w| *w > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            rng.below(n)
        };
        chosen.push(next);
        for (i, y) in ys.row_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(y, ys.row(next)));
        }
    }
    ys.select_rows(&chosen)
}

/// Lloyd iterations from the given centroids.
///
/// A cluster left empty after assignment is re-seeded with the point farthest
/// from its current centroid, which then moves to that cluster.
pub fn kmeans_lloyd(ys: &Matrix, initial: Matrix, max_iters: usize) -> Result<KMeans> {
    let (n, m) = (ys.rows(), initial.rows());
    if n < m {
        return Err(Error::InvalidArgument(format!(
            "k-means needs at least as many points ({n}) as clusters ({m})"
        )));
    }
    if initial.cols() != ys.cols() {
        return Err(Error::shape("kmeans_lloyd", ys.cols(), initial.cols()));
    }
    let mut centroids = initial;
    let mut assignments = vec![usize::MAX; n];
    let mut counts = vec![0usize; m];
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for (i, y) in ys.row_iter().enumerate() {
            let (k, d) = nearest(y, &centroids);
            if assignments[i] != k {
                assignments[i] = k;
                changed = true;
            }
            dists[i] = d;
        }
        counts = vec![0; m];
        for &a in &assignments {
            counts[a] += 1;
        }
        for k in 0..m {
            if counts[k] > 0 {
                continue;
            }
            // farthest point among those whose cluster can spare one
            let far = (0..n)
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&i, &j| dists[i].total_cmp(&dists[j]).then(j.cmp(&i)))
                .expect("n >= m leaves a cluster with two or more points");
            log::debug!("k-means: cluster {k} empty, re-seeding from point {far}");
            counts[assignments[far]] -= 1;
            assignments[far] = k;
            counts[k] = 1;
            dists[far] = 0.0;
            changed = true;
        }
        let mut sums = Matrix::zeros(m, ys.cols());
        for (i, y) in ys.row_iter().enumerate() {
            for (s, v) in sums.row_mut(assignments[i]).iter_mut().zip(y) {
                *s += v;
            }
        }
        for k in 0..m {
            let inv = 1.0 / counts[k] as f64;
            for v in sums.row_mut(k) {
                *v *= inv;
            }
        }
        centroids = sums;
        if !changed {
            break;
        }
    }
    Ok(KMeans {
        centroids,
        assignments,
        counts,
        iterations,
    })
}

/// GMM initialisation from k-means++ seeding and up to 50 Lloyd iterations.
///
/// Means are the centroids, standard deviations the per-cluster
/// per-dimension spread (floored) and weights the cluster fractions.
pub fn kmeans_init(ys: &Matrix, m: usize, rng: &mut SeededRng) -> Result<GmmParams> {
    let n = ys.rows();
    if m == 0 {
        return Err(Error::InvalidArgument("number of components must be positive".into()));
    }
    if n < m {
        return Err(Error::InvalidArgument(format!(
            "cannot fit {m} components to {n} points"
        )));
    }
    let seeds = plus_plus_seeds(ys, m, rng);
    let km = kmeans_lloyd(ys, seeds, MAX_LLOYD_ITERS)?;
    let d = ys.cols();
    let mut var = Matrix::zeros(m, d);
    for (i, y) in ys.row_iter().enumerate() {
        let k = km.assignments[i];
        let c = km.centroids.row(k).to_vec();
        for ((v, x), mu) in var.row_mut(k).iter_mut().zip(y).zip(&c) {
            *v += (x - mu) * (x - mu);
        }
    }
    let mut sigmas = Matrix::zeros(m, d);
    for k in 0..m {
        let inv = 1.0 / km.counts[k] as f64;
        for dd in 0..d {
            sigmas[(k, dd)] = (var[(k, dd)] * inv).sqrt().max(SIGMA_FLOOR);
        }
    }
    let weights: Vec<f64> = km.counts.iter().map(|&c| c as f64 / n as f64).collect();
    GmmParams::from_moments(&weights, km.centroids, &sigmas)
}
