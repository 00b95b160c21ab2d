//! Closed-form gradients of the per-sample objective.
//!
//! With posteriors `p_k = p(c_k | y)`, mixture weights `w = softmax(alpha)`
//! and `sigma = exp(s)`:
//!
//! * representation: `sum_k p_k (mu_k - y) / sigma_k^2`
//! * means: `p_k (y_d - mu_kd) / sigma_kd^2 + 2 eta sum_{j in n(k)} (mu_kd - mu_jd)`
//! * log-sigmas: `p_k ((y_d - mu_kd)^2 / sigma_kd^2 - 1)`
//! * logits: `p_k - w_k`
//!
//! The last two are exact derivatives of `ln p(y)` in the log-sigma and
//! softmax-logit coordinates the parameters are stored in.

use super::NeighborSets;
use crate::error::{Error, Result};
use crate::gmm::GmmParams;
use crate::numerics::Matrix;

/// Gradient with respect to every mixture parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmGrads {
    pub weight_logits: Vec<f64>,
    pub means: Matrix,
    pub log_sigmas: Matrix,
}

impl GmmGrads {
    fn zeros(m: usize, d: usize) -> Self {
        GmmGrads {
            weight_logits: vec![0.0; m],
            means: Matrix::zeros(m, d),
            log_sigmas: Matrix::zeros(m, d),
        }
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.weight_logits.iter().all(|v| v.is_finite()) && self.means.is_finite() && self.log_sigmas.is_finite()
    }

    /// `params += step * self`.
    pub(crate) fn apply(&self, params: &mut GmmParams, step: f64) {
        for (p, g) in params.weight_logits_mut().iter_mut().zip(&self.weight_logits) {
            *p += step * g;
        }
        for (p, g) in params.means_mut().as_mut_slice().iter_mut().zip(self.means.as_slice()) {
            *p += step * g;
        }
        for (p, g) in params
            .log_sigmas_mut()
            .as_mut_slice()
            .iter_mut()
            .zip(self.log_sigmas.as_slice())
        {
            *p += step * g;
        }
    }
}

fn check(params: &GmmParams, y: &[f64]) -> Result<()> {
    if y.len() != params.dim() {
        return Err(Error::shape("gradient", format!("point of dimension {}", params.dim()), y.len()));
    }
    Ok(())
}

/// `S(mu) = sum_k sum_{j in n(k)} ||mu_k - mu_j||^2` (directed sum).
pub fn separability(params: &GmmParams, nbrs: &NeighborSets) -> f64 {
    let means = params.means();
    let mut total = 0.0;
    for (k, set) in nbrs.iter().enumerate() {
        for &j in set {
            total += means
                .row(k)
                .iter()
                .zip(means.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
    }
    total
}

/// `2 sum_{j in n(k)} (mu_k - mu_j)` for every `k` (without `eta`). Only the
/// outer-index terms are differentiated.
pub fn separability_grad(params: &GmmParams, nbrs: &NeighborSets) -> Matrix {
    let means = params.means();
    let mut g = Matrix::zeros(means.rows(), means.cols());
    for (k, set) in nbrs.iter().enumerate() {
        for &j in set {
            for d in 0..means.cols() {
                g[(k, d)] += 2.0 * (means[(k, d)] - means[(j, d)]);
            }
        }
    }
    g
}

/// `ln p(y | lambda) + eta * S(mu)`.
pub fn objective(params: &GmmParams, y: &[f64], nbrs: &NeighborSets, eta: f64) -> Result<f64> {
    let ll = params.log_mixture_density(y)?;
    if eta == 0.0 {
        return Ok(ll);
    }
    Ok(ll + eta * separability(params, nbrs))
}

/// Gradient of `ln p(y)` with respect to the representation `y`.
pub fn grad_representation(params: &GmmParams, y: &[f64]) -> Result<Vec<f64>> {
    check(params, y)?;
    let post = params.posterior(y)?;
    let mut g = vec![0.0; y.len()];
    for (k, p) in post.iter().enumerate() {
        for d in 0..y.len() {
            let inv_var = (-2.0 * params.log_sigmas()[(k, d)]).exp();
            g[d] += p * (params.means()[(k, d)] - y[d]) * inv_var;
        }
    }
    Ok(g)
}

/// Per-sample gradient with respect to the means, including the
/// separability part weighted by `eta`.
pub fn grad_means(params: &GmmParams, y: &[f64], nbrs: &NeighborSets, eta: f64) -> Result<Matrix> {
    check(params, y)?;
    let post = params.posterior(y)?;
    let (m, dim) = params.means().shape();
    let mut g = Matrix::zeros(m, dim);
    for k in 0..m {
        for d in 0..dim {
            let inv_var = (-2.0 * params.log_sigmas()[(k, d)]).exp();
            g[(k, d)] = post[k] * (y[d] - params.means()[(k, d)]) * inv_var;
        }
    }
    if eta != 0.0 {
        let sep = separability_grad(params, nbrs);
        for (a, s) in g.as_mut_slice().iter_mut().zip(sep.as_slice()) {
            *a += eta * s;
        }
    }
    Ok(g)
}

/// Gradient of `ln p(y)` with respect to `s_kd = ln sigma_kd`.
pub fn grad_log_sigmas(params: &GmmParams, y: &[f64]) -> Result<Matrix> {
    check(params, y)?;
    let post = params.posterior(y)?;
    let (m, dim) = params.means().shape();
    let mut g = Matrix::zeros(m, dim);
    for k in 0..m {
        for d in 0..dim {
            let inv_var = (-2.0 * params.log_sigmas()[(k, d)]).exp();
            let diff = y[d] - params.means()[(k, d)];
            g[(k, d)] = post[k] * (diff * diff * inv_var - 1.0);
        }
    }
    Ok(g)
}

/// Gradient of `ln p(y)` with respect to the softmax logits.
pub fn grad_weight_logits(params: &GmmParams, y: &[f64]) -> Result<Vec<f64>> {
    check(params, y)?;
    let post = params.posterior(y)?;
    Ok(post.iter().zip(params.weights()).map(|(p, w)| p - w).collect())
}

/// Batch-mean likelihood gradients for the mixture, the per-row gradient of
/// the batch-mean log density with respect to each representation, and the
/// batch-mean log density itself.
pub(crate) fn batch_likelihood_grads(params: &GmmParams, reps: &Matrix) -> (GmmGrads, Matrix, f64) {
    let (b, dim) = reps.shape();
    let m = params.num_components();
    let inv_b = 1.0 / b as f64;
    let log_w = params.log_weights();
    let weights: Vec<f64> = log_w.iter().map(|v| v.exp()).collect();
    let inv_var: Vec<f64> = params
        .log_sigmas()
        .as_slice()
        .iter()
        .map(|s| (-2.0 * s).exp())
        .collect();
    let means = params.means().as_slice();
    let mut grads = GmmGrads::zeros(m, dim);
    let mut d_reps = Matrix::zeros(b, dim);
    let mut total_ll = 0.0;
    for (n, y) in reps.row_iter().enumerate() {
        let (post, ll) = params.posterior_with_log_density(y, &log_w);
        total_ll += ll;
        let dy = d_reps.row_mut(n);
        for k in 0..m {
            let p = post[k];
            grads.weight_logits[k] += (p - weights[k]) * inv_b;
            if p == 0.0 {
                continue;
            }
            for d in 0..dim {
                let idx = k * dim + d;
                let diff = y[d] - means[idx];
                let scaled = diff * inv_var[idx];
                dy[d] -= p * scaled * inv_b;
                grads.means.as_mut_slice()[idx] += p * scaled * inv_b;
                grads.log_sigmas.as_mut_slice()[idx] += p * (diff * scaled - 1.0) * inv_b;
            }
        }
    }
    (grads, d_reps, total_ll * inv_b)
}
