//! Diagonal-covariance Gaussian mixture model.
//!
//! Mixture weights are stored as softmax logits and standard deviations as
//! logarithms, so the simplex and positivity constraints hold by
//! construction. Every density is evaluated in the log domain.

mod em;
mod kmeans;

pub use em::{em_fit, random_init, EmConfig, EmFit};
pub use kmeans::{kmeans_init, kmeans_lloyd, KMeans};

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::{lse, Matrix};

/// Lower bound on every per-dimension standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    weight_logits: Vec<f64>,
    means: Matrix,
    log_sigmas: Matrix,
}

impl GmmParams {
    /// Builds parameters from logits, means (`m x D`) and log standard
    /// deviations (`m x D`). Log-sigmas below `ln(SIGMA_FLOOR)` are rejected.
    pub fn new(weight_logits: Vec<f64>, means: Matrix, log_sigmas: Matrix) -> Result<Self> {
        let m = weight_logits.len();
        if m == 0 {
            return Err(Error::Empty("mixture with no components"));
        }
        if means.rows() != m || means.shape() != log_sigmas.shape() {
            return Err(Error::shape(
                "GmmParams::new",
                format!("{m} logits, means and log-sigmas of equal shape {m}xD"),
                format!(
                    "means {:?}, log-sigmas {:?}",
                    means.shape(),
                    log_sigmas.shape()
                ),
            ));
        }
        if means.cols() == 0 {
            return Err(Error::InvalidArgument("mixture of zero-dimensional components".into()));
        }
        if weight_logits.iter().any(|v| !v.is_finite()) || !means.is_finite() || !log_sigmas.is_finite() {
            return Err(Error::NonFinite("GmmParams::new".into()));
        }
        let floor = SIGMA_FLOOR.ln();
        if let Some(s) = log_sigmas.as_slice().iter().find(|s| **s < floor - 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "standard deviation {} below floor {SIGMA_FLOOR}",
                s.exp()
            )));
        }
        Ok(GmmParams {
            weight_logits,
            means,
            log_sigmas,
        })
    }

    /// Builds parameters from plain weights (need not be normalised) and
    /// standard deviations. Standard deviations are floored.
    pub fn from_moments(weights: &[f64], means: Matrix, sigmas: &Matrix) -> Result<Self> {
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("mixture weights must be positive".into()));
        }
        if sigmas.as_slice().iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidArgument("standard deviations must be positive".into()));
        }
        let logits = weights.iter().map(|w| w.ln()).collect();
        let logs: Vec<f64> = sigmas
            .as_slice()
            .iter()
            .map(|s| s.max(SIGMA_FLOOR).ln())
            .collect();
        let log_sigmas = Matrix::from_vec(sigmas.rows(), sigmas.cols(), logs)?;
        GmmParams::new(logits, means, log_sigmas)
    }

    pub fn num_components(&self) -> usize {
        self.weight_logits.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn weight_logits(&self) -> &[f64] {
        &self.weight_logits
    }

    pub fn means(&self) -> &Matrix {
        &self.means
    }

    pub fn log_sigmas(&self) -> &Matrix {
        &self.log_sigmas
    }

    pub fn sigma(&self, k: usize, d: usize) -> f64 {
        self.log_sigmas[(k, d)].exp()
    }

    /// `ln softmax(logits)`.
    pub fn log_weights(&self) -> Vec<f64> {
        let norm = lse(&self.weight_logits);
        self.weight_logits.iter().map(|a| a - norm).collect()
    }

    /// `softmax(logits)`; positive and summing to one.
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights().into_iter().map(f64::exp).collect()
    }

    pub(crate) fn weight_logits_mut(&mut self) -> &mut [f64] {
        &mut self.weight_logits
    }

    pub(crate) fn means_mut(&mut self) -> &mut Matrix {
        &mut self.means
    }

    pub(crate) fn log_sigmas_mut(&mut self) -> &mut Matrix {
        &mut self.log_sigmas
    }

    /// Raises every log-sigma to at least `ln(SIGMA_FLOOR)`.
    pub(crate) fn enforce_floor(&mut self) {
        let floor = SIGMA_FLOOR.ln();
        for s in self.log_sigmas.as_mut_slice() {
            if *s < floor {
                *s = floor;
            }
        }
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.weight_logits.iter().all(|v| v.is_finite()) && self.means.is_finite() && self.log_sigmas.is_finite()
    }

    fn check_point(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim() {
            return Err(Error::shape("gmm", format!("point of dimension {}", self.dim()), y.len()));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn log_component_unchecked(&self, k: usize, y: &[f64]) -> f64 {
        let mu = self.means.row(k);
        let ls = self.log_sigmas.row(k);
        let mut quad = 0.0;
        let mut log_det_half = 0.0;
        for d in 0..y.len() {
            let z = (y[d] - mu[d]) * (-ls[d]).exp();
            quad += z * z;
            log_det_half += ls[d];
        }
        -0.5 * y.len() as f64 * (2.0 * PI).ln() - log_det_half - 0.5 * quad
    }

    /// `ln g(y | mu_k, Sigma_k)` for the diagonal Gaussian `k`.
    pub fn log_component_density(&self, k: usize, y: &[f64]) -> Result<f64> {
        if k >= self.num_components() {
            return Err(Error::InvalidArgument(format!(
                "component {k} out of range for a {}-component mixture",
                self.num_components()
            )));
        }
        self.check_point(y)?;
        Ok(self.log_component_unchecked(k, y))
    }

    /// `ln omega_k + ln g_k(y)` for every component.
    pub(crate) fn log_joint(&self, y: &[f64], log_w: &[f64]) -> Vec<f64> {
        (0..self.num_components())
            .map(|k| log_w[k] + self.log_component_unchecked(k, y))
            .collect()
    }

    /// `ln p(y | lambda)`.
    pub fn log_mixture_density(&self, y: &[f64]) -> Result<f64> {
        self.check_point(y)?;
        Ok(lse(&self.log_joint(y, &self.log_weights())))
    }

    /// Posterior `p(c_k | y)` for one point, with `ln p(y)`.
    pub(crate) fn posterior_with_log_density(&self, y: &[f64], log_w: &[f64]) -> (Vec<f64>, f64) {
        let mut lj = self.log_joint(y, log_w);
        let total = lse(&lj);
        for v in &mut lj {
            *v = (*v - total).exp();
        }
        (lj, total)
    }

    pub fn posterior(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_point(y)?;
        Ok(self.posterior_with_log_density(y, &self.log_weights()).0)
    }

    fn check_set(&self, ys: &Matrix) -> Result<()> {
        if ys.rows() == 0 {
            return Err(Error::Empty("log-likelihood of an empty set"));
        }
        if ys.cols() != self.dim() {
            return Err(Error::shape("gmm", format!("points of dimension {}", self.dim()), ys.cols()));
        }
        Ok(())
    }

    /// `sum_n ln p(y_n | lambda)`.
    pub fn log_likelihood(&self, ys: &Matrix) -> Result<f64> {
        self.check_set(ys)?;
        let log_w = self.log_weights();
        Ok(ys.row_iter().map(|y| lse(&self.log_joint(y, &log_w))).sum())
    }

    pub fn responsibilities(&self, ys: &Matrix) -> Result<Responsibilities> {
        if ys.cols() != self.dim() {
            return Err(Error::shape("gmm", format!("points of dimension {}", self.dim()), ys.cols()));
        }
        Ok(self.e_step(ys).0)
    }

    /// Responsibilities together with the total log-likelihood.
    pub(crate) fn e_step(&self, ys: &Matrix) -> (Responsibilities, f64) {
        let m = self.num_components();
        let log_w = self.log_weights();
        let mut r = Matrix::zeros(ys.rows(), m);
        let mut ll = 0.0;
        for (n, y) in ys.row_iter().enumerate() {
            let (post, l) = self.posterior_with_log_density(y, &log_w);
            r.row_mut(n).copy_from_slice(&post);
            ll += l;
        }
        (Responsibilities(r), ll)
    }
}

/// Per-sample posteriors over components (`N x m`), rows summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities(Matrix);

impl Responsibilities {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn row(&self, n: usize) -> &[f64] {
        self.0.row(n)
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    /// Most probable component per sample, lowest index on ties.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.0.row_iter().map(argmax).collect()
    }
}

/// Index of the maximum; the first one wins ties.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
