use super::{GmmParams, Responsibilities, SIGMA_FLOOR};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng};

/// Components whose total responsibility falls below this are re-seeded.
const MIN_COMPONENT_MASS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop once the log-likelihood improves by less than this.
    pub tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 200,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub params: GmmParams,
    /// Log-likelihood of the initial parameters followed by the value after
    /// each EM iteration.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
    /// Number of components re-seeded because they lost all mass.
    pub reseeds: usize,
}

impl EmFit {
    pub fn iterations(&self) -> usize {
        self.log_likelihoods.len() - 1
    }
}

fn per_dim_std(ys: &Matrix) -> Vec<f64> {
    let means = ys.column_means();
    let mut var = vec![0.0; ys.cols()];
    for y in ys.row_iter() {
        for ((v, x), m) in var.iter_mut().zip(y).zip(&means) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter()
        .map(|v| (v / ys.rows() as f64).sqrt().max(SIGMA_FLOOR))
        .collect()
}

/// Closed-form maximisation of the expected complete-data log-likelihood for
/// a diagonal mixture, with standard deviations floored.
fn m_step(ys: &Matrix, resp: &Responsibilities, rng: &mut SeededRng, reseeds: &mut usize) -> Result<GmmParams> {
    let (n, d) = ys.shape();
    let r = resp.matrix();
    let m = r.cols();
    let mut mass = vec![0.0; m];
    let mut means = Matrix::zeros(m, d);
    for (i, y) in ys.row_iter().enumerate() {
        for k in 0..m {
            let w = r[(i, k)];
            mass[k] += w;
            for (mu, x) in means.row_mut(k).iter_mut().zip(y) {
                *mu += w * x;
            }
        }
    }
    let mut dead = vec![false; m];
    for k in 0..m {
        if mass[k] < MIN_COMPONENT_MASS {
            dead[k] = true;
            continue;
        }
        let inv = 1.0 / mass[k];
        means.row_mut(k).iter_mut().for_each(|v| *v *= inv);
    }
    let mut var = Matrix::zeros(m, d);
    for (i, y) in ys.row_iter().enumerate() {
        for k in (0..m).filter(|&k| !dead[k]) {
            let w = r[(i, k)];
            if w == 0.0 {
                continue;
            }
            let mu = means.row(k).to_vec();
            for ((v, x), c) in var.row_mut(k).iter_mut().zip(y).zip(&mu) {
                *v += w * (x - c) * (x - c);
            }
        }
    }
    let floor_sq = SIGMA_FLOOR * SIGMA_FLOOR;
    let mut logits = vec![0.0; m];
    let mut log_sigmas = Matrix::zeros(m, d);
    let global_std = if dead.iter().any(|x| *x) { per_dim_std(ys) } else { Vec::new() };
    for k in 0..m {
        if dead[k] {
            let pick = rng.below(n);
            log::warn!("EM: component {k} has no responsibility mass; re-seeding from sample {pick}");
            *reseeds += 1;
            means.row_mut(k).copy_from_slice(ys.row(pick));
            for dd in 0..d {
                log_sigmas[(k, dd)] = global_std[dd].ln();
            }
            logits[k] = (1.0 / n as f64).ln();
            continue;
        }
        logits[k] = (mass[k] / n as f64).ln();
        for dd in 0..d {
            let v = (var[(k, dd)] / mass[k]).max(floor_sq);
            log_sigmas[(k, dd)] = 0.5 * v.ln();
        }
    }
    if !means.is_finite() || !log_sigmas.is_finite() {
        return Err(Error::NonFinite("EM maximisation step".into()));
    }
    let mut params = GmmParams {
        weight_logits: logits,
        means,
        log_sigmas,
    };
    params.enforce_floor();
    Ok(params)
}

/// Expectation-maximisation from `init` until the log-likelihood gain drops
/// below `cfg.tol` or `cfg.max_iters` iterations have run.
pub fn em_fit(ys: &Matrix, init: GmmParams, cfg: &EmConfig, rng: &mut SeededRng) -> Result<EmFit> {
    let m = init.num_components();
    if ys.rows() < m {
        return Err(Error::InvalidArgument(format!(
            "EM needs at least as many points ({}) as components ({m})",
            ys.rows()
        )));
    }
    if ys.cols() != init.dim() {
        return Err(Error::shape("em_fit", init.dim(), ys.cols()));
    }
    let mut params = init;
    let (mut resp, mut ll) = params.e_step(ys);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut reseeds = 0;
    for _ in 0..cfg.max_iters {
        let next = m_step(ys, &resp, rng, &mut reseeds)?;
        let (next_resp, next_ll) = next.e_step(ys);
        if !next_ll.is_finite() {
            return Err(Error::NonFinite("EM log-likelihood".into()));
        }
        params = next;
        resp = next_resp;
        trace.push(next_ll);
        let gain = next_ll - ll;
        ll = next_ll;
        if gain < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(EmFit {
        params,
        log_likelihoods: trace,
        converged,
        reseeds,
    })
}

/// Means at `m` distinct random samples, equal weights, and the data's
/// per-dimension spread as every component's standard deviation.
pub fn random_init(ys: &Matrix, m: usize, rng: &mut SeededRng) -> Result<GmmParams> {
    if m == 0 || ys.rows() < m {
        return Err(Error::InvalidArgument(format!(
            "cannot initialise {m} components from {} points",
            ys.rows()
        )));
    }
    let picks = rng.choose_distinct(ys.rows(), m);
    let means = ys.select_rows(&picks);
    let std = per_dim_std(ys);
    let mut sigmas = Matrix::zeros(m, ys.cols());
    for k in 0..m {
        sigmas.row_mut(k).copy_from_slice(&std);
    }
    GmmParams::from_moments(&vec![1.0; m], means, &sigmas)
}
