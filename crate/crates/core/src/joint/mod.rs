//! Joint optimisation of the encoder and the mixture parameters.
//!
//! Each sample contributes `ln p(f(x) | lambda) + eta * S(mu)`, where
//! `S(mu)` sums squared distances from every mixture mean to its nearest
//! neighbouring means. The encoder is updated by backpropagating the gradient
//! of the log density with respect to the representation; the mixture is
//! updated with closed-form gradients taken in the log-sigma / softmax-logit
//! parameterisation. Both are plain gradient ascent.

mod grads;

pub use grads::{
    grad_log_sigmas, grad_means, grad_representation, grad_weight_logits, objective, separability,
    separability_grad, GmmGrads,
};

use crate::autoencoder::{minibatches, net, EncoderStack, Layer};
use crate::error::{Error, Result};
use crate::gmm::GmmParams;
use crate::numerics::{Matrix, SeededRng};

/// How the separability gradient enters a minibatch update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeparabilityMode {
    /// Added once per update, alongside the batch-mean likelihood gradient.
    PerStep,
    /// Added once per sample in the batch (scaled by the batch size).
    PerSample,
}

impl SeparabilityMode {
    pub fn name(self) -> &'static str {
        match self {
            SeparabilityMode::PerStep => "per-step",
            SeparabilityMode::PerSample => "per-sample",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "per-step" => Some(SeparabilityMode::PerStep),
            "per-sample" => Some(SeparabilityMode::PerSample),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointConfig {
    /// Weight of the separability term; 0 gives the plain likelihood model.
    pub eta: f64,
    /// Neighbour count is `max(1, floor(fraction * m))`, capped at `m - 1`.
    pub neighbor_fraction: f64,
    pub learning_rate: f64,
    pub lr_step_factor: f64,
    pub lr_step_every: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub separability_mode: SeparabilityMode,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            eta: 0.01,
            neighbor_fraction: 0.5,
            learning_rate: 0.01,
            lr_step_factor: 0.1,
            lr_step_every: 40,
            batch_size: 256,
            epochs: 100,
            seed: 0,
            separability_mode: SeparabilityMode::PerStep,
        }
    }
}

/// Grid of separability weights searched over.
pub const ETA_GRID: [f64; 4] = [0.1, 0.01, 0.001, 0.0001];

impl JointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidArgument(format!("eta must be nonnegative, got {}", self.eta)));
        }
        if !(self.neighbor_fraction > 0.0 && self.neighbor_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "neighbor fraction must be in (0, 1], got {}",
                self.neighbor_fraction
            )));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be nonnegative, got {}",
                self.learning_rate
            )));
        }
        if !(self.lr_step_factor > 0.0) || !self.lr_step_factor.is_finite() {
            return Err(Error::InvalidArgument("lr step factor must be positive".into()));
        }
        if self.lr_step_every == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "lr step interval and batch size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `|n(k)|` for a mixture of `m` components.
    pub fn neighbor_count(&self, m: usize) -> usize {
        if m < 2 {
            return 0;
        }
        ((self.neighbor_fraction * m as f64).floor() as usize).clamp(1, m - 1)
    }

    /// Step-policy learning rate for a zero-based epoch index.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.lr_step_every) as i32;
        self.learning_rate * self.lr_step_factor.powi(steps)
    }
}

/// For every component, the indices of its nearest other components.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborSets(Vec<Vec<usize>>);

impl NeighborSets {
    pub fn new(sets: Vec<Vec<usize>>) -> Self {
        NeighborSets(sets)
    }

    pub fn get(&self, k: usize) -> &[usize] {
        &self.0[k]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.0.iter().map(Vec::as_slice)
    }
}

/// The `count` nearest other means of every component, by Euclidean distance,
/// ties broken by lower index. Empty sets when there is one component.
pub fn neighbor_sets(params: &GmmParams, count: usize) -> NeighborSets {
    let m = params.num_components();
    let means = params.means();
    let count = count.min(m.saturating_sub(1));
    let sets = (0..m)
        .map(|k| {
            let mut others: Vec<(f64, usize)> = (0..m)
                .filter(|&j| j != k)
                .map(|j| {
                    let d: f64 = means
                        .row(k)
                        .iter()
                        .zip(means.row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d, j)
                })
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.into_iter().take(count).map(|(_, j)| j).collect()
        })
        .collect();
    NeighborSets(sets)
}

/// Outcome of one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Batch-mean log density before the update.
    pub mean_loglik: f64,
}

/// One joint gradient-ascent update on a minibatch.
///
/// Gradients for the encoder and for the mixture are both taken at the
/// current parameters and then applied with the same learning rate. Nothing
/// is modified if any gradient or updated value is non-finite.
pub fn joint_train_step(
    enc: &mut EncoderStack,
    params: &mut GmmParams,
    batch: &Matrix,
    nbrs: &NeighborSets,
    config: &JointConfig,
    learning_rate: f64,
) -> Result<StepStats> {
    let b = batch.rows();
    if b == 0 {
        return Err(Error::Empty("joint training batch"));
    }
    if batch.cols() != enc.input_dim() {
        return Err(Error::shape("joint_train_step", enc.input_dim(), batch.cols()));
    }
    if enc.output_dim() != params.dim() {
        return Err(Error::shape("joint_train_step", params.dim(), enc.output_dim()));
    }
    let layers: Vec<&Layer> = enc.layer_refs();
    let acts = net::forward(&layers, batch);
    let reps = acts.last().expect("non-empty encoder");

    let (mut gmm_grads, d_reps, mean_loglik) = grads::batch_likelihood_grads(params, reps);
    if config.eta > 0.0 {
        let scale = match config.separability_mode {
            SeparabilityMode::PerStep => config.eta,
            SeparabilityMode::PerSample => config.eta * b as f64,
        };
        let sep = separability_grad(params, nbrs);
        for (g, s) in gmm_grads.means.as_mut_slice().iter_mut().zip(sep.as_slice()) {
            *g += scale * s;
        }
    }
    if !gmm_grads.is_finite() || !mean_loglik.is_finite() {
        return Err(Error::NonFinite(format!(
            "joint training gradients (batch mean log-density {mean_loglik})"
        )));
    }

    // Non-finite encoder gradients surface as non-finite weights below.
    let mut new_enc = enc.clone();
    {
        let mut targets: Vec<&mut Layer> = new_enc.layers_mut().iter_mut().collect();
        net::backward_apply(&mut targets, batch, &acts, d_reps, learning_rate);
    }
    let mut new_params = params.clone();
    gmm_grads.apply(&mut new_params, learning_rate);
    new_params.enforce_floor();
    let enc_finite = new_enc
        .layers()
        .iter()
        .all(|l| l.weight().is_finite() && l.bias().iter().all(|v| v.is_finite()));
    if !enc_finite || !new_params.is_finite() {
        return Err(Error::NonFinite("joint training update".into()));
    }
    *enc = new_enc;
    *params = new_params;
    Ok(StepStats { mean_loglik })
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// One-based epoch number; 0 denotes the state before training.
    pub epoch: usize,
    pub mean_objective: f64,
    pub mean_loglik: f64,
    pub separability: f64,
    pub learning_rate: f64,
}

/// Mean objective, mean log density and separability over a whole dataset,
/// with neighbour sets computed from the current means.
pub fn evaluate(enc: &EncoderStack, params: &GmmParams, data: &Matrix, config: &JointConfig) -> Result<EpochRecord> {
    let reps = enc.encode_batch(data)?;
    let mean_loglik = params.log_likelihood(&reps)? / data.rows() as f64;
    let nbrs = neighbor_sets(params, config.neighbor_count(params.num_components()));
    let sep = separability(params, &nbrs);
    Ok(EpochRecord {
        epoch: 0,
        mean_objective: mean_loglik + config.eta * sep,
        mean_loglik,
        separability: sep,
        learning_rate: config.learning_rate_at(0),
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoder: EncoderStack,
    pub params: GmmParams,
    pub history: Vec<EpochRecord>,
}

/// Runs `config.epochs` epochs of shuffled minibatch joint updates.
pub fn train(enc: EncoderStack, params: GmmParams, data: &Matrix, config: &JointConfig) -> Result<TrainOutcome> {
    train_from(enc, params, data, config, 0, |_, _, _| Ok(()))
}

/// Continues training from epoch `start_epoch` (zero-based) up to
/// `config.epochs`, calling `on_epoch` after every epoch.
///
/// Epoch `e` draws its shuffle from stream `e` of `config.seed`, and
/// neighbour sets are recomputed at the start of every epoch, so a run
/// resumed from a saved state reproduces an uninterrupted one exactly.
pub fn train_from<F>(
    enc: EncoderStack,
    params: GmmParams,
    data: &Matrix,
    config: &JointConfig,
    start_epoch: usize,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord, &EncoderStack, &GmmParams) -> Result<()>,
{
    if data.rows() == 0 {
        return Err(Error::Empty("joint training dataset"));
    }
    config.validate()?;
    if data.cols() != enc.input_dim() {
        return Err(Error::shape("train", enc.input_dim(), data.cols()));
    }
    let (mut enc, mut params) = (enc, params);
    let k = config.neighbor_count(params.num_components());
    let mut history = Vec::new();
    for epoch in start_epoch..config.epochs {
        let lr = config.learning_rate_at(epoch);
        let nbrs = neighbor_sets(&params, k);
        let mut rng = SeededRng::with_stream(config.seed, epoch as u64);
        for idx in minibatches(data.rows(), config.batch_size, &mut rng) {
            let batch = data.select_rows(&idx);
            joint_train_step(&mut enc, &mut params, &batch, &nbrs, config, lr).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("{msg} at epoch {}", epoch + 1)),
                other => other,
            })?;
        }
        let mut rec = evaluate(&enc, &params, data, config)?;
        rec.epoch = epoch + 1;
        rec.learning_rate = lr;
        log::info!(
            "joint epoch {}: objective {:.6} loglik {:.6} separability {:.6} lr {}",
            rec.epoch,
            rec.mean_objective,
            rec.mean_loglik,
            rec.separability,
            lr
        );
        on_epoch(&rec, &enc, &params)?;
        history.push(rec);
    }
    Ok(TrainOutcome {
        encoder: enc,
        params,
        history,
    })
}

/// Hard cluster labels: most probable component of each encoded sample,
/// lowest index on ties.
pub fn assign(enc: &EncoderStack, params: &GmmParams, data: &Matrix) -> Result<Vec<usize>> {
    let reps = enc.encode_batch(data)?;
    Ok(params.responsibilities(&reps)?.hard_labels())
}
