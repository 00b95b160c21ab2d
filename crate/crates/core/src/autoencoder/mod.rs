//! Stacked denoising autoencoder: masking corruption, encoder/decoder stacks,
//! greedy layer-wise pretraining and end-to-end fine-tuning.

pub(crate) mod net;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }
}

/// One fully connected layer, `s(W x + b)` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub(crate) weight: Matrix,
    pub(crate) bias: Vec<f64>,
    pub(crate) activation: Activation,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape(
                "Layer::new",
                format!("bias of length {}", weight.rows()),
                bias.len(),
            ));
        }
        if !weight.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("Layer::new".into()));
        }
        Ok(Layer {
            weight,
            bias,
            activation,
        })
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut SeededRng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.uniform_range(-limit, limit))
            .collect();
        Layer {
            weight: Matrix::from_vec_unchecked(out_dim, in_dim, data),
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn num_params(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }
}

/// Gradient of a scalar loss with respect to one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

fn check_chain(op: &'static str, layers: &[Layer]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::Empty("layer stack with no layers"));
    }
    for (i, w) in layers.windows(2).enumerate() {
        if w[0].out_dim() != w[1].in_dim() {
            return Err(Error::shape(
                op,
                format!("layer {} in_dim == {}", i + 1, w[0].out_dim()),
                w[1].in_dim(),
            ));
        }
    }
    for (i, l) in layers.iter().enumerate() {
        let want = if i + 1 == layers.len() {
            Activation::Linear
        } else {
            Activation::Relu
        };
        if l.activation != want {
            return Err(Error::InvalidArgument(format!(
                "{op}: layer {i} must be {}, found {}",
                want.name(),
                l.activation.name()
            )));
        }
    }
    Ok(())
}

fn check_input(op: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::shape(op, format!("input of dimension {expected}"), actual));
    }
    Ok(())
}

fn single(op: &'static str, layers: &[&Layer], x: &[f64]) -> Result<Vec<f64>> {
    check_input(op, layers[0].in_dim(), x.len())?;
    let input = Matrix::from_vec(1, x.len(), x.to_vec())?;
    let acts = net::forward(layers, &input);
    let out = acts.into_iter().last().expect("non-empty stack");
    if !out.is_finite() {
        return Err(Error::NonFinite(op.into()));
    }
    Ok(out.into_vec())
}

fn batch(op: &'static str, layers: &[&Layer], x: &Matrix) -> Result<Matrix> {
    check_input(op, layers[0].in_dim(), x.cols())?;
    let out = net::forward(layers, x).pop().expect("non-empty stack");
    if !out.is_finite() {
        return Err(Error::NonFinite(op.into()));
    }
    Ok(out)
}

/// Encoder `f_theta`: ReLU hidden layers, linear representation layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStack {
    layers: Vec<Layer>,
}

impl EncoderStack {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        check_chain("EncoderStack::new", &layers)?;
        Ok(EncoderStack { layers })
    }

    /// Randomly initialised encoder for `shape = [input, hidden..., repr]`.
    pub fn init(shape: &[usize], rng: &mut SeededRng) -> Result<Self> {
        validate_shape(shape)?;
        let n = shape.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { Activation::Linear } else { Activation::Relu };
                Layer::init(shape[i], shape[i + 1], act, rng)
            })
            .collect();
        EncoderStack::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub(crate) fn layer_refs(&self) -> Vec<&Layer> {
        self.layers.iter().collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// `[input, hidden..., repr]`.
    pub fn shape(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        single("encode", &self.layer_refs(), x)
    }

    pub fn encode_batch(&self, x: &Matrix) -> Result<Matrix> {
        batch("encode", &self.layer_refs(), x)
    }
}

/// Decoder `g`: mirror of the encoder, linear reconstruction layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStack {
    layers: Vec<Layer>,
}

impl DecoderStack {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        check_chain("DecoderStack::new", &layers)?;
        Ok(DecoderStack { layers })
    }

    /// Randomly initialised mirror of an encoder with the given shape.
    pub fn init_mirror(encoder_shape: &[usize], rng: &mut SeededRng) -> Result<Self> {
        validate_shape(encoder_shape)?;
        let rev: Vec<usize> = encoder_shape.iter().rev().copied().collect();
        let n = rev.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { Activation::Linear } else { Activation::Relu };
                Layer::init(rev[i], rev[i + 1], act, rng)
            })
            .collect();
        DecoderStack::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    #[cfg(test)]
    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// True when this decoder's dimensions are the encoder's in reverse.
    pub fn mirrors(&self, encoder: &EncoderStack) -> bool {
        let enc = encoder.shape();
        let dec: Vec<usize> = std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect();
        enc.iter().rev().eq(dec.iter())
    }

    pub fn decode(&self, y: &[f64]) -> Result<Vec<f64>> {
        let refs: Vec<&Layer> = self.layers.iter().collect();
        single("decode", &refs, y)
    }

    pub fn decode_batch(&self, y: &Matrix) -> Result<Matrix> {
        let refs: Vec<&Layer> = self.layers.iter().collect();
        batch("decode", &refs, y)
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "network shape needs at least an input and an output size, got {shape:?}"
        )));
    }
    if shape.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "network shape has a zero-width layer: {shape:?}"
        )));
    }
    Ok(())
}

/// Masking noise: the fraction of coordinates to zero out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionSpec {
    mask_fraction: f64,
}

impl CorruptionSpec {
    pub fn new(mask_fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mask_fraction) {
            return Err(Error::InvalidArgument(format!(
                "mask fraction must be in [0, 1], got {mask_fraction}"
            )));
        }
        Ok(CorruptionSpec { mask_fraction })
    }

    pub fn mask_fraction(&self) -> f64 {
        self.mask_fraction
    }

    pub fn masked_count(&self, dim: usize) -> usize {
        ((self.mask_fraction * dim as f64).round() as usize).min(dim)
    }
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec { mask_fraction: 0.2 }
    }
}

/// Zeroes exactly `round(mask_fraction * dim)` distinct coordinates.
pub fn corrupt(x: &[f64], spec: CorruptionSpec, rng: &mut SeededRng) -> Vec<f64> {
    let mut out = x.to_vec();
    corrupt_in_place(&mut out, spec, rng);
    out
}

fn corrupt_in_place(x: &mut [f64], spec: CorruptionSpec, rng: &mut SeededRng) {
    let k = spec.masked_count(x.len());
    if k == 0 {
        return;
    }
    for i in rng.choose_distinct(x.len(), k) {
        x[i] = 0.0;
    }
}

/// `||x - z||^2`.
pub fn reconstruction_loss(x: &[f64], z: &[f64]) -> Result<f64> {
    if x.len() != z.len() {
        return Err(Error::shape("reconstruction_loss", x.len(), z.len()));
    }
    Ok(x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Gradients of the reconstruction loss for every encoder and decoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderGrads {
    pub loss: f64,
    pub encoder: Vec<LayerGrad>,
    pub decoder: Vec<LayerGrad>,
}

/// Exact gradient of `||x_clean - g(f(x_corrupt))||^2` with respect to every
/// weight and bias of both stacks.
pub fn backprop_autoencoder(
    enc: &EncoderStack,
    dec: &DecoderStack,
    x_clean: &[f64],
    x_corrupt: &[f64],
) -> Result<AutoencoderGrads> {
    if x_clean.len() != x_corrupt.len() {
        return Err(Error::shape("backprop_autoencoder", x_clean.len(), x_corrupt.len()));
    }
    if dec.input_dim() != enc.output_dim() {
        return Err(Error::shape(
            "backprop_autoencoder",
            format!("decoder input {}", enc.output_dim()),
            dec.input_dim(),
        ));
    }
    check_input("backprop_autoencoder", enc.input_dim(), x_corrupt.len())?;
    check_input("backprop_autoencoder", dec.output_dim(), x_clean.len())?;
    let clean = Matrix::from_vec(1, x_clean.len(), x_clean.to_vec())?;
    let noisy = Matrix::from_vec(1, x_corrupt.len(), x_corrupt.to_vec())?;
    let layers: Vec<&Layer> = enc.layers.iter().chain(dec.layers.iter()).collect();
    let (loss, mut grads) = reconstruction_step(&layers, &clean, &noisy);
    let decoder = grads.split_off(enc.layers.len());
    Ok(AutoencoderGrads {
        loss,
        encoder: grads,
        decoder,
    })
}

/// Mean loss and mean gradient over a batch, for a chain mapping `noisy`
/// towards `target`.
fn reconstruction_step(layers: &[&Layer], target: &Matrix, noisy: &Matrix) -> (f64, Vec<LayerGrad>) {
    let (loss, acts, d_out) = reconstruction_forward(layers, target, noisy);
    let (grads, _) = net::backward(layers, noisy, &acts, d_out, false);
    (loss, grads)
}

/// Forward pass, mean loss and the output delta of the batch-mean loss.
fn reconstruction_forward(layers: &[&Layer], target: &Matrix, noisy: &Matrix) -> (f64, Vec<Matrix>, Matrix) {
    let acts = net::forward(layers, noisy);
    let out = acts.last().expect("non-empty chain");
    let b = target.rows() as f64;
    let mut loss = 0.0;
    let mut d_out = Matrix::zeros(out.rows(), out.cols());
    for ((d, z), x) in d_out
        .as_mut_slice()
        .iter_mut()
        .zip(out.as_slice())
        .zip(target.as_slice())
    {
        let diff = z - x;
        loss += diff * diff;
        *d = 2.0 * diff / b;
    }
    (loss / b, acts, d_out)
}

/// Plain minibatch SGD settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            epochs: 50,
            learning_rate: 0.01,
            batch_size: 256,
        }
    }
}

impl SgdConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Shuffled minibatch index lists for one epoch.
pub(crate) fn minibatches(n: usize, batch_size: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Trains one chain with SGD on `target` reconstructed from (optionally
/// corrupted) `input`. Returns the running mean loss of each epoch.
fn sgd_reconstruct(
    layers: &mut [&mut Layer],
    data: &Matrix,
    corruption: Option<CorruptionSpec>,
    cfg: &SgdConfig,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for idx in minibatches(data.rows(), cfg.batch_size, rng) {
            let target = data.select_rows(&idx);
            let mut noisy = target.clone();
            if let Some(spec) = corruption {
                for r in 0..noisy.rows() {
                    corrupt_in_place(noisy.row_mut(r), spec, rng);
                }
            }
            let refs: Vec<&Layer> = layers.iter().map(|l| &**l).collect();
            let (loss, acts, d_out) = reconstruction_forward(&refs, &target, &noisy);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "autoencoder training loss at epoch {epoch}"
                )));
            }
            total += loss * idx.len() as f64;
            net::backward_apply(layers, &noisy, &acts, d_out, -cfg.learning_rate);
        }
        let mean = total / data.rows() as f64;
        log::debug!("reconstruction epoch {epoch}: mean loss {mean:.6}");
        history.push(mean);
    }
    Ok(history)
}

/// Result of greedy pretraining.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub encoder: EncoderStack,
    pub decoder: DecoderStack,
    /// Per stage, the mean loss of each epoch.
    pub stage_losses: Vec<Vec<f64>>,
}

/// Greedy layer-wise denoising pretraining.
///
/// Stage `i` trains encoder layer `i` with its mirrored decoder layer to
/// reconstruct the clean outputs of the already trained layers `0..i` from a
/// corrupted copy of them.
pub fn pretrain_layerwise(
    data: &Matrix,
    shape: &[usize],
    spec: CorruptionSpec,
    cfg: &SgdConfig,
    rng: &mut SeededRng,
) -> Result<Pretrained> {
    if data.rows() == 0 {
        return Err(Error::Empty("pretraining dataset"));
    }
    cfg.validate()?;
    validate_shape(shape)?;
    if shape[0] != data.cols() {
        return Err(Error::shape("pretrain_layerwise", format!("input width {}", shape[0]), data.cols()));
    }
    let mut encoder = EncoderStack::init(shape, rng)?;
    let mut decoder = DecoderStack::init_mirror(shape, rng)?;
    let n = encoder.layers.len();
    let mut stage_losses = Vec::with_capacity(n);
    let mut stage_input = data.clone();
    for i in 0..n {
        let enc_layer = &mut encoder.layers[i];
        let dec_layer = &mut decoder.layers[n - 1 - i];
        let losses = sgd_reconstruct(&mut [enc_layer, dec_layer], &stage_input, Some(spec), cfg, rng)?;
        log::info!(
            "pretrain stage {}/{}: loss {:?} -> {:?}",
            i + 1,
            n,
            losses.first(),
            losses.last()
        );
        stage_losses.push(losses);
        if i + 1 < n {
            stage_input = net::layer_forward(&encoder.layers[i], &stage_input);
        }
    }
    Ok(Pretrained {
        encoder,
        decoder,
        stage_losses,
    })
}

/// Result of end-to-end fine-tuning.
#[derive(Debug, Clone)]
pub struct Finetuned {
    pub encoder: EncoderStack,
    pub decoder: DecoderStack,
    pub epoch_losses: Vec<f64>,
}

/// End-to-end SGD on the clean reconstruction loss of the whole stack.
pub fn finetune(
    enc: EncoderStack,
    dec: DecoderStack,
    data: &Matrix,
    cfg: &SgdConfig,
    rng: &mut SeededRng,
) -> Result<Finetuned> {
    if data.rows() == 0 {
        return Err(Error::Empty("fine-tuning dataset"));
    }
    cfg.validate()?;
    check_input("finetune", enc.input_dim(), data.cols())?;
    if !dec.mirrors(&enc) {
        return Err(Error::InvalidArgument("decoder does not mirror the encoder".into()));
    }
    let (mut encoder, mut decoder) = (enc, dec);
    let epoch_losses = {
        let mut layers: Vec<&mut Layer> = encoder
            .layers
            .iter_mut()
            .chain(decoder.layers.iter_mut())
            .collect();
        sgd_reconstruct(&mut layers, data, None, cfg, rng)?
    };
    Ok(Finetuned {
        encoder,
        decoder,
        epoch_losses,
    })
}

/// Mean clean reconstruction loss over all rows.
pub fn mean_reconstruction_loss(enc: &EncoderStack, dec: &DecoderStack, data: &Matrix) -> Result<f64> {
    if data.rows() == 0 {
        return Err(Error::Empty("dataset"));
    }
    let z = dec.decode_batch(&enc.encode_batch(data)?)?;
    let total: f64 = data
        .as_slice()
        .iter()
        .zip(z.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(total / data.rows() as f64)
}
