//! Batched forward/backward passes over a chain of fully connected layers.

use super::{Activation, Layer, LayerGrad};
use crate::numerics::{gemm, Matrix};

/// Post-activation outputs of every layer, `acts[i]` being layer `i`'s output.
pub(crate) fn forward(layers: &[&Layer], input: &Matrix) -> Vec<Matrix> {
    let mut acts: Vec<Matrix> = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let prev = if i == 0 { input } else { &acts[i - 1] };
        acts.push(layer_forward(layer, prev));
    }
    acts
}

pub(crate) fn layer_forward(layer: &Layer, input: &Matrix) -> Matrix {
    let batch = input.rows();
    let out_dim = layer.out_dim();
    let mut z = Matrix::zeros(batch, out_dim);
    for r in 0..batch {
        z.row_mut(r).copy_from_slice(&layer.bias);
    }
    gemm(1.0, input, false, &layer.weight, true, 1.0, &mut z);
    if layer.activation == Activation::Relu {
        z.as_mut_slice().iter_mut().for_each(|v| {
            if *v < 0.0 {
                *v = 0.0
            }
        });
    }
    z
}

/// Backpropagates `d_out` (gradient w.r.t. the last layer's output) through
/// the chain. Returns per-layer gradients and, when requested, the gradient
/// with respect to `input`.
///
/// ReLU's derivative is 1 where the output is strictly positive and 0
/// elsewhere, including at exactly 0.
pub(crate) fn backward(
    layers: &[&Layer],
    input: &Matrix,
    acts: &[Matrix],
    d_out: Matrix,
    want_input_grad: bool,
) -> (Vec<LayerGrad>, Option<Matrix>) {
    let n = layers.len();
    let mut grads: Vec<LayerGrad> = Vec::with_capacity(n);
    let mut delta = d_out;
    let mut input_grad = None;
    for i in (0..n).rev() {
        let layer = layers[i];
        if layer.activation == Activation::Relu {
            for (d, a) in delta.as_mut_slice().iter_mut().zip(acts[i].as_slice()) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let prev = if i == 0 { input } else { &acts[i - 1] };
        let mut gw = Matrix::zeros(layer.out_dim(), layer.in_dim());
        gemm(1.0, &delta, true, prev, false, 0.0, &mut gw);
        let mut gb = vec![0.0; layer.out_dim()];
        for row in delta.row_iter() {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        if i > 0 || want_input_grad {
            let mut next = Matrix::zeros(delta.rows(), layer.in_dim());
            gemm(1.0, &delta, false, &layer.weight, false, 0.0, &mut next);
            if i == 0 {
                input_grad = Some(next);
            } else {
                delta = next;
            }
        }
        grads.push(LayerGrad {
            weight: gw,
            bias: gb,
        });
    }
    grads.reverse();
    (grads, input_grad)
}

/// Backpropagation fused with the parameter update: every layer receives
/// `step * gradient` in place. Each layer's weights are used to propagate
/// the delta before they are updated, so the result equals computing all
/// gradients first with [`backward`] and then applying them.
pub(crate) fn backward_apply(layers: &mut [&mut Layer], input: &Matrix, acts: &[Matrix], d_out: Matrix, step: f64) {
    let n = layers.len();
    let mut delta = d_out;
    for i in (0..n).rev() {
        if layers[i].activation == Activation::Relu {
            for (d, a) in delta.as_mut_slice().iter_mut().zip(acts[i].as_slice()) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let next = if i > 0 {
            let mut next = Matrix::zeros(delta.rows(), layers[i].in_dim());
            gemm(1.0, &delta, false, &layers[i].weight, false, 0.0, &mut next);
            Some(next)
        } else {
            None
        };
        let prev = if i == 0 { input } else { &acts[i - 1] };
        let layer = &mut *layers[i];
        gemm(step, &delta, true, prev, false, 1.0, &mut layer.weight);
        for row in delta.row_iter() {
            for (b, d) in layer.bias.iter_mut().zip(row) {
                *b += step * d;
            }
        }
        if let Some(next) = next {
            delta = next;
        }
    }
}

/// `layer += step * grad`.
#[cfg(test)]
pub(crate) fn apply(layer: &mut Layer, grad: &LayerGrad, step: f64) {
    for (w, g) in layer.weight.as_mut_slice().iter_mut().zip(grad.weight.as_slice()) {
        *w += step * g;
    }
    for (b, g) in layer.bias.iter_mut().zip(&grad.bias) {
        *b += step * g;
    }
}
