//! Pointwise and fully-connected primitives: leaky ReLU, channel concat,
//! dense layer, softmax.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Elementwise `y = x` for `x > 0`, else `alpha·x`. At `x == 0` the backward
/// slope is `alpha`.
pub fn leaky_relu<T: Element>(input: &Tensor<T>, alpha: T) -> Result<Tensor<T>> {
    if alpha < T::zero() {
        return Err(Error::contract(format!("leaky_relu alpha must be >= 0, got {alpha}")));
    }
    Ok(input.map(|x| if x > T::zero() { x } else { alpha * x }))
}

pub fn leaky_relu_vjp<T: Element>(input: &Tensor<T>, alpha: T, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut grad = grad_out.clone();
    for (g, &x) in grad.data_mut().iter_mut().zip(input.data().iter()) {
        if x <= T::zero() {
            *g = *g * alpha;
        }
    }
    grad
}

/// Stacks N×Ci×H×W tensors along the channel axis in argument order.
pub fn concat_channels<T: Element>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    if inputs.len() < 2 {
        return Err(Error::contract(format!(
            "concat_channels needs at least 2 inputs, got {}",
            inputs.len()
        )));
    }
    let (n, _, h, w) = inputs[0].dims4()?;
    let mut channels = Vec::with_capacity(inputs.len());
    for (i, t) in inputs.iter().enumerate() {
        let (ni, ci, hi, wi) = t.dims4()?;
        if (ni, hi, wi) != (n, h, w) {
            return Err(Error::contract(format!(
                "concat input {i} has shape {:?}, expected batch {n} and extent {h}x{w}",
                t.shape()
            )));
        }
        channels.push(ci);
    }
    let total_c: usize = channels.iter().sum();
    let hw = h * w;
    let mut data = Vec::with_capacity(n * total_c * hw);
    for ni in 0..n {
        for (t, &ci) in inputs.iter().zip(channels.iter()) {
            let base = ni * ci * hw;
            data.extend_from_slice(&t.data()[base..base + ci * hw]);
        }
    }
    Tensor::new(vec![n, total_c, h, w], data)
}

/// Slices the upstream gradient back to each input, in argument order.
pub fn concat_channels_vjp<T: Element>(
    input_channels: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Vec<Tensor<T>>> {
    let mut grads = Vec::with_capacity(input_channels.len());
    let mut lo = 0;
    for &ci in input_channels {
        grads.push(grad_out.slice_channels(lo, lo + ci)?);
        lo += ci;
    }
    Ok(grads)
}

/// Row-vector dense layer: `out = input·weight + bias` with input N×F,
/// weight F×K, bias K.
pub fn dense<T: Element>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, f) = input.dims2()?;
    let (wf, k) = weight.dims2()?;
    if wf != f {
        return Err(Error::contract(format!(
            "dense inner dims mismatch: input N×{f}, weight {wf}×{k}"
        )));
    }
    if bias.shape() != [k] {
        return Err(Error::contract(format!(
            "dense bias shape {:?} does not match K={k}",
            bias.shape()
        )));
    }
    let x = input.data();
    let w = weight.data();
    let b = bias.data();
    let mut out = Tensor::zeros(&[n, k]);
    let o = out.data_mut();
    for ni in 0..n {
        for kj in 0..k {
            let mut acc = b[kj];
            for fi in 0..f {
                acc = acc + x[ni * f + fi] * w[fi * k + kj];
            }
            o[ni * k + kj] = acc;
        }
    }
    Ok(out)
}

pub fn dense_vjp<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, f) = input.dims2()?;
    let (_, k) = weight.dims2()?;
    let x = input.data();
    let w = weight.data();
    let g = grad_out.data();

    let mut grad_input = Tensor::zeros(&[n, f]);
    let gi = grad_input.data_mut();
    for ni in 0..n {
        for fi in 0..f {
            let mut acc = T::zero();
            for kj in 0..k {
                acc = acc + g[ni * k + kj] * w[fi * k + kj];
            }
            gi[ni * f + fi] = acc;
        }
    }

    let mut grad_weight = Tensor::zeros(&[f, k]);
    let gw = grad_weight.data_mut();
    for fi in 0..f {
        for kj in 0..k {
            let mut acc = T::zero();
            for ni in 0..n {
                acc = acc + x[ni * f + fi] * g[ni * k + kj];
            }
            gw[fi * k + kj] = acc;
        }
    }

    let mut grad_bias = Tensor::zeros(&[k]);
    let gb = grad_bias.data_mut();
    for kj in 0..k {
        let mut acc = T::zero();
        for ni in 0..n {
            acc = acc + g[ni * k + kj];
        }
        gb[kj] = acc;
    }

    Ok((grad_input, grad_weight, grad_bias))
}

/// Row-wise `exp(x − rowmax)/Σexp(x − rowmax)`. The max subtraction makes the
/// result invariant (bitwise) under per-row constant shifts and prevents
/// overflow.
pub fn softmax<T: Element>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k) = logits.dims2()?;
    if k < 2 {
        return Err(Error::contract(format!("softmax needs K >= 2 classes, got {k}")));
    }
    let x = logits.data();
    let mut out = Tensor::zeros(&[n, k]);
    let o = out.data_mut();
    for ni in 0..n {
        let row = &x[ni * k..(ni + 1) * k];
        let mut max = row[0];
        for &v in &row[1..] {
            if v > max {
                max = v;
            }
        }
        let mut sum = T::zero();
        for (j, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            o[ni * k + j] = e;
            sum = sum + e;
        }
        let inv = T::one() / sum;
        for j in 0..k {
            o[ni * k + j] = o[ni * k + j] * inv;
        }
    }
    Ok(out)
}
