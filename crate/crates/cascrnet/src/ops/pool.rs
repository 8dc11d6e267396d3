//! Non-overlapping pooling: max, average, and global average.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

fn check_divisible(h: usize, w: usize, window: usize) -> Result<()> {
    if window == 0 {
        return Err(Error::invalid_spec("pooling window must be positive".to_string()));
    }
    if h % window != 0 || w % window != 0 {
        return Err(Error::invalid_spec(format!(
            "pooling window {window} does not divide spatial extent {h}x{w}"
        )));
    }
    Ok(())
}

/// Max over non-overlapping `window×window` tiles (stride = window).
pub fn maxpool2d<T: Element>(input: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    maxpool2d_with_argmax(input, window).map(|(out, _)| out)
}

/// Like [`maxpool2d`] but also returns, per output element, the flat input index
/// of the selected maximum. Ties resolve to the first element in row-major scan
/// order; the backward pass routes gradient to that index only.
pub fn maxpool2d_with_argmax<T: Element>(
    input: &Tensor<T>,
    window: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = input.dims4()?;
    check_divisible(h, w, window)?;
    let oh = h / window;
    let ow = w / window;
    let x = input.data();
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0usize; n * c * oh * ow];
    let o = out.data_mut();
    let mut oi = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + (oy * window) * w + ox * window;
                let mut best = x[best_idx];
                for ky in 0..window {
                    let row = base + (oy * window + ky) * w + ox * window;
                    for kx in 0..window {
                        let v = x[row + kx];
                        if v > best {
                            best = v;
                            best_idx = row + kx;
                        }
                    }
                }
                o[oi] = best;
                argmax[oi] = best_idx;
                oi += 1;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2d_vjp<T: Element>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.numel() {
        return Err(Error::contract(
            "maxpool argmax length does not match upstream gradient".to_string(),
        ));
    }
    let mut grad_input = Tensor::zeros(input_shape);
    let gi = grad_input.data_mut();
    for (g, &idx) in grad_out.data().iter().zip(argmax.iter()) {
        gi[idx] = gi[idx] + *g;
    }
    Ok(grad_input)
}

/// Mean over non-overlapping `window×window` tiles (stride = window).
/// Summation runs in row-major order within each tile.
pub fn avgpool2d<T: Element>(input: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    check_divisible(h, w, window)?;
    if window == 1 {
        return Ok(input.clone());
    }
    let oh = h / window;
    let ow = w / window;
    let inv = T::from_f64(1.0 / (window * window) as f64);
    let x = input.data();
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let o = out.data_mut();
    let mut oi = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for ky in 0..window {
                    let row = base + (oy * window + ky) * w + ox * window;
                    for kx in 0..window {
                        acc = acc + x[row + kx];
                    }
                }
                o[oi] = acc * inv;
                oi += 1;
            }
        }
    }
    Ok(out)
}

pub fn avgpool2d_vjp<T: Element>(
    input_shape: &[usize],
    window: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if window == 1 {
        return Ok(grad_out.clone());
    }
    let (h, w) = (input_shape[2], input_shape[3]);
    let ow = w / window;
    let inv = T::from_f64(1.0 / (window * window) as f64);
    let g = grad_out.data();
    let mut grad_input = Tensor::zeros(input_shape);
    let gi = grad_input.data_mut();
    let planes = input_shape[0] * input_shape[1];
    let out_plane = (h / window) * ow;
    for plane in 0..planes {
        let in_base = plane * h * w;
        let g_base = plane * out_plane;
        for iy in 0..h {
            for ix in 0..w {
                gi[in_base + iy * w + ix] = g[g_base + (iy / window) * ow + ix / window] * inv;
            }
        }
    }
    Ok(grad_input)
}

/// Mean over all spatial positions: N×C×H×W → N×C×1×1.
/// Summation runs in fixed row-major order for determinism.
pub fn global_avg_pool<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let inv = T::from_f64(1.0 / (h * w) as f64);
    let x = input.data();
    let mut out = Tensor::zeros(&[n, c, 1, 1]);
    let o = out.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        let mut acc = T::zero();
        for i in 0..h * w {
            acc = acc + x[base + i];
        }
        o[plane] = acc * inv;
    }
    Ok(out)
}

/// Upstream gradient fans out as g/(H·W) to every position.
pub fn global_avg_pool_vjp<T: Element>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let inv = T::from_f64(1.0 / (h * w) as f64);
    let g = grad_out.data();
    let mut grad_input = Tensor::zeros(input_shape);
    let gi = grad_input.data_mut();
    for plane in 0..input_shape[0] * input_shape[1] {
        let v = g[plane] * inv;
        let base = plane * h * w;
        for i in 0..h * w {
            gi[base + i] = v;
        }
    }
    Ok(grad_input)
}

/// Nearest replication of an N×C×1×1 map to N×C×H×W (the ASPP image-pool
/// branch's upsampling; all interpolations coincide for a 1×1 source).
pub fn broadcast_spatial<T: Element>(input: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (n, c, ih, iw) = input.dims4()?;
    if (ih, iw) != (1, 1) {
        return Err(Error::contract(format!(
            "broadcast_spatial expects a 1x1 spatial input, got {ih}x{iw}"
        )));
    }
    let x = input.data();
    let mut out = Tensor::zeros(&[n, c, h, w]);
    let o = out.data_mut();
    for plane in 0..n * c {
        let v = x[plane];
        let base = plane * h * w;
        for i in 0..h * w {
            o[base + i] = v;
        }
    }
    Ok(out)
}

/// Gradient of the broadcast: spatial sum back into the 1×1 source.
pub fn broadcast_spatial_vjp<T: Element>(grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = grad_out.dims4()?;
    let g = grad_out.data();
    let mut grad_input = Tensor::zeros(&[n, c, 1, 1]);
    let gi = grad_input.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        let mut acc = T::zero();
        for i in 0..h * w {
            acc = acc + g[base + i];
        }
        gi[plane] = acc;
    }
    Ok(grad_input)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_replicates_and_sums_back() {
        let t = Tensor::new(vec![1, 2, 1, 1], vec![3.0f64, -1.0]).unwrap();
        let out = broadcast_spatial(&t, 2, 3).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2, 3]);
        assert!(out.data()[..6].iter().all(|&v| v == 3.0));
        assert!(out.data()[6..].iter().all(|&v| v == -1.0));
        let back = broadcast_spatial_vjp(&out).unwrap();
        assert_eq!(back.data(), &[18.0, -6.0]);
    }

    #[test]
    fn max_of_single_window() {
        let t = Tensor::new(vec![1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let out = maxpool2d(&t, 2).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.item(), 4.0);
    }

    #[test]
    fn constant_field_pools_to_constant() {
        let t = Tensor::full(&[2, 3, 4, 4], 2.5f32);
        let out = maxpool2d(&t, 2).unwrap();
        assert_eq!(out.shape(), &[2, 3, 2, 2]);
        assert!(out.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn four_by_four_windows() {
        let t = Tensor::new(vec![1, 1, 4, 4], (1..=16).map(f64::from).collect()).unwrap();
        let out = maxpool2d(&t, 2).unwrap();
        assert_eq!(out.data(), &[6.0, 8.0, 14.0, 16.0]);
    }

    #[test]
    fn non_divisible_extent_is_invalid_spec() {
        let t = Tensor::zeros(&[1, 1, 5, 4]);
        assert!(matches!(
            maxpool2d::<f32>(&t, 2),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn max_gradient_routes_to_first_tie_in_row_major_order() {
        let t = Tensor::new(vec![1, 1, 2, 2], vec![3.0f64, 1.0, 3.0, 2.0]).unwrap();
        let (_, argmax) = maxpool2d_with_argmax(&t, 2).unwrap();
        assert_eq!(argmax, vec![0]);
        let g = Tensor::new(vec![1, 1, 1, 1], vec![5.0]).unwrap();
        let gi = maxpool2d_vjp(&[1, 1, 2, 2], &argmax, &g).unwrap();
        assert_eq!(gi.data(), &[5.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn global_mean_and_fanout() {
        let t = Tensor::new(vec![1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let out = global_avg_pool(&t).unwrap();
        assert_eq!(out.item(), 2.5);

        let g = Tensor::new(vec![1, 1, 1, 1], vec![8.0]).unwrap();
        let gi = global_avg_pool_vjp(&[1, 1, 2, 2], &g).unwrap();
        assert_eq!(gi.data(), &[2.0, 2.0, 2.0, 2.0]);

        let constant = Tensor::full(&[2, 4, 3, 3], 3.5f32);
        let pooled = global_avg_pool(&constant).unwrap();
        assert!(pooled.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn avgpool_factor_two() {
        let t = Tensor::new(vec![1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let out = avgpool2d(&t, 2).unwrap();
        assert_eq!(out.item(), 2.5);
        let back = avgpool2d_vjp(&[1, 1, 2, 2], 2, &out).unwrap();
        assert_eq!(back.data(), &[0.625, 0.625, 0.625, 0.625]);
    }
}
