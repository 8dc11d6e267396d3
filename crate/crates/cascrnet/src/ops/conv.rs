//! Direct 2D convolution with stride, dilation, and valid/same padding.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Padding policy, resolved to explicit per-side pixel counts at call time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// No padding; the kernel never leaves the input.
    Valid,
    /// Zero padding chosen so stride-1 output keeps the input extent.
    /// When the required total is odd the extra pixel goes bottom/right.
    Same,
}

/// Explicit per-side zero padding in pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ResolvedPad {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

/// Geometry of one convolution: channel counts, kernel, stride, dilation, padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: Padding,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: (1, 1),
            dilation: (1, 1),
            padding: Padding::Valid,
        }
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = (dilation, dilation);
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = (stride, stride);
        self
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    /// Effective kernel extent along each axis: K + (K-1)(D-1).
    pub fn effective_kernel(&self) -> (usize, usize) {
        let (kh, kw) = self.kernel;
        let (dh, dw) = self.dilation;
        (kh + (kh - 1) * (dh - 1), kw + (kw - 1) * (dw - 1))
    }

    /// Per-side padding for an H×W input.
    pub fn resolve_padding(&self, h: usize, w: usize) -> ResolvedPad {
        match self.padding {
            Padding::Valid => ResolvedPad::default(),
            Padding::Same => {
                let (eff_h, eff_w) = self.effective_kernel();
                let (sh, sw) = self.stride;
                let total_h = same_pad_total(h, sh, eff_h);
                let total_w = same_pad_total(w, sw, eff_w);
                ResolvedPad {
                    top: total_h / 2,
                    bottom: total_h - total_h / 2,
                    left: total_w / 2,
                    right: total_w - total_w / 2,
                }
            }
        }
    }

    /// Output extent for an H×W input, or an error when no output position fits.
    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let pad = self.resolve_padding(h, w);
        let (eff_h, eff_w) = self.effective_kernel();
        let (sh, sw) = self.stride;
        let padded_h = h + pad.top + pad.bottom;
        let padded_w = w + pad.left + pad.right;
        if padded_h < eff_h || padded_w < eff_w {
            return Err(Error::invalid_spec(format!(
                "convolution produces a zero-size output: input {h}x{w}, \
                 effective kernel {eff_h}x{eff_w}, padding {:?}",
                self.padding
            )));
        }
        Ok(((padded_h - eff_h) / sh + 1, (padded_w - eff_w) / sw + 1))
    }

    pub fn validate_weight_bias<T: Element>(
        &self,
        weight: &Tensor<T>,
        bias: &Tensor<T>,
    ) -> Result<()> {
        let expect = [
            self.out_channels,
            self.in_channels,
            self.kernel.0,
            self.kernel.1,
        ];
        if weight.shape() != expect {
            return Err(Error::contract(format!(
                "conv weight shape {:?} does not match spec {:?}",
                weight.shape(),
                expect
            )));
        }
        if bias.shape() != [self.out_channels] {
            return Err(Error::contract(format!(
                "conv bias shape {:?} does not match out_channels {}",
                bias.shape(),
                self.out_channels
            )));
        }
        Ok(())
    }

    /// Learnable element count: Cout*Cin*Kh*Kw + Cout. Dilation-free by construction.
    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel.0 * self.kernel.1 + self.out_channels
    }
}

fn same_pad_total(extent: usize, stride: usize, eff_kernel: usize) -> usize {
    let out = extent.div_ceil(stride);
    ((out - 1) * stride + eff_kernel).saturating_sub(extent)
}

/// Direct convolution:
/// `out(n,co,y,x) = bias(co) + Σ_{ci,ky,kx} weight(co,ci,ky,kx) · padded(n,ci, y·Sh+ky·Dh, x·Sw+kx·Dw)`
/// with zero padding outside bounds. Output elements are independent and may be
/// computed in parallel; the per-element accumulation order (ci, ky, kx) is fixed,
/// so results are identical at any thread count.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    conv2d_impl(input, weight, bias, spec, true)
}

/// Single-threaded reference entry point; bitwise identical to [`conv2d`].
pub(crate) fn conv2d_seq<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    conv2d_impl(input, weight, bias, spec, false)
}

fn conv2d_impl<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
    parallel: bool,
) -> Result<Tensor<T>> {
    let (n, cin, h, w) = input.dims4()?;
    if cin != spec.in_channels {
        return Err(Error::contract(format!(
            "input has {cin} channels, spec expects {}",
            spec.in_channels
        )));
    }
    spec.validate_weight_bias(weight, bias)?;
    let (oh, ow) = spec.output_extent(h, w)?;
    let cout = spec.out_channels;
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;
    let pad = spec.resolve_padding(h, w);

    let x = input.data();
    let wt = weight.data();
    let b = bias.data();
    let mut out = Tensor::zeros(&[n, cout, oh, ow]);

    let plane = oh * ow;
    let kernel_plane = |plane_idx: usize, out_plane: &mut [T]| {
        let ni = plane_idx / cout;
        let co = plane_idx % cout;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b[co];
                for ci in 0..cin {
                    let in_base = (ni * cin + ci) * h * w;
                    let w_base = ((co * cin + ci) * kh) * kw;
                    for ky in 0..kh {
                        let iy = (oy * sh + ky * dh) as isize - pad.top as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = in_base + iy as usize * w;
                        for kx in 0..kw {
                            let ix = (ox * sw + kx * dw) as isize - pad.left as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc = acc + x[row + ix as usize] * wt[w_base + ky * kw + kx];
                        }
                    }
                }
                out_plane[oy * ow + ox] = acc;
            }
        }
    };

    if parallel {
        out.data_mut()
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(idx, chunk)| kernel_plane(idx, chunk));
    } else {
        for (idx, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            kernel_plane(idx, chunk);
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of [`conv2d`]: gradients w.r.t. input, weight, bias.
///
/// All three are written in gather form (one writer per output element), so the
/// parallel and sequential paths agree bitwise.
pub fn conv2d_vjp<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, cin, h, w) = input.dims4()?;
    let (gn, gcout, oh, ow) = grad_out.dims4()?;
    let cout = spec.out_channels;
    if gn != n || gcout != cout || (oh, ow) != spec.output_extent(h, w)? {
        return Err(Error::contract(format!(
            "upstream gradient shape {:?} does not match conv output",
            grad_out.shape()
        )));
    }
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;
    let pad = spec.resolve_padding(h, w);

    let x = input.data();
    let wt = weight.data();
    let g = grad_out.data();

    // Bias: gb(co) = Σ_{n,y,x} g(n,co,y,x)
    let mut grad_bias = Tensor::zeros(&[cout]);
    {
        let gb = grad_bias.data_mut();
        for ni in 0..n {
            for co in 0..cout {
                let base = (ni * cout + co) * oh * ow;
                let mut acc = T::zero();
                for i in 0..oh * ow {
                    acc = acc + g[base + i];
                }
                gb[co] = gb[co] + acc;
            }
        }
    }

    // Weight: gw(co,ci,ky,kx) = Σ_{n,y,x} g(n,co,y,x) · padded_in(n,ci,y·Sh+ky·Dh,x·Sw+kx·Dw)
    let mut grad_weight = Tensor::zeros(weight.shape());
    grad_weight
        .data_mut()
        .par_chunks_mut(kh * kw)
        .enumerate()
        .for_each(|(pair, chunk)| {
            let co = pair / cin;
            let ci = pair % cin;
            for ky in 0..kh {
                for kx in 0..kw {
                    let mut acc = T::zero();
                    for ni in 0..n {
                        let g_base = (ni * cout + co) * oh * ow;
                        let in_base = (ni * cin + ci) * h * w;
                        for oy in 0..oh {
                            let iy = (oy * sh + ky * dh) as isize - pad.top as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = in_base + iy as usize * w;
                            for ox in 0..ow {
                                let ix = (ox * sw + kx * dw) as isize - pad.left as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc = acc + g[g_base + oy * ow + ox] * x[row + ix as usize];
                            }
                        }
                    }
                    chunk[ky * kw + kx] = acc;
                }
            }
        });

    // Input: gi(n,ci,iy,ix) = Σ_{co,ky,kx} w(co,ci,ky,kx) · g(n,co,y,x)
    // where y,x are the output positions whose tap (ky,kx) lands on (iy,ix).
    let mut grad_input = Tensor::zeros(input.shape());
    grad_input
        .data_mut()
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(pair, chunk)| {
            let ni = pair / cin;
            let ci = pair % cin;
            for iy in 0..h {
                for ix in 0..w {
                    let mut acc = T::zero();
                    let py = iy + pad.top;
                    let px = ix + pad.left;
                    for co in 0..cout {
                        let g_base = (ni * cout + co) * oh * ow;
                        let w_base = ((co * cin + ci) * kh) * kw;
                        for ky in 0..kh {
                            let tap = ky * dh;
                            if tap > py || (py - tap) % sh != 0 {
                                continue;
                            }
                            let oy = (py - tap) / sh;
                            if oy >= oh {
                                continue;
                            }
                            for kx in 0..kw {
                                let tap = kx * dw;
                                if tap > px || (px - tap) % sw != 0 {
                                    continue;
                                }
                                let ox = (px - tap) / sw;
                                if ox >= ow {
                                    continue;
                                }
                                acc = acc
                                    + wt[w_base + ky * kw + kx] * g[g_base + oy * ow + ox];
                            }
                        }
                    }
                    chunk[iy * w + ix] = acc;
                }
            }
        });

    Ok((grad_input, grad_weight, grad_bias))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t4(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(vec![n, c, h, w], data).unwrap()
    }

    #[test]
    fn all_ones_3x3_valid_sums_to_nine() {
        let input = t4(1, 1, 3, 3, vec![1.0; 9]);
        let weight = t4(1, 1, 3, 3, vec![1.0; 9]);
        let bias = Tensor::new(vec![1], vec![0.0]).unwrap();
        let spec = ConvSpec::new(1, 1, 3);
        let out = conv2d(&input, &weight, &bias, &spec).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.item(), 9.0);
    }

    #[test]
    fn identity_kernel_same_padding_is_identity() {
        let input = Tensor::<f64>::from_fn(&[1, 1, 4, 5], |i| i as f64 * 0.5 - 3.0);
        let weight = t4(1, 1, 1, 1, vec![1.0]);
        let bias = Tensor::new(vec![1], vec![0.0]).unwrap();
        let spec = ConvSpec {
            kernel: (1, 1),
            ..ConvSpec::new(1, 1, 1)
        }
        .with_padding(Padding::Same);
        let out = conv2d(&input, &weight, &bias, &spec).unwrap();
        assert!(out.bits_eq(&input));
    }

    #[test]
    fn dilation_two_on_five_by_five() {
        // 1..25 row-major; all-ones 3x3 kernel, dilation 2, valid padding reads
        // rows {0,2,4} × cols {0,2,4}: 1+3+5 + 11+13+15 + 21+23+25 = 117.
        let input = t4(1, 1, 5, 5, (1..=25).map(f64::from).collect());
        let weight = t4(1, 1, 3, 3, vec![1.0; 9]);
        let bias = Tensor::new(vec![1], vec![0.0]).unwrap();
        let spec = ConvSpec::new(1, 1, 3).with_dilation(2);
        let out = conv2d(&input, &weight, &bias, &spec).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.item(), 117.0);
    }

    #[test]
    fn same_padding_keeps_extent_and_pads_bottom_right_on_odd_totals() {
        // 2x2 kernel needs 1 pixel of padding total; it must land bottom/right.
        let spec = ConvSpec {
            kernel: (2, 2),
            ..ConvSpec::new(1, 1, 2)
        }
        .with_padding(Padding::Same);
        let pad = spec.resolve_padding(4, 4);
        assert_eq!((pad.top, pad.bottom, pad.left, pad.right), (0, 1, 0, 1));
        assert_eq!(spec.output_extent(4, 4).unwrap(), (4, 4));
    }

    #[test]
    fn effective_kernel_extent() {
        // K + (K−1)(D−1) = 3 + 2·3 = 9
        let spec = ConvSpec::new(1, 1, 3).with_dilation(4);
        assert_eq!(spec.effective_kernel(), (9, 9));
    }

    #[test]
    fn weight_spec_mismatch_is_contract_violation() {
        let input = t4(1, 2, 4, 4, vec![0.0; 32]);
        let weight = t4(1, 1, 3, 3, vec![0.0; 9]);
        let bias = Tensor::new(vec![1], vec![0.0]).unwrap();
        let spec = ConvSpec::new(2, 1, 3);
        assert!(matches!(
            conv2d(&input, &weight, &bias, &spec),
            Err(crate::error::Error::Contract(_))
        ));
    }

    #[test]
    fn zero_size_output_is_invalid_spec() {
        let input = t4(1, 1, 2, 2, vec![0.0; 4]);
        let weight = t4(1, 1, 3, 3, vec![0.0; 9]);
        let bias = Tensor::new(vec![1], vec![0.0]).unwrap();
        let spec = ConvSpec::new(1, 1, 3);
        assert!(matches!(
            conv2d(&input, &weight, &bias, &spec),
            Err(crate::error::Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn parallel_matches_sequential_bitwise() {
        let input = Tensor::<f32>::from_fn(&[2, 3, 9, 7], |i| ((i * 37 % 101) as f32) / 17.0 - 2.0);
        let weight = Tensor::<f32>::from_fn(&[4, 3, 3, 3], |i| ((i * 53 % 97) as f32) / 29.0 - 1.5);
        let bias = Tensor::<f32>::from_fn(&[4], |i| i as f32 * 0.1);
        let spec = ConvSpec::new(3, 4, 3).with_dilation(2).with_padding(Padding::Same);
        let a = conv2d(&input, &weight, &bias, &spec).unwrap();
        let b = conv2d_seq(&input, &weight, &bias, &spec).unwrap();
        assert!(a.bits_eq(&b));
    }
}
