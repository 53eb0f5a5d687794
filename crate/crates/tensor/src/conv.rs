//! Direct convolution and pooling kernels on flat NCHW buffers.
//!
//! Correctness is pinned by nested-loop oracles in the tests; these
//! versions just keep the innermost loop contiguous over output width
//! so it vectorizes.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub oh: usize,
    pub ow: usize,
}

/// Output extent of a conv/pool axis: floor((size + 2p - d(k-1) - 1)/s) + 1.
pub fn conv_out_dim(
    size: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Option<usize> {
    let span = dilation.checked_mul(kernel - 1)? + 1;
    let padded = size + 2 * padding;
    if padded < span {
        return None;
    }
    Some((padded - span) / stride + 1)
}

impl ConvGeom {
    pub fn new(
        input_shape: &[usize],
        weight_shape: &[usize],
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(TensorError::arg("stride", "must be positive"));
        }
        if dilation == 0 {
            return Err(TensorError::arg("dilation", "must be positive"));
        }
        let [n, cin, h, w]: [usize; 4] = input_shape
            .try_into()
            .map_err(|_| TensorError::ShapeMismatch {
                context: "conv2d input",
                expected: vec![4],
                got: vec![input_shape.len()],
            })?;
        let [cout, wcin, kh, kw]: [usize; 4] =
            weight_shape
                .try_into()
                .map_err(|_| TensorError::ShapeMismatch {
                    context: "conv2d weight",
                    expected: vec![4],
                    got: vec![weight_shape.len()],
                })?;
        if wcin != cin {
            return Err(TensorError::ShapeMismatch {
                context: "conv2d channels",
                expected: vec![cin],
                got: vec![wcin],
            });
        }
        let oh = conv_out_dim(h, kh, stride, padding, dilation).ok_or_else(|| {
            TensorError::arg("padding", format!("kernel span exceeds padded height {h}"))
        })?;
        let ow = conv_out_dim(w, kw, stride, padding, dilation).ok_or_else(|| {
            TensorError::arg("padding", format!("kernel span exceeds padded width {w}"))
        })?;
        Ok(ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            padding,
            dilation,
            oh,
            ow,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.cout, self.oh, self.ow]
    }
}

/// Range of output positions whose input tap `o*stride + k*dilation - padding`
/// lands inside `[0, size)`.
#[inline]
fn valid_out_range(
    out_dim: usize,
    size: usize,
    k: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> (usize, usize) {
    let off = k as i64 * dilation as i64 - padding as i64; // input = o*stride + off
    let s = stride as i64;
    let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
    // largest o with o*s + off <= size-1
    let hi_inclusive = (size as i64 - 1 - off).div_euclid(s);
    if hi_inclusive < lo {
        return (0, 0);
    }
    (lo as usize, (hi_inclusive as usize + 1).min(out_dim))
}

pub fn conv2d_forward<T: Scalar>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let mut out = vec![T::ZERO; g.n * g.cout * g.oh * g.ow];
    if let Some(b) = bias {
        for n in 0..g.n {
            for co in 0..g.cout {
                let base = ((n * g.cout + co) * g.oh) * g.ow;
                out[base..base + g.oh * g.ow].fill(b[co]);
            }
        }
    }
    for n in 0..g.n {
        for co in 0..g.cout {
            let out_base = ((n * g.cout + co) * g.oh) * g.ow;
            for ci in 0..g.cin {
                let x_base = ((n * g.cin + ci) * g.h) * g.w;
                for kh in 0..g.kh {
                    let (oh_lo, oh_hi) =
                        valid_out_range(g.oh, g.h, kh, g.stride, g.padding, g.dilation);
                    for kw in 0..g.kw {
                        let wv = w[((co * g.cin + ci) * g.kh + kh) * g.kw + kw];
                        let (ow_lo, ow_hi) =
                            valid_out_range(g.ow, g.w, kw, g.stride, g.padding, g.dilation);
                        let woff = kw as i64 * g.dilation as i64 - g.padding as i64;
                        for oh in oh_lo..oh_hi {
                            let ih = (oh * g.stride) as i64 + kh as i64 * g.dilation as i64
                                - g.padding as i64;
                            let xrow = x_base + ih as usize * g.w;
                            let orow = out_base + oh * g.ow;
                            for ow in ow_lo..ow_hi {
                                let iw = (ow * g.stride) as i64 + woff;
                                out[orow + ow] += wv * x[xrow + iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv2d_backward_input<T: Scalar>(gout: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let mut gx = vec![T::ZERO; g.n * g.cin * g.h * g.w];
    for n in 0..g.n {
        for co in 0..g.cout {
            let out_base = ((n * g.cout + co) * g.oh) * g.ow;
            for ci in 0..g.cin {
                let x_base = ((n * g.cin + ci) * g.h) * g.w;
                for kh in 0..g.kh {
                    let (oh_lo, oh_hi) =
                        valid_out_range(g.oh, g.h, kh, g.stride, g.padding, g.dilation);
                    for kw in 0..g.kw {
                        let wv = w[((co * g.cin + ci) * g.kh + kh) * g.kw + kw];
                        let (ow_lo, ow_hi) =
                            valid_out_range(g.ow, g.w, kw, g.stride, g.padding, g.dilation);
                        let woff = kw as i64 * g.dilation as i64 - g.padding as i64;
                        for oh in oh_lo..oh_hi {
                            let ih = (oh * g.stride) as i64 + kh as i64 * g.dilation as i64
                                - g.padding as i64;
                            let xrow = x_base + ih as usize * g.w;
                            let orow = out_base + oh * g.ow;
                            for ow in ow_lo..ow_hi {
                                let iw = (ow * g.stride) as i64 + woff;
                                gx[xrow + iw as usize] += wv * gout[orow + ow];
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

pub fn conv2d_backward_weight<T: Scalar>(gout: &[T], x: &[T], g: &ConvGeom) -> Vec<T> {
    let mut gw = vec![T::ZERO; g.cout * g.cin * g.kh * g.kw];
    for n in 0..g.n {
        for co in 0..g.cout {
            let out_base = ((n * g.cout + co) * g.oh) * g.ow;
            for ci in 0..g.cin {
                let x_base = ((n * g.cin + ci) * g.h) * g.w;
                for kh in 0..g.kh {
                    let (oh_lo, oh_hi) =
                        valid_out_range(g.oh, g.h, kh, g.stride, g.padding, g.dilation);
                    for kw in 0..g.kw {
                        let (ow_lo, ow_hi) =
                            valid_out_range(g.ow, g.w, kw, g.stride, g.padding, g.dilation);
                        let woff = kw as i64 * g.dilation as i64 - g.padding as i64;
                        let mut acc = T::ZERO;
                        for oh in oh_lo..oh_hi {
                            let ih = (oh * g.stride) as i64 + kh as i64 * g.dilation as i64
                                - g.padding as i64;
                            let xrow = x_base + ih as usize * g.w;
                            let orow = out_base + oh * g.ow;
                            for ow in ow_lo..ow_hi {
                                let iw = (ow * g.stride) as i64 + woff;
                                acc += gout[orow + ow] * x[xrow + iw as usize];
                            }
                        }
                        gw[((co * g.cin + ci) * g.kh + kh) * g.kw + kw] += acc;
                    }
                }
            }
        }
    }
    gw
}

pub fn conv2d_backward_bias<T: Scalar>(gout: &[T], g: &ConvGeom) -> Vec<T> {
    let mut gb = vec![T::ZERO; g.cout];
    for n in 0..g.n {
        for co in 0..g.cout {
            let base = ((n * g.cout + co) * g.oh) * g.ow;
            let mut acc = T::ZERO;
            for v in &gout[base..base + g.oh * g.ow] {
                acc += *v;
            }
            gb[co] += acc;
        }
    }
    gb
}

#[derive(Debug, Clone, Copy)]
pub struct PoolGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

impl PoolGeom {
    pub fn new(
        input_shape: &[usize],
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if kernel == 0 {
            return Err(TensorError::arg("kernel", "must be positive"));
        }
        if stride == 0 {
            return Err(TensorError::arg("stride", "must be positive"));
        }
        let [n, c, h, w]: [usize; 4] = input_shape
            .try_into()
            .map_err(|_| TensorError::ShapeMismatch {
                context: "pool_max2d input",
                expected: vec![4],
                got: vec![input_shape.len()],
            })?;
        if kernel > h + 2 * padding || kernel > w + 2 * padding {
            return Err(TensorError::arg(
                "kernel",
                format!("kernel {kernel} larger than padded input {h}x{w} (padding {padding})"),
            ));
        }
        let oh = (h + 2 * padding - kernel) / stride + 1;
        let ow = (w + 2 * padding - kernel) / stride + 1;
        Ok(PoolGeom {
            n,
            c,
            h,
            w,
            kernel,
            stride,
            padding,
            oh,
            ow,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.c, self.oh, self.ow]
    }
}

/// Max pooling with -inf padding. Returns values plus the flat input index of
/// each window's max (ties resolved to the lowest linear index; -1 when the
/// whole window is padding).
pub fn pool_max2d_forward<T: Scalar>(x: &[T], g: &PoolGeom) -> (Vec<T>, Vec<i64>) {
    let mut out = vec![T::neg_infinity(); g.n * g.c * g.oh * g.ow];
    let mut arg = vec![-1i64; out.len()];
    for n in 0..g.n {
        for c in 0..g.c {
            let x_base = ((n * g.c + c) * g.h) * g.w;
            let o_base = ((n * g.c + c) * g.oh) * g.ow;
            for oh in 0..g.oh {
                for ow in 0..g.ow {
                    let mut best = T::neg_infinity();
                    let mut best_idx = -1i64;
                    for kh in 0..g.kernel {
                        let ih = (oh * g.stride + kh) as i64 - g.padding as i64;
                        if ih < 0 || ih >= g.h as i64 {
                            continue;
                        }
                        for kw in 0..g.kernel {
                            let iw = (ow * g.stride + kw) as i64 - g.padding as i64;
                            if iw < 0 || iw >= g.w as i64 {
                                continue;
                            }
                            let idx = x_base + ih as usize * g.w + iw as usize;
                            let v = x[idx];
                            if best_idx < 0 || v > best {
                                best = v;
                                best_idx = idx as i64;
                            }
                        }
                    }
                    out[o_base + oh * g.ow + ow] = best;
                    arg[o_base + oh * g.ow + ow] = best_idx;
                }
            }
        }
    }
    (out, arg)
}
