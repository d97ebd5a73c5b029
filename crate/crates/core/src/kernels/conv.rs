//! Direct 2-D cross-correlation over the folded `(T,B)` batch axis.
//!
//! Weights live in a [`Tensor5`] of shape `[1, Cout, Cin, Kh, Kw]`. Forward
//! and both gradients are organized so each parallel task owns a disjoint
//! output slice; no floating-point sum crosses task boundaries.

use crate::error::{Error, Result};
use crate::exec::{for_each_chunk, Exec};
use crate::tensor::{Scalar, Shape5, Tensor5};

/// Output shape of `conv2d` for the given geometry.
pub fn conv_out_shape(input: Shape5, weight: Shape5, stride: usize, pad: usize) -> Result<Shape5> {
    if stride == 0 {
        return Err(Error::ZeroStride);
    }
    if weight.t != 1 {
        return Err(Error::ShapeMismatch {
            op: "conv2d weight",
            left: weight,
            right: Shape5::new(1, weight.b, weight.c, weight.h, weight.w),
        });
    }
    if weight.c != input.c {
        return Err(Error::ChannelMismatch {
            what: "conv2d input channels",
            expected: weight.c,
            got: input.c,
        });
    }
    let (kh, kw) = (weight.h, weight.w);
    let (h, w) = (input.h, input.w);
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::ConvGeometry {
            input: (h, w),
            kernel: (kh, kw),
            stride,
            pad,
        });
    }
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    Ok(Shape5::new(input.t, input.b, weight.b, ho, wo))
}

/// Range of output indices `o` with `0 <= o*stride + k_off - pad < in_n`.
#[inline]
fn valid_range(out_n: usize, in_n: usize, k_off: usize, pad: usize, stride: usize) -> (usize, usize) {
    let shift = k_off as isize - pad as isize;
    let lo = if shift >= 0 {
        0
    } else {
        ((-shift) as usize).div_ceil(stride)
    };
    let hi_num = in_n as isize - 1 - shift;
    let hi = if hi_num < 0 {
        0
    } else {
        (hi_num as usize / stride + 1).min(out_n)
    };
    (lo.min(hi), hi)
}

/// Cross-correlation forward pass. `bias`, when present, has length `Cout`.
pub fn conv2d<T: Scalar>(
    input: &Tensor5<T>,
    weight: &Tensor5<T>,
    bias: Option<&[T]>,
    stride: usize,
    pad: usize,
    exec: Exec,
) -> Result<Tensor5<T>> {
    let ws = weight.shape();
    let out_shape = conv_out_shape(input.shape(), ws, stride, pad)?;
    if let Some(b) = bias {
        if b.len() != ws.b {
            return Err(Error::ChannelMismatch {
                what: "conv2d bias",
                expected: ws.b,
                got: b.len(),
            });
        }
    }
    let (cin, kh, kw) = (ws.c, ws.h, ws.w);
    let (h, w) = (input.shape().h, input.shape().w);
    let (ho, wo) = (out_shape.h, out_shape.w);
    let cout = ws.b;
    let wdat = weight.data();

    let mut out = Tensor5::zeros(out_shape);
    // One task per output (tb, co) plane.
    for_each_chunk(exec, out.data_mut(), ho * wo, |pi, out_plane| {
        let tb = pi / cout;
        let co = pi % cout;
        if let Some(b) = bias {
            out_plane.fill(b[co]);
        }
        for ci in 0..cin {
            let in_plane = input.plane(tb, ci);
            for ky in 0..kh {
                let (oh_lo, oh_hi) = valid_range(ho, h, ky, pad, stride);
                for kx in 0..kw {
                    let wv = wdat[((co * cin + ci) * kh + ky) * kw + kx];
                    let (ow_lo, ow_hi) = valid_range(wo, w, kx, pad, stride);
                    if ow_lo >= ow_hi {
                        continue;
                    }
                    let xshift = kx as isize - pad as isize;
                    let yshift = ky as isize - pad as isize;
                    for oh in oh_lo..oh_hi {
                        let ih = (oh * stride) as isize + yshift;
                        let in_row = &in_plane[ih as usize * w..(ih as usize + 1) * w];
                        let out_row = &mut out_plane[oh * wo..(oh + 1) * wo];
                        if stride == 1 {
                            let iw0 = (ow_lo as isize + xshift) as usize;
                            for (o, &x) in out_row[ow_lo..ow_hi]
                                .iter_mut()
                                .zip(&in_row[iw0..iw0 + (ow_hi - ow_lo)])
                            {
                                *o = *o + wv * x;
                            }
                        } else {
                            for ow in ow_lo..ow_hi {
                                let iw = (ow * stride) as isize + xshift;
                                out_row[ow] = out_row[ow] + wv * in_row[iw as usize];
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Gradient of `conv2d` with respect to its input.
pub fn conv2d_grad_input<T: Scalar>(
    grad_out: &Tensor5<T>,
    weight: &Tensor5<T>,
    in_shape: Shape5,
    stride: usize,
    pad: usize,
    exec: Exec,
) -> Result<Tensor5<T>> {
    let ws = weight.shape();
    let expect = conv_out_shape(in_shape, ws, stride, pad)?;
    if grad_out.shape() != expect {
        return Err(Error::ShapeMismatch {
            op: "conv2d_grad_input",
            left: grad_out.shape(),
            right: expect,
        });
    }
    let (cin, kh, kw) = (ws.c, ws.h, ws.w);
    let cout = ws.b;
    let (h, w) = (in_shape.h, in_shape.w);
    let (ho, wo) = (expect.h, expect.w);
    let wdat = weight.data();

    let mut dx = Tensor5::zeros(in_shape);
    // One task per input (tb, ci) plane; each accumulates over every co.
    for_each_chunk(exec, dx.data_mut(), h * w, |pi, dx_plane| {
        let tb = pi / cin;
        let ci = pi % cin;
        for co in 0..cout {
            let g_plane = grad_out.plane(tb, co);
            for ky in 0..kh {
                let (oh_lo, oh_hi) = valid_range(ho, h, ky, pad, stride);
                let yshift = ky as isize - pad as isize;
                for kx in 0..kw {
                    let wv = wdat[((co * cin + ci) * kh + ky) * kw + kx];
                    let (ow_lo, ow_hi) = valid_range(wo, w, kx, pad, stride);
                    if ow_lo >= ow_hi {
                        continue;
                    }
                    let xshift = kx as isize - pad as isize;
                    for oh in oh_lo..oh_hi {
                        let ih = ((oh * stride) as isize + yshift) as usize;
                        let g_row = &g_plane[oh * wo..(oh + 1) * wo];
                        let dx_row = &mut dx_plane[ih * w..(ih + 1) * w];
                        if stride == 1 {
                            let iw0 = (ow_lo as isize + xshift) as usize;
                            for (x, &g) in dx_row[iw0..iw0 + (ow_hi - ow_lo)]
                                .iter_mut()
                                .zip(&g_row[ow_lo..ow_hi])
                            {
                                *x = *x + wv * g;
                            }
                        } else {
                            for ow in ow_lo..ow_hi {
                                let iw = ((ow * stride) as isize + xshift) as usize;
                                dx_row[iw] = dx_row[iw] + wv * g_row[ow];
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(dx)
}

/// Gradient of `conv2d` with respect to its weights.
pub fn conv2d_grad_weight<T: Scalar>(
    grad_out: &Tensor5<T>,
    input: &Tensor5<T>,
    weight_shape: Shape5,
    stride: usize,
    pad: usize,
    exec: Exec,
) -> Result<Tensor5<T>> {
    let expect = conv_out_shape(input.shape(), weight_shape, stride, pad)?;
    if grad_out.shape() != expect {
        return Err(Error::ShapeMismatch {
            op: "conv2d_grad_weight",
            left: grad_out.shape(),
            right: expect,
        });
    }
    let (cin, kh, kw) = (weight_shape.c, weight_shape.h, weight_shape.w);
    let (h, w) = (input.shape().h, input.shape().w);
    let (ho, wo) = (expect.h, expect.w);
    let tbs = input.shape().folded_batch();

    let mut dw = Tensor5::zeros(weight_shape);
    // One task per output channel; the folded-batch sum stays inside the task
    // in fixed order, so results are independent of thread count.
    for_each_chunk(exec, dw.data_mut(), cin * kh * kw, |co, dw_co| {
        for tb in 0..tbs {
            let g_plane = grad_out.plane(tb, co);
            for ci in 0..cin {
                let in_plane = input.plane(tb, ci);
                for ky in 0..kh {
                    let (oh_lo, oh_hi) = valid_range(ho, h, ky, pad, stride);
                    let yshift = ky as isize - pad as isize;
                    for kx in 0..kw {
                        let (ow_lo, ow_hi) = valid_range(wo, w, kx, pad, stride);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        let xshift = kx as isize - pad as isize;
                        let mut acc = T::ZERO;
                        for oh in oh_lo..oh_hi {
                            let ih = ((oh * stride) as isize + yshift) as usize;
                            let in_row = &in_plane[ih * w..(ih + 1) * w];
                            let g_row = &g_plane[oh * wo..(oh + 1) * wo];
                            if stride == 1 {
                                let iw0 = (ow_lo as isize + xshift) as usize;
                                for (&g, &x) in g_row[ow_lo..ow_hi]
                                    .iter()
                                    .zip(&in_row[iw0..iw0 + (ow_hi - ow_lo)])
                                {
                                    acc = acc + g * x;
                                }
                            } else {
                                for ow in ow_lo..ow_hi {
                                    let iw = ((ow * stride) as isize + xshift) as usize;
                                    acc = acc + g_row[ow] * in_row[iw];
                                }
                            }
                        }
                        let slot = (ci * kh + ky) * kw + kx;
                        dw_co[slot] = dw_co[slot] + acc;
                    }
                }
            }
        }
    });
    Ok(dw)
}
