//! Max and average pooling over spatial planes, one window grid per `(tb, c)`.
//!
//! Max pooling records, for every output element, the row-major offset of the
//! first maximal element inside its window. The backward pass routes the whole
//! incoming gradient to exactly that position; ties are therefore resolved
//! identically in forward and backward.

use crate::error::{Error, Result};
use crate::exec::{for_each_chunk, Exec};
use crate::tensor::{PoolSpec, Scalar, Shape5, Tensor5};

/// Row-major window offsets of the first maximal element, one per output
/// element, in output iteration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ArgmaxMap {
    offsets: Vec<u32>,
    pub spec: PoolSpec,
    pub in_shape: Shape5,
    pub out_shape: Shape5,
}

impl ArgmaxMap {
    /// Window-relative `(dy, dx)` of the element selected for output index `i`.
    pub fn window_offset(&self, i: usize) -> (usize, usize) {
        let o = self.offsets[i] as usize;
        (o / self.spec.window, o % self.spec.window)
    }

    pub fn offsets(&self) -> &[u32] {
        &self.offsets
    }
}

fn pooled_shape(input: Shape5, spec: &PoolSpec) -> Result<Shape5> {
    let (ho, wo) = spec.out_dims(input.h, input.w)?;
    Ok(input.with_spatial(ho, wo))
}

/// Window max plus the argmax routing map.
pub fn maxpool_forward<T: Scalar>(
    input: &Tensor5<T>,
    spec: PoolSpec,
    exec: Exec,
) -> Result<(Tensor5<T>, ArgmaxMap)> {
    let out_shape = pooled_shape(input.shape(), &spec)?;
    let (ho, wo) = (out_shape.h, out_shape.w);
    let (k, s) = (spec.window, spec.stride);
    let w = input.shape().w;
    let c = input.shape().c;

    let mut out = Tensor5::zeros(out_shape);
    let mut offsets = vec![0u32; out_shape.len()];
    {
        let plane_len = ho * wo;
        let pairs: Vec<(&mut [T], &mut [u32])> = out
            .data_mut()
            .chunks_mut(plane_len)
            .zip(offsets.chunks_mut(plane_len))
            .collect();
        let run = |pi: usize, out_plane: &mut [T], off_plane: &mut [u32]| {
            let tb = pi / c;
            let ch = pi % c;
            let in_plane = input.plane(tb, ch);
            for oh in 0..ho {
                for ow in 0..wo {
                    let base_y = oh * s;
                    let base_x = ow * s;
                    let mut best = in_plane[base_y * w + base_x];
                    let mut best_off = 0u32;
                    for dy in 0..k {
                        let row = &in_plane[(base_y + dy) * w + base_x..(base_y + dy) * w + base_x + k];
                        for (dx, &v) in row.iter().enumerate() {
                            // Strict comparison keeps the first maximum on ties.
                            if v > best {
                                best = v;
                                best_off = (dy * k + dx) as u32;
                            }
                        }
                    }
                    out_plane[oh * wo + ow] = best;
                    off_plane[oh * wo + ow] = best_off;
                }
            }
        };
        match exec {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                pairs
                    .into_par_iter()
                    .enumerate()
                    .for_each(|(pi, (o, f))| run(pi, o, f));
            }
            _ => {
                for (pi, (o, f)) in pairs.into_iter().enumerate() {
                    run(pi, o, f);
                }
            }
        }
    }

    Ok((
        out,
        ArgmaxMap {
            offsets,
            spec,
            in_shape: input.shape(),
            out_shape,
        },
    ))
}

/// Routes each output gradient to the recorded argmax position.
pub fn maxpool_backward<T: Scalar>(
    grad_out: &Tensor5<T>,
    map: &ArgmaxMap,
    exec: Exec,
) -> Result<Tensor5<T>> {
    if grad_out.shape() != map.out_shape {
        return Err(Error::ShapeMismatch {
            op: "maxpool_backward",
            left: grad_out.shape(),
            right: map.out_shape,
        });
    }
    let (ho, wo) = (map.out_shape.h, map.out_shape.w);
    let (k, s) = (map.spec.window, map.spec.stride);
    let w = map.in_shape.w;
    let h = map.in_shape.h;
    let c = map.in_shape.c;

    let mut dx = Tensor5::zeros(map.in_shape);
    for_each_chunk(exec, dx.data_mut(), h * w, |pi, dx_plane| {
        let tb = pi / c;
        let ch = pi % c;
        let g_plane = grad_out.plane(tb, ch);
        let off_plane = &map.offsets[pi * ho * wo..(pi + 1) * ho * wo];
        for oh in 0..ho {
            for ow in 0..wo {
                let o = off_plane[oh * wo + ow] as usize;
                let (dy, dx_off) = (o / k, o % k);
                let iy = oh * s + dy;
                let ix = ow * s + dx_off;
                // Overlapping windows (k > s) may route to the same input cell.
                dx_plane[iy * w + ix] = dx_plane[iy * w + ix] + g_plane[oh * wo + ow];
            }
        }
    });
    Ok(dx)
}

/// Window mean.
pub fn avgpool_forward<T: Scalar>(
    input: &Tensor5<T>,
    spec: PoolSpec,
    exec: Exec,
) -> Result<Tensor5<T>> {
    let out_shape = pooled_shape(input.shape(), &spec)?;
    let (ho, wo) = (out_shape.h, out_shape.w);
    let (k, s) = (spec.window, spec.stride);
    let w = input.shape().w;
    let c = input.shape().c;
    let inv = T::ONE / T::from_f64((k * k) as f64);

    let mut out = Tensor5::zeros(out_shape);
    for_each_chunk(exec, out.data_mut(), ho * wo, |pi, out_plane| {
        let tb = pi / c;
        let ch = pi % c;
        let in_plane = input.plane(tb, ch);
        for oh in 0..ho {
            for ow in 0..wo {
                let mut acc = T::ZERO;
                for dy in 0..k {
                    let row = &in_plane[(oh * s + dy) * w + ow * s..(oh * s + dy) * w + ow * s + k];
                    for &v in row {
                        acc = acc + v;
                    }
                }
                out_plane[oh * wo + ow] = acc * inv;
            }
        }
    });
    Ok(out)
}

/// Distributes each output gradient uniformly (`1/k^2`) over its window.
pub fn avgpool_backward<T: Scalar>(
    grad_out: &Tensor5<T>,
    spec: PoolSpec,
    in_shape: Shape5,
    exec: Exec,
) -> Result<Tensor5<T>> {
    let out_shape = pooled_shape(in_shape, &spec)?;
    if grad_out.shape() != out_shape {
        return Err(Error::ShapeMismatch {
            op: "avgpool_backward",
            left: grad_out.shape(),
            right: out_shape,
        });
    }
    let (ho, wo) = (out_shape.h, out_shape.w);
    let (k, s) = (spec.window, spec.stride);
    let (h, w) = (in_shape.h, in_shape.w);
    let c = in_shape.c;
    let inv = T::ONE / T::from_f64((k * k) as f64);

    let mut dx = Tensor5::zeros(in_shape);
    for_each_chunk(exec, dx.data_mut(), h * w, |pi, dx_plane| {
        let tb = pi / c;
        let ch = pi % c;
        let g_plane = grad_out.plane(tb, ch);
        for oh in 0..ho {
            for ow in 0..wo {
                let g = g_plane[oh * wo + ow] * inv;
                for dy in 0..k {
                    let row =
                        &mut dx_plane[(oh * s + dy) * w + ow * s..(oh * s + dy) * w + ow * s + k];
                    for v in row.iter_mut() {
                        *v = *v + g;
                    }
                }
            }
        }
    });
    Ok(dx)
}
