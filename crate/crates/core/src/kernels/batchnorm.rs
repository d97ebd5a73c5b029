//! Per-channel batch normalization over the folded `(T*B, H, W)` extent.

use crate::error::{Error, Result};
use crate::exec::{for_each_chunk, map_indexed, Exec};
use crate::tensor::{Scalar, Tensor5};

/// Whether batch or running statistics drive the normalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Exponential-moving-average statistics carried between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    /// Fresh stats: zero mean, unit variance.
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![T::ZERO; channels],
            var: vec![T::ONE; channels],
        }
    }

    /// EMA update `running = (1 - momentum) * running + momentum * batch`.
    pub fn update(&mut self, batch: &BnStats<T>, momentum: T) {
        let keep = T::ONE - momentum;
        for c in 0..self.mean.len() {
            self.mean[c] = keep * self.mean[c] + momentum * batch.mean[c];
            self.var[c] = keep * self.var[c] + momentum * batch.var[c];
        }
    }
}

/// Statistics actually used to normalize one forward pass; saved for backward.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    /// Biased variance (divides by N), matching the normalization denominator.
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
    pub mode: BnMode,
}

fn check_params<T>(c: usize, name: &'static str, v: &[T]) -> Result<()> {
    if v.len() != c {
        return Err(Error::ChannelMismatch {
            what: name,
            expected: c,
            got: v.len(),
        });
    }
    Ok(())
}

/// Normalize per channel; train mode computes batch statistics, eval mode uses
/// the provided running statistics. Returns the stats used, for backward and
/// for the caller's EMA update.
pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor5<T>,
    gamma: &[T],
    beta: &[T],
    running: &RunningStats<T>,
    mode: BnMode,
    eps: T,
    exec: Exec,
) -> Result<(Tensor5<T>, BnStats<T>)> {
    let shape = input.shape();
    let c = shape.c;
    check_params(c, "batchnorm gamma", gamma)?;
    check_params(c, "batchnorm beta", beta)?;
    check_params(c, "batchnorm running mean", &running.mean)?;
    check_params(c, "batchnorm running var", &running.var)?;
    let tbs = shape.folded_batch();
    let plane = shape.plane();
    let n = tbs * plane;
    if n == 0 {
        return Err(Error::EmptyBatch);
    }

    let stats = match mode {
        BnMode::Train => {
            // Channel sums run sequentially inside each channel task.
            let per_channel: Vec<(T, T)> = map_indexed(exec, c, |ch| {
                let mut sum = T::ZERO;
                for tb in 0..tbs {
                    for &v in input.plane(tb, ch) {
                        sum = sum + v;
                    }
                }
                let mean = sum / T::from_f64(n as f64);
                let mut sq = T::ZERO;
                for tb in 0..tbs {
                    for &v in input.plane(tb, ch) {
                        let d = v - mean;
                        sq = sq + d * d;
                    }
                }
                (mean, sq / T::from_f64(n as f64))
            });
            let mean: Vec<T> = per_channel.iter().map(|p| p.0).collect();
            let var: Vec<T> = per_channel.iter().map(|p| p.1).collect();
            let inv_std = var.iter().map(|&v| T::ONE / (v + eps).sqrt()).collect();
            BnStats {
                mean,
                var,
                inv_std,
                mode,
            }
        }
        BnMode::Eval => BnStats {
            mean: running.mean.clone(),
            var: running.var.clone(),
            inv_std: running
                .var
                .iter()
                .map(|&v| T::ONE / (v + eps).sqrt())
                .collect(),
            mode,
        },
    };

    let mut out = Tensor5::zeros(shape);
    for_each_chunk(exec, out.data_mut(), plane, |pi, out_plane| {
        let tb = pi / c;
        let ch = pi % c;
        let m = stats.mean[ch];
        let k = gamma[ch] * stats.inv_std[ch];
        let b = beta[ch];
        for (o, &x) in out_plane.iter_mut().zip(input.plane(tb, ch)) {
            *o = k * (x - m) + b;
        }
    });
    Ok((out, stats))
}

/// Gradients with respect to input, gamma and beta.
///
/// Train mode differentiates through the batch statistics; eval mode treats
/// mean and variance as constants.
pub fn batchnorm_backward<T: Scalar>(
    grad_out: &Tensor5<T>,
    input: &Tensor5<T>,
    gamma: &[T],
    stats: &BnStats<T>,
    exec: Exec,
) -> Result<(Tensor5<T>, Vec<T>, Vec<T>)> {
    let shape = input.shape();
    if grad_out.shape() != shape {
        return Err(Error::ShapeMismatch {
            op: "batchnorm_backward",
            left: grad_out.shape(),
            right: shape,
        });
    }
    let c = shape.c;
    check_params(c, "batchnorm gamma", gamma)?;
    let tbs = shape.folded_batch();
    let plane = shape.plane();
    let n = T::from_f64((tbs * plane) as f64);

    // Per-channel reductions: sum(dy) and sum(dy * xhat).
    let sums: Vec<(T, T)> = map_indexed(exec, c, |ch| {
        let m = stats.mean[ch];
        let is = stats.inv_std[ch];
        let mut s_dy = T::ZERO;
        let mut s_dyx = T::ZERO;
        for tb in 0..tbs {
            let g = grad_out.plane(tb, ch);
            let x = input.plane(tb, ch);
            for (&gy, &xv) in g.iter().zip(x) {
                s_dy = s_dy + gy;
                s_dyx = s_dyx + gy * (xv - m) * is;
            }
        }
        (s_dy, s_dyx)
    });
    let grad_beta: Vec<T> = sums.iter().map(|s| s.0).collect();
    let grad_gamma: Vec<T> = sums.iter().map(|s| s.1).collect();

    let mut dx = Tensor5::zeros(shape);
    for_each_chunk(exec, dx.data_mut(), plane, |pi, dx_plane| {
        let tb = pi / c;
        let ch = pi % c;
        let m = stats.mean[ch];
        let is = stats.inv_std[ch];
        let k = gamma[ch] * is;
        let g = grad_out.plane(tb, ch);
        let x = input.plane(tb, ch);
        match stats.mode {
            BnMode::Train => {
                let mean_dy = grad_beta[ch] / n;
                let mean_dyx = grad_gamma[ch] / n;
                for ((d, &gy), &xv) in dx_plane.iter_mut().zip(g).zip(x) {
                    let xhat = (xv - m) * is;
                    *d = k * (gy - mean_dy - xhat * mean_dyx);
                }
            }
            BnMode::Eval => {
                for (d, &gy) in dx_plane.iter_mut().zip(g) {
                    *d = k * gy;
                }
            }
        }
    });
    Ok((dx, grad_gamma, grad_beta))
}
