//! Central finite differences for validating backward passes.
//!
//! The caller supplies the leaf tensors, the analytic gradients produced by
//! the tape, and a closure that rebuilds the scalar loss from perturbed
//! leaves. Every element is perturbed by `±eps` and the two-sided difference
//! quotient is compared against the analytic value with the relative metric
//! `|a - n| / max(1, |a|, |n|)`.

use crate::error::{Error, Result};
use crate::tensor::Tensor5;

/// Worst element found by a finite-difference sweep.
#[derive(Clone, Copy, Debug)]
pub struct FdWorst {
    pub leaf: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Outcome of a finite-difference sweep.
#[derive(Clone, Copy, Debug)]
pub struct FdOutcome {
    /// Elements compared.
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<FdWorst>,
}

impl FdOutcome {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Relative error with unit floor: `|a - n| / max(1, |a|, |n|)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1.0f64.max(analytic.abs()).max(numeric.abs())
}

/// Largest elementwise [`rel_err`] between two tensors of equal shape.
pub fn max_tensor_rel_err(a: &Tensor5<f64>, b: &Tensor5<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "max_tensor_rel_err",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max))
}

/// Sweep every element of every leaf with central differences of step `eps`
/// and compare against the provided analytic gradients. `eval` receives the
/// (perturbed) leaves and must recompute the scalar output.
pub fn fd_check<F>(
    leaves: &[Tensor5<f64>],
    grads: &[Tensor5<f64>],
    eps: f64,
    eval: F,
) -> Result<FdOutcome>
where
    F: Fn(&[Tensor5<f64>]) -> Result<f64>,
{
    if leaves.len() != grads.len() {
        return Err(Error::DataLength {
            expected: leaves.len(),
            got: grads.len(),
        });
    }
    for (l, g) in leaves.iter().zip(grads) {
        if l.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "fd_check",
                left: l.shape(),
                right: g.shape(),
            });
        }
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidConfig {
            name: "fd step",
            value: eps,
        });
    }

    let mut work: Vec<Tensor5<f64>> = leaves.to_vec();
    let mut outcome = FdOutcome {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for li in 0..leaves.len() {
        for ei in 0..leaves[li].len() {
            let orig = work[li].data()[ei];
            work[li].data_mut()[ei] = orig + eps;
            let up = eval(&work)?;
            work[li].data_mut()[ei] = orig - eps;
            let down = eval(&work)?;
            work[li].data_mut()[ei] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads[li].data()[ei];
            let err = rel_err(analytic, numeric);
            outcome.checked += 1;
            if err > outcome.max_rel_err {
                outcome.max_rel_err = err;
                outcome.worst = Some(FdWorst {
                    leaf: li,
                    element: ei,
                    analytic,
                    numeric,
                });
            }
        }
    }
    Ok(outcome)
}
