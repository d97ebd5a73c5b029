//! Parameter updates. Adam with the usual constants is the desk default;
//! SGD with momentum is kept for recipe parity experiments.

use std::fmt;

use serde::{Deserialize, Serialize};
use spikepool_core::{real, Scalar, Tensor5};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimKind {
    Adam,
    Sgd,
}

impl OptimKind {
    pub fn label(self) -> &'static str {
        match self {
            OptimKind::Adam => "adam",
            OptimKind::Sgd => "sgd",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "adam" => Some(OptimKind::Adam),
            "sgd" => Some(OptimKind::Sgd),
            _ => None,
        }
    }
}

impl fmt::Display for OptimKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// First/second-moment state lives in the run's own precision.
pub struct Optimizer<T: Scalar> {
    kind: OptimKind,
    lr: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimKind, lr: f64, param_sizes: &[usize]) -> Self {
        let m = param_sizes.iter().map(|&n| vec![T::ZERO; n]).collect();
        let v = match kind {
            OptimKind::Adam => param_sizes.iter().map(|&n| vec![T::ZERO; n]).collect(),
            OptimKind::Sgd => Vec::new(),
        };
        Optimizer {
            kind,
            lr,
            step: 0,
            m,
            v,
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor5<T>], grads: &[Tensor5<T>]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(params.len(), grads.len(), "gradient count mismatch");
        self.step += 1;
        match self.kind {
            OptimKind::Adam => {
                let b1 = real::<T>(BETA1);
                let b2 = real::<T>(BETA2);
                let one = T::ONE;
                let eps = real::<T>(ADAM_EPS);
                // Bias corrections folded into a single step size.
                let bc1 = 1.0 - BETA1.powi(self.step as i32);
                let bc2 = 1.0 - BETA2.powi(self.step as i32);
                let alpha = real::<T>(self.lr * bc2.sqrt() / bc1);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.m.iter_mut().zip(&mut self.v))
                {
                    debug_assert_eq!(p.len(), g.len());
                    for ((w, &gi), (mi, vi)) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut().zip(v.iter_mut()))
                    {
                        *mi = b1 * *mi + (one - b1) * gi;
                        *vi = b2 * *vi + (one - b2) * gi * gi;
                        *w = *w - alpha * *mi / (vi.sqrt() + eps);
                    }
                }
            }
            OptimKind::Sgd => {
                let mu = real::<T>(MOMENTUM);
                let lr = real::<T>(self.lr);
                for ((p, g), m) in params.iter_mut().zip(grads).zip(self.m.iter_mut()) {
                    debug_assert_eq!(p.len(), g.len());
                    for ((w, &gi), mi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()) {
                        *mi = mu * *mi + gi;
                        *w = *w - lr * *mi;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use spikepool_core::Shape5;

    fn quadratic_descends(kind: OptimKind, lr: f64, steps: usize) -> f64 {
        // Minimize ||w - 3||² from w = 0; the gradient is 2(w − 3).
        let mut w = Tensor5::<f64>::zeros(Shape5::new(1, 1, 1, 1, 2));
        let mut opt = Optimizer::new(kind, lr, &[2]);
        for _ in 0..steps {
            let g = w.map(|v| 2.0 * (v - 3.0));
            opt.step(&mut [&mut w], &[g]);
        }
        w.data().iter().map(|&v| (v - 3.0).abs()).sum::<f64>() / 2.0
    }

    #[test]
    fn adam_converges_on_a_quadratic() {
        assert!(quadratic_descends(OptimKind::Adam, 0.1, 400) < 1e-3);
    }

    #[test]
    fn sgd_momentum_converges_on_a_quadratic() {
        assert!(quadratic_descends(OptimKind::Sgd, 0.05, 500) < 1e-6);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // With bias correction, |Δw| of step one is exactly lr for any
        // nonzero gradient (up to the eps guard).
        let mut w = Tensor5::<f64>::zeros(Shape5::new(1, 1, 1, 1, 1));
        let g = Tensor5::<f64>::filled(Shape5::new(1, 1, 1, 1, 1), 7.5);
        let mut opt = Optimizer::new(OptimKind::Adam, 1e-3, &[1]);
        opt.step(&mut [&mut w], &[g]);
        assert!((w.data()[0].abs() - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn labels_round_trip() {
        for kind in [OptimKind::Adam, OptimKind::Sgd] {
            assert_eq!(OptimKind::from_label(kind.label()), Some(kind));
        }
        assert_eq!(OptimKind::from_label("rmsprop"), None);
    }
}
