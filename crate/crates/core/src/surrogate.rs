//! Surrogate gradients for the non-differentiable spike threshold.
//!
//! The forward step function `Θ(v)` has zero derivative almost everywhere, so
//! training replaces `Θ'` with the derivative of a smooth companion. The
//! sigmoid family uses `σ(αv)` whose derivative `α·σ(αv)(1-σ(αv))` peaks at
//! `α/4` on the threshold and decays symmetrically on both sides.

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Shape of the smooth companion function.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SurrogateKind {
    Sigmoid,
}

/// Surrogate family plus sharpness.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogateConfig {
    pub kind: SurrogateKind,
    /// Sharpness; larger values concentrate gradient near the threshold.
    pub alpha: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            kind: SurrogateKind::Sigmoid,
            alpha: 4.0,
        }
    }
}

impl SurrogateConfig {
    pub fn sigmoid(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidConfig {
                name: "surrogate alpha",
                value: alpha,
            });
        }
        Ok(Self {
            kind: SurrogateKind::Sigmoid,
            alpha,
        })
    }

    /// Smooth stand-in for the step function, used by soft spike mode.
    pub fn smooth<T: Scalar>(&self, v: T) -> T {
        match self.kind {
            SurrogateKind::Sigmoid => sigmoid(T::from_f64(self.alpha) * v),
        }
    }

    /// `Θ'(v)` replacement: derivative of [`Self::smooth`].
    pub fn derivative<T: Scalar>(&self, v: T) -> T {
        match self.kind {
            SurrogateKind::Sigmoid => {
                let a = T::from_f64(self.alpha);
                let s = sigmoid(a * v);
                a * s * (T::ONE - s)
            }
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v.to_f64() >= 0.0 {
        T::ONE / (T::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::ONE + e)
    }
}

/// Hard threshold `Θ(v)`: fires at exactly zero, mirroring the convention
/// that a membrane sitting exactly on the threshold emits a spike.
pub fn heaviside<T: Scalar>(v: T) -> T {
    if v.to_f64() >= 0.0 {
        T::ONE
    } else {
        T::ZERO
    }
}

/// Hard step vs. smooth companion for the forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SpikeMode {
    /// Binary spikes; backward substitutes the surrogate derivative.
    #[default]
    Hard,
    /// Smooth spikes `σ(α·v)`; forward and backward agree exactly, which makes
    /// finite-difference validation of the full graph well-posed.
    Soft,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_peaks_at_alpha_over_four() {
        let cfg = SurrogateConfig::default();
        assert!((cfg.derivative(0.0f64) - 1.0).abs() < 1e-12);
        let sharp = SurrogateConfig::sigmoid(8.0).unwrap();
        assert!((sharp.derivative(0.0f64) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn derivative_matches_hand_value() {
        // 4·σ(2)·(1-σ(2)) with σ(2) = 1/(1+e^-2).
        let cfg = SurrogateConfig::default();
        let s = 1.0 / (1.0 + (-2.0f64).exp());
        let want = 4.0 * s * (1.0 - s);
        assert!((cfg.derivative(0.5f64) - want).abs() < 1e-12);
        assert!((want - 0.419974).abs() < 1e-6);
    }

    #[test]
    fn derivative_is_symmetric_and_decaying() {
        let cfg = SurrogateConfig::default();
        for v in [0.1f64, 0.5, 1.0, 3.0] {
            assert!((cfg.derivative(v) - cfg.derivative(-v)).abs() < 1e-12);
            assert!(cfg.derivative(v) < cfg.derivative(v * 0.5));
        }
    }

    #[test]
    fn smooth_matches_fd_of_itself() {
        let cfg = SurrogateConfig::default();
        let eps = 1e-6f64;
        for v in [-1.0f64, -0.2, 0.0, 0.3, 2.0] {
            let fd = (cfg.smooth(v + eps) - cfg.smooth(v - eps)) / (2.0 * eps);
            assert!((fd - cfg.derivative(v)).abs() < 1e-8, "v={v}");
        }
    }

    #[test]
    fn heaviside_fires_on_the_threshold() {
        assert_eq!(heaviside(0.0f64), 1.0);
        assert_eq!(heaviside(-1e-12f64), 0.0);
        assert_eq!(heaviside(2.0f32), 1.0);
    }

    #[test]
    fn stable_sigmoid_extremes() {
        assert!(sigmoid(500.0f64) <= 1.0);
        assert!(sigmoid(-500.0f64) >= 0.0);
        assert!((sigmoid(500.0f64) - 1.0).abs() < 1e-12);
        assert!(sigmoid(-500.0f64) < 1e-12);
    }

    #[test]
    fn alpha_must_be_positive_finite() {
        assert!(SurrogateConfig::sigmoid(0.0).is_err());
        assert!(SurrogateConfig::sigmoid(-1.0).is_err());
        assert!(SurrogateConfig::sigmoid(f64::NAN).is_err());
    }
}
