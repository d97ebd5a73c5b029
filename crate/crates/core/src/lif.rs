//! Multi-step leaky integrate-and-fire neurons.
//!
//! Dynamics per element, stepping over the leading time axis:
//!
//! ```text
//! H[t] = V[t-1] + (1/tau) * (X[t] - (V[t-1] - V_reset))   charge
//! S[t] = step(H[t] - V_th)                                fire (1 on the threshold)
//! V[t] = H[t] * (1 - S[t]) + V_reset * S[t]               hard reset
//! ```
//!
//! The backward pass substitutes a surrogate for the step derivative. By
//! default each time step is differentiated independently (the recurrent
//! membrane path is detached), giving the single-factor form
//! `dX[t] = dS[t] * Theta'(H[t] - V_th) / tau`; full backpropagation through
//! time is available behind [`ResetGrad::FullBptt`].

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::surrogate::{heaviside, SpikeMode, SurrogateConfig};
use crate::tensor::{real, Scalar, Shape5, Tensor5};

/// Membrane constants shared by every element of a layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LifParams {
    /// Membrane time constant; `1/tau` scales the input current.
    pub tau: f64,
    pub v_threshold: f64,
    pub v_reset: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            tau: 2.0,
            v_threshold: 1.0,
            v_reset: 0.0,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 1.0) || !self.tau.is_finite() {
            return Err(Error::InvalidConfig {
                name: "lif tau",
                value: self.tau,
            });
        }
        if !(self.v_threshold > self.v_reset) {
            return Err(Error::InvalidConfig {
                name: "lif threshold above reset",
                value: self.v_threshold - self.v_reset,
            });
        }
        Ok(())
    }
}

/// How the backward pass treats the recurrent membrane path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ResetGrad {
    /// Detach `V[t-1]`: each step contributes the single-factor gradient.
    #[default]
    Detach,
    /// Chain through the membrane including the reset product rule.
    FullBptt,
}

/// Which pre-activation gap feeds the surrogate derivative.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SurrogateArg {
    /// `H[t] - V_th`: distance to the firing threshold.
    #[default]
    ThresholdGap,
    /// `H[t] - V[t]`: distance to the post-reset potential, so silent steps
    /// sit exactly on the surrogate peak. Kept for side-by-side comparison.
    PostResetGap,
}

/// Everything the neuron layer needs for a forward/backward pair.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LifConfig {
    pub params: LifParams,
    pub surrogate: SurrogateConfig,
    pub mode: SpikeMode,
    pub reset_grad: ResetGrad,
    pub surrogate_arg: SurrogateArg,
}

/// Saved forward state: pre-activation, spikes and post-reset potentials.
#[derive(Clone, Debug)]
pub struct LifTrace<T> {
    pub h: Tensor5<T>,
    pub s: Tensor5<T>,
    pub v: Tensor5<T>,
    pub config: LifConfig,
}

/// One membrane update per element of `[T,B,C,H,W]`.
pub fn lif_update_count(shape: Shape5) -> u64 {
    shape.len() as u64
}

const CHUNK: usize = 1 << 12;

/// Run the membrane recurrence over the time axis. Returns the spike train
/// and the trace needed by [`lif_backward`].
pub fn lif_forward<T: Scalar>(
    input: &Tensor5<T>,
    config: &LifConfig,
    exec: Exec,
) -> Result<(Tensor5<T>, LifTrace<T>)> {
    lif_forward_from(input, config, None, exec)
}

/// [`lif_forward`] starting from an explicit initial membrane potential
/// (length `B*C*H*W`) instead of `V_reset`.
pub fn lif_forward_from<T: Scalar>(
    input: &Tensor5<T>,
    config: &LifConfig,
    v_init: Option<&[T]>,
    exec: Exec,
) -> Result<(Tensor5<T>, LifTrace<T>)> {
    config.params.validate()?;
    let shape = input.shape();
    let step = shape.step();
    let inv_tau = real::<T>(1.0 / config.params.tau);
    let v_th = real::<T>(config.params.v_threshold);
    let v_reset = real::<T>(config.params.v_reset);
    let mode = config.mode;
    let surrogate = config.surrogate;

    let mut v_prev = match v_init {
        Some(v0) => {
            if v0.len() != step {
                return Err(Error::DataLength {
                    expected: step,
                    got: v0.len(),
                });
            }
            v0.to_vec()
        }
        None => vec![v_reset; step],
    };

    let mut h = Tensor5::zeros(shape);
    let mut s = Tensor5::zeros(shape);
    let mut v = Tensor5::zeros(shape);

    for t in 0..shape.t {
        let run = |(x_c, h_c, s_c, v_c, vp_c): (
            &[T],
            &mut [T],
            &mut [T],
            &mut [T],
            &mut [T],
        )| {
            for i in 0..x_c.len() {
                let hv = vp_c[i] + inv_tau * (x_c[i] - (vp_c[i] - v_reset));
                let gap = hv - v_th;
                let sv = match mode {
                    SpikeMode::Hard => heaviside(gap),
                    SpikeMode::Soft => surrogate.smooth(gap),
                };
                let vv = hv * (T::ONE - sv) + v_reset * sv;
                h_c[i] = hv;
                s_c[i] = sv;
                v_c[i] = vv;
                vp_c[i] = vv;
            }
        };
        let tasks: Vec<_> = input
            .step(t)
            .chunks(CHUNK)
            .zip(h.step_mut(t).chunks_mut(CHUNK))
            .zip(s.step_mut(t).chunks_mut(CHUNK))
            .zip(v.step_mut(t).chunks_mut(CHUNK))
            .zip(v_prev.chunks_mut(CHUNK))
            .map(|((((x, hc), sc), vc), vp)| (x, hc, sc, vc, vp))
            .collect();
        match exec {
            #[cfg(feature = "parallel")]
            Exec::Parallel => tasks.into_par_iter().for_each(run),
            _ => tasks.into_iter().for_each(run),
        }
    }

    let spikes = s.clone();
    Ok((
        spikes,
        LifTrace {
            h,
            s,
            v,
            config: *config,
        },
    ))
}

/// Gradient of the spike train with respect to the input current.
///
/// Hard mode applies the configured surrogate and detach policy. Soft mode
/// always differentiates the smooth forward exactly (full chain through the
/// membrane, sigmoid argument `H - V_th`), so finite differences agree with
/// it regardless of the configured policy.
pub fn lif_backward<T: Scalar>(
    grad_s: &Tensor5<T>,
    trace: &LifTrace<T>,
    exec: Exec,
) -> Result<Tensor5<T>> {
    let shape = trace.h.shape();
    if grad_s.shape() != shape {
        return Err(Error::ShapeMismatch {
            op: "lif_backward",
            left: grad_s.shape(),
            right: shape,
        });
    }
    let config = &trace.config;
    let soft = config.mode == SpikeMode::Soft;
    let inv_tau = real::<T>(1.0 / config.params.tau);
    let v_th = real::<T>(config.params.v_threshold);
    let v_reset = real::<T>(config.params.v_reset);
    let surrogate = config.surrogate;
    let arg = if soft {
        SurrogateArg::ThresholdGap
    } else {
        config.surrogate_arg
    };
    let chain = soft || config.reset_grad == ResetGrad::FullBptt;

    let mut grad_x = Tensor5::zeros(shape);

    if !chain {
        // Single-factor form: dX[t] = dS[t] * Theta'(gap[t]) / tau, no
        // dependence across time steps.
        let run = |(gx_c, gs_c, h_c, v_c): (&mut [T], &[T], &[T], &[T])| {
            for i in 0..gx_c.len() {
                let a = match arg {
                    SurrogateArg::ThresholdGap => h_c[i] - v_th,
                    SurrogateArg::PostResetGap => h_c[i] - v_c[i],
                };
                gx_c[i] = gs_c[i] * surrogate.derivative(a) * inv_tau;
            }
        };
        let tasks: Vec<_> = grad_x
            .data_mut()
            .chunks_mut(CHUNK)
            .zip(grad_s.data().chunks(CHUNK))
            .zip(trace.h.data().chunks(CHUNK))
            .zip(trace.v.data().chunks(CHUNK))
            .map(|(((gx, gs), h), v)| (gx, gs, h, v))
            .collect();
        match exec {
            #[cfg(feature = "parallel")]
            Exec::Parallel => tasks.into_par_iter().for_each(run),
            _ => tasks.into_iter().for_each(run),
        }
        return Ok(grad_x);
    }

    // Full chain: walk time in reverse carrying dL/dV[t] per element.
    //   dL/dS_tot = dS[t] + dV[t] * (V_reset - H[t])
    //   dL/dH[t]  = dL/dS_tot * dS/dH + dV[t] * (1 - S[t])
    //   dX[t]     = dL/dH[t] / tau
    //   dV[t-1]   = dL/dH[t] * (1 - 1/tau)
    let step = shape.step();
    let mut gv = vec![T::ZERO; step];
    for t in (0..shape.t).rev() {
        let run = |(gx_c, gv_c, gs_c, h_c, s_c, v_c): (
            &mut [T],
            &mut [T],
            &[T],
            &[T],
            &[T],
            &[T],
        )| {
            for i in 0..gx_c.len() {
                let a = match arg {
                    SurrogateArg::ThresholdGap => h_c[i] - v_th,
                    SurrogateArg::PostResetGap => h_c[i] - v_c[i],
                };
                let ds_dh = surrogate.derivative(a);
                let gs_tot = gs_c[i] + gv_c[i] * (v_reset - h_c[i]);
                let gh = gs_tot * ds_dh + gv_c[i] * (T::ONE - s_c[i]);
                gx_c[i] = gh * inv_tau;
                gv_c[i] = gh * (T::ONE - inv_tau);
            }
        };
        let tasks: Vec<_> = grad_x
            .step_mut(t)
            .chunks_mut(CHUNK)
            .zip(gv.chunks_mut(CHUNK))
            .zip(grad_s.step(t).chunks(CHUNK))
            .zip(trace.h.step(t).chunks(CHUNK))
            .zip(trace.s.step(t).chunks(CHUNK))
            .zip(trace.v.step(t).chunks(CHUNK))
            .map(|(((((gx, gvc), gs), h), s), v)| (gx, gvc, gs, h, s, v))
            .collect();
        match exec {
            #[cfg(feature = "parallel")]
            Exec::Parallel => tasks.into_par_iter().for_each(run),
            _ => tasks.into_iter().for_each(run),
        }
    }
    Ok(grad_x)
}
