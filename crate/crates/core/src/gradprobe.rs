//! Gradient-routing analysis for max-pool downsampling blocks.
//!
//! Max-pool backward is one-hot per window, so for each pooling window
//! exactly one position of the pre-activation feature map `x` receives
//! gradient. Which position depends on the stage ordering:
//!
//! - baseline (LIF before pool): the pool sees the binary spike map `h`, so
//!   the "max" is a tie among spikes and the gradient lands on the FIRST
//!   spike in row-major scan order — position `(0,0)` when nothing spiked —
//!   regardless of where `x` is actually largest;
//! - CML (pool before LIF): the pool sees `x` itself and the gradient lands
//!   on the true argmax of `x`.
//!
//! Every analysis here is checked against [`oracle_routing`], a brute-force
//! per-window evaluation of the membrane recurrence and the routing rules
//! that never touches the autodiff tape.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::downsample::{DownsampleBlock, Variant};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kernels::batchnorm::BnMode;
use crate::lif::{LifConfig, ResetGrad, SurrogateArg};
use crate::surrogate::SpikeMode;
use crate::tensor::{PoolSpec, Scalar, Shape5, Tensor5};

/// Routing observed and expected for one pooling window at one time step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WindowRecord {
    pub t: usize,
    pub b: usize,
    pub c: usize,
    pub oy: usize,
    pub ox: usize,
    /// Window-relative position of the row-major-first maximum of `x`.
    pub x_argmax: [usize; 2],
    /// First spiking position of `h` (baseline only; `None` when silent).
    pub first_spike: Option<[usize; 2]>,
    /// Positions with nonzero d(loss)/dx inside the window.
    pub grad_nonzero: Vec<[usize; 2]>,
    /// Gradient value at the routed position.
    pub grad_magnitude: f64,
    /// Expected position from the closed-form oracle.
    pub oracle_position: [usize; 2],
    pub oracle_magnitude: f64,
    /// Surrogate derivative factor at the routed position.
    pub surrogate_factor: f64,
    pub oracle_agrees: bool,
    pub routes_to_x_argmax: bool,
}

/// Aggregate over all windows of one analysis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoutingSummary {
    pub variant: String,
    pub windows: usize,
    /// Fraction of windows whose routed position matches the oracle.
    pub oracle_agreement: f64,
    /// Fraction of windows routed to the argmax of `x`.
    pub argmax_agreement: f64,
    /// `1 - argmax_agreement`: how often routing misses the strongest feature.
    pub mismatch_rate: f64,
    /// Windows with zero or more than one nonzero-gradient position.
    pub one_hot_violations: usize,
    /// Worst relative error of the routed magnitude vs. the oracle.
    pub max_magnitude_rel_err: f64,
    /// Fraction of spike-map elements equal to one.
    pub spike_rate: f64,
}

/// Per-window records plus the aggregate summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoutingReport {
    pub summary: RoutingSummary,
    pub records: Vec<WindowRecord>,
}

impl RoutingReport {
    /// One JSON object per window, then the summary object as the last line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for rec in &self.records {
            let line = serde_json::to_string(rec)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            writeln!(w, "{line}")?;
        }
        let line = serde_json::to_string(&self.summary)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        writeln!(w, "{line}")
    }
}

/// Expected routing for one window at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleStep {
    pub position: (usize, usize),
    pub magnitude: f64,
    pub surrogate_factor: f64,
    pub first_spike: Option<(usize, usize)>,
    pub x_argmax: (usize, usize),
}

fn routing_applicable(variant: Variant) -> Result<()> {
    if variant.uses_maxpool() {
        Ok(())
    } else {
        Err(Error::RoutingNotApplicable {
            variant: variant.label(),
        })
    }
}

/// Routing is defined for the single-step gradient rule over hard spikes;
/// soft mode and full BPTT spread gradient across time steps.
fn check_policy(lif: &LifConfig) -> Result<()> {
    if lif.mode != SpikeMode::Hard {
        return Err(Error::RoutingNotApplicable {
            variant: "soft spike mode",
        });
    }
    if lif.reset_grad != ResetGrad::Detach {
        return Err(Error::RoutingNotApplicable {
            variant: "full-bptt gradient",
        });
    }
    Ok(())
}

fn first_max<T: Scalar>(plane: &[T], h: usize, w: usize) -> (usize, usize) {
    let mut best = plane[0];
    let mut pos = (0, 0);
    for y in 0..h {
        for x in 0..w {
            let v = plane[y * w + x];
            if v > best {
                best = v;
                pos = (y, x);
            }
        }
    }
    pos
}

/// Brute-force expected routing for one window's time series, shaped
/// `[T, 1, 1, k, k]`, with one seed gradient per time step. Evaluates the
/// membrane recurrence and the routing rules directly — no tape involved.
pub fn oracle_routing<T: Scalar>(
    variant: Variant,
    window: &Tensor5<T>,
    lif: &LifConfig,
    seed: &[T],
) -> Result<Vec<OracleStep>> {
    routing_applicable(variant)?;
    check_policy(lif)?;
    lif.params.validate()?;
    let shape = window.shape();
    if shape.b != 1 || shape.c != 1 {
        return Err(Error::ShapeMismatch {
            op: "oracle_routing window",
            left: shape,
            right: Shape5::new(shape.t, 1, 1, shape.h, shape.w),
        });
    }
    if seed.len() != shape.t {
        return Err(Error::DataLength {
            expected: shape.t,
            got: seed.len(),
        });
    }
    let (k_h, k_w) = (shape.h, shape.w);
    let n = k_h * k_w;
    let inv_tau = 1.0 / lif.params.tau;
    let v_th = lif.params.v_threshold;
    let v_reset = lif.params.v_reset;
    let factor_at = |h: f64, v_post: f64| {
        let a = match lif.surrogate_arg {
            SurrogateArg::ThresholdGap => h - v_th,
            SurrogateArg::PostResetGap => h - v_post,
        };
        lif.surrogate.derivative(a)
    };

    let mut steps = Vec::with_capacity(shape.t);
    match variant {
        Variant::Baseline => {
            // LIF at every window position, then pool the binary map.
            let mut v = vec![v_reset; n];
            for t in 0..shape.t {
                let plane = window.step(t);
                let x_argmax = first_max(plane, k_h, k_w);
                let mut h = vec![0.0f64; n];
                let mut spikes = vec![false; n];
                for i in 0..n {
                    let hv = v[i] + inv_tau * (plane[i].to_f64() - (v[i] - v_reset));
                    let fired = hv - v_th >= 0.0;
                    h[i] = hv;
                    spikes[i] = fired;
                    v[i] = if fired { v_reset } else { hv };
                }
                let first_spike = spikes.iter().position(|&s| s).map(|i| (i / k_w, i % k_w));
                // All-silent windows tie at zero; the pool routes to (0,0).
                let position = first_spike.unwrap_or((0, 0));
                let i = position.0 * k_w + position.1;
                let factor = factor_at(h[i], v[i]);
                steps.push(OracleStep {
                    position,
                    magnitude: seed[t].to_f64() * inv_tau * factor,
                    surrogate_factor: factor,
                    first_spike,
                    x_argmax,
                });
            }
        }
        Variant::Cml => {
            // Pool x first, then run one membrane on the pooled series.
            let mut v = v_reset;
            for t in 0..shape.t {
                let plane = window.step(t);
                let x_argmax = first_max(plane, k_h, k_w);
                let pooled = plane[x_argmax.0 * k_w + x_argmax.1].to_f64();
                let hv = v + inv_tau * (pooled - (v - v_reset));
                let fired = hv - v_th >= 0.0;
                let v_post = if fired { v_reset } else { hv };
                v = v_post;
                let factor = factor_at(hv, v_post);
                steps.push(OracleStep {
                    position: x_argmax,
                    magnitude: seed[t].to_f64() * inv_tau * factor,
                    surrogate_factor: factor,
                    first_spike: None,
                    x_argmax,
                });
            }
        }
        _ => unreachable!("routing_applicable rejects dense variants"),
    }
    Ok(steps)
}

fn magnitude_rel_err(a: f64, o: f64) -> f64 {
    (a - o).abs() / a.abs().max(o.abs()).max(1e-30)
}

/// Compare the autodiff gradient at `x` against the oracle, window by window.
fn assemble_report<T: Scalar>(
    variant: Variant,
    x: &Tensor5<T>,
    spikes: &Tensor5<T>,
    gx: &Tensor5<T>,
    seed: &Tensor5<T>,
    spec: PoolSpec,
    lif: &LifConfig,
) -> Result<RoutingReport> {
    let shape = x.shape();
    let k = spec.window;
    let (oh, ow) = spec.out_dims(shape.h, shape.w)?;
    let mut records = Vec::new();
    let mut oracle_hits = 0usize;
    let mut argmax_hits = 0usize;
    let mut violations = 0usize;
    let mut max_mag_err = 0.0f64;

    for b in 0..shape.b {
        for c in 0..shape.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    // Gather this window's full time series for the oracle.
                    let mut series = Tensor5::zeros(Shape5::new(shape.t, 1, 1, k, k));
                    let mut seeds = Vec::with_capacity(shape.t);
                    for t in 0..shape.t {
                        for dy in 0..k {
                            for dx in 0..k {
                                *series.at_mut(t, 0, 0, dy, dx) =
                                    x.at(t, b, c, oy * spec.stride + dy, ox * spec.stride + dx);
                            }
                        }
                        seeds.push(seed.at(t, b, c, oy, ox));
                    }
                    let expected = oracle_routing(variant, &series, lif, &seeds)?;

                    for (t, exp) in expected.iter().enumerate() {
                        let mut nonzero = Vec::new();
                        for dy in 0..k {
                            for dx in 0..k {
                                let g = gx.at(
                                    t,
                                    b,
                                    c,
                                    oy * spec.stride + dy,
                                    ox * spec.stride + dx,
                                );
                                if g != T::ZERO {
                                    nonzero.push([dy, dx]);
                                }
                            }
                        }
                        if nonzero.len() != 1 {
                            violations += 1;
                        }
                        let routed = nonzero.first().copied();
                        let grad_magnitude = routed
                            .map(|p| {
                                gx.at(
                                    t,
                                    b,
                                    c,
                                    oy * spec.stride + p[0],
                                    ox * spec.stride + p[1],
                                )
                                .to_f64()
                            })
                            .unwrap_or(0.0);
                        let oracle_pos = [exp.position.0, exp.position.1];
                        let oracle_agrees = routed == Some(oracle_pos);
                        if oracle_agrees {
                            oracle_hits += 1;
                            max_mag_err = max_mag_err
                                .max(magnitude_rel_err(grad_magnitude, exp.magnitude));
                        }
                        let x_argmax = [exp.x_argmax.0, exp.x_argmax.1];
                        let routes_to_x_argmax = routed == Some(x_argmax);
                        if routes_to_x_argmax {
                            argmax_hits += 1;
                        }
                        records.push(WindowRecord {
                            t,
                            b,
                            c,
                            oy,
                            ox,
                            x_argmax,
                            first_spike: exp.first_spike.map(|p| [p.0, p.1]),
                            grad_nonzero: nonzero,
                            grad_magnitude,
                            oracle_position: oracle_pos,
                            oracle_magnitude: exp.magnitude,
                            surrogate_factor: exp.surrogate_factor,
                            oracle_agrees,
                            routes_to_x_argmax,
                        });
                    }
                }
            }
        }
    }

    let total = records.len().max(1);
    let ones = spikes
        .data()
        .iter()
        .filter(|&&v| v.to_f64() == 1.0)
        .count();
    Ok(RoutingReport {
        summary: RoutingSummary {
            variant: variant.label().to_string(),
            windows: records.len(),
            oracle_agreement: oracle_hits as f64 / total as f64,
            argmax_agreement: argmax_hits as f64 / total as f64,
            mismatch_rate: 1.0 - argmax_hits as f64 / total as f64,
            one_hot_violations: violations,
            max_magnitude_rel_err: max_mag_err,
            spike_rate: ones as f64 / spikes.len().max(1) as f64,
        },
        records,
    })
}

/// Route gradients through `pool∘lif` (baseline) or `lif∘pool` (CML) built
/// directly on a given feature map `x`, and compare against the oracle.
/// `seed` defaults to ones over the block output.
pub fn analyze_routing_from_features<T: Scalar>(
    x: &Tensor5<T>,
    variant: Variant,
    spec: PoolSpec,
    lif: &LifConfig,
    seed: Option<&Tensor5<T>>,
    exec: Exec,
) -> Result<RoutingReport> {
    routing_applicable(variant)?;
    check_policy(lif)?;
    if spec.window != spec.stride {
        return Err(Error::Indivisible {
            extent: spec.window,
            stride: spec.stride,
        });
    }
    let mut tape = Tape::new(exec);
    let xid = tape.leaf(x.clone());
    let (spikes_id, out_id) = match variant {
        Variant::Baseline => {
            let h = tape.lif(xid, lif)?;
            let y = tape.maxpool(h, spec)?;
            (h, y)
        }
        Variant::Cml => {
            let p = tape.maxpool(xid, spec)?;
            let y = tape.lif(p, lif)?;
            (y, y)
        }
        _ => unreachable!("routing_applicable rejects dense variants"),
    };
    let seed_t = match seed {
        Some(s) => s.clone(),
        None => Tensor5::ones(tape.shape(out_id)),
    };
    let grads = tape.backward(out_id, seed_t.clone())?;
    let gx = grads.dense(xid);
    assemble_report(variant, x, tape.value(spikes_id), &gx, &seed_t, spec, lif)
}

/// Full-block analysis: forward the block (eval-mode statistics), backward
/// from its output, and compare the gradient arriving at the ConvBN feature
/// map `x` against the oracle.
pub fn analyze_routing<T: Scalar>(
    block: &DownsampleBlock<T>,
    input: &Tensor5<T>,
    seed: Option<&Tensor5<T>>,
    exec: Exec,
) -> Result<RoutingReport> {
    routing_applicable(block.variant)?;
    check_policy(&block.lif)?;
    if block.pool.window != block.pool.stride {
        return Err(Error::Indivisible {
            extent: block.pool.window,
            stride: block.pool.stride,
        });
    }
    let mut blk = block.clone();
    let mut tape = Tape::new(exec);
    let in_id = tape.leaf(input.clone());
    let nodes = blk.forward(&mut tape, in_id, BnMode::Eval)?;
    let seed_t = match seed {
        Some(s) => s.clone(),
        None => Tensor5::ones(tape.shape(nodes.out)),
    };
    let grads = tape.backward(nodes.out, seed_t.clone())?;
    let gx = grads.dense(nodes.x);
    let x = tape.value(nodes.x).clone();
    let spikes = tape.value(nodes.spikes).clone();
    assemble_report(block.variant, &x, &spikes, &gx, &seed_t, blk.pool, &blk.lif)
}

/// Fraction of windows where baseline routing misses the argmax of `x`.
pub fn mismatch_rate<T: Scalar>(
    x: &Tensor5<T>,
    spec: PoolSpec,
    lif: &LifConfig,
    exec: Exec,
) -> Result<f64> {
    let report = analyze_routing_from_features(x, Variant::Baseline, spec, lif, None, exec)?;
    Ok(report.summary.mismatch_rate)
}
