//! The four downsampling block orderings and their LIF-update accounting.
//!
//! All variants share the same parameter set (one ConvBN stage); they differ
//! only in where the spatial reduction happens relative to the spiking
//! nonlinearity:
//!
//! | variant      | pipeline                     |
//! |--------------|------------------------------|
//! | `baseline`   | ConvBN -> LIF -> MaxPool     |
//! | `cml`        | ConvBN -> MaxPool -> LIF     |
//! | `avgpool`    | ConvBN -> AvgPool -> LIF     |
//! | `strideconv` | ConvBN(stride=s) -> LIF      |
//!
//! Placing the pool before the neuron shrinks the membrane update count by
//! `s^2` and lets max-pool backward route gradient by the real-valued
//! pre-activation map instead of the binary spike map.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::kernels::batchnorm::BnMode;
use crate::kernels::conv::conv_out_shape;
use crate::layers::{ConvBn, ConvBnNodes};
use crate::lif::{lif_update_count, LifConfig};
use crate::tensor::{PoolSpec, Scalar, Shape5};

/// Stage ordering of a downsampling block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Baseline,
    Cml,
    AvgPool,
    StrideConv,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::Cml,
        Variant::AvgPool,
        Variant::StrideConv,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Cml => "cml",
            Variant::AvgPool => "avgpool",
            Variant::StrideConv => "strideconv",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.label() == s)
    }

    /// Only max-pool orderings have a routing story to analyze.
    pub fn uses_maxpool(self) -> bool {
        matches!(self, Variant::Baseline | Variant::Cml)
    }

    /// Whether the LIF stage runs at pooled (reduced) resolution.
    pub fn lif_after_reduction(self) -> bool {
        !matches!(self, Variant::Baseline)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One stride-`s` spatial-reduction block.
#[derive(Clone, Debug)]
pub struct DownsampleBlock<T: Scalar> {
    pub variant: Variant,
    pub conv: ConvBn<T>,
    pub pool: PoolSpec,
    pub lif: LifConfig,
}

/// Tape ids exposed by one block forward, for probing and optimization.
#[derive(Clone, Copy, Debug)]
pub struct BlockNodes {
    pub params: ConvBnNodes,
    /// Pre-activation feature map `x` (ConvBN output).
    pub x: NodeId,
    /// Output of the LIF stage wherever it sits in the pipeline.
    pub spikes: NodeId,
    /// Block output `y`.
    pub out: NodeId,
    /// Membrane updates actually performed by this forward pass.
    pub lif_updates: u64,
}

impl<T: Scalar> DownsampleBlock<T> {
    /// Random-kernel block; `k` is the conv kernel size, `stride` the spatial
    /// reduction factor. Conv padding `k/2` keeps pre-pool dims unchanged.
    pub fn init<R: Rng>(
        variant: Variant,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        lif: LifConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let pool = PoolSpec::square(stride)?;
        let conv_stride = if variant == Variant::StrideConv {
            stride
        } else {
            1
        };
        let conv = ConvBn::init(cin, cout, k, conv_stride, k / 2, rng);
        Ok(Self {
            variant,
            conv,
            pool,
            lif,
        })
    }

    /// Same parameters, different stage ordering.
    pub fn with_variant(&self, variant: Variant) -> Self {
        let mut block = self.clone();
        block.variant = variant;
        block.conv.stride = if variant == Variant::StrideConv {
            self.pool.stride
        } else {
            1
        };
        block
    }

    /// Spatial dims must divide by the reduction stride; no implicit padding.
    pub fn check_input(&self, shape: Shape5) -> Result<()> {
        let s = self.pool.stride;
        for extent in [shape.h, shape.w] {
            if extent % s != 0 {
                return Err(Error::Indivisible { extent, stride: s });
            }
        }
        Ok(())
    }

    /// Record the block on the tape. `x`, the spike map and the output are
    /// exposed for routing analysis.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        input: NodeId,
        mode: BnMode,
    ) -> Result<BlockNodes> {
        self.check_input(tape.shape(input))?;
        let params = self.conv.forward(tape, input, mode)?;
        let x = params.out;
        let (spikes, out, lif_in_shape) = match self.variant {
            Variant::Baseline => {
                let h = tape.lif(x, &self.lif)?;
                let y = tape.maxpool(h, self.pool)?;
                (h, y, tape.shape(x))
            }
            Variant::Cml => {
                let p = tape.maxpool(x, self.pool)?;
                let y = tape.lif(p, &self.lif)?;
                (y, y, tape.shape(p))
            }
            Variant::AvgPool => {
                let p = tape.avgpool(x, self.pool)?;
                let y = tape.lif(p, &self.lif)?;
                (y, y, tape.shape(p))
            }
            Variant::StrideConv => {
                let y = tape.lif(x, &self.lif)?;
                (y, y, tape.shape(x))
            }
        };
        Ok(BlockNodes {
            params,
            x,
            spikes,
            out,
            lif_updates: lif_update_count(lif_in_shape),
        })
    }

    /// Closed-form membrane update count for an input of the given shape:
    /// `T*B*Cout*H*W` when the neuron runs at full resolution,
    /// `T*B*Cout*(H/s)*(W/s)` when it runs after the reduction.
    pub fn count_lif_updates(&self, input: Shape5) -> Result<u64> {
        self.check_input(input)?;
        let conv_out = conv_out_shape(
            input,
            self.conv.weight.shape(),
            self.conv.stride,
            self.conv.pad,
        )?;
        let lif_shape = match self.variant {
            Variant::Baseline | Variant::StrideConv => conv_out,
            Variant::Cml | Variant::AvgPool => {
                let (h, w) = self.pool.out_dims(conv_out.h, conv_out.w)?;
                conv_out.with_spatial(h, w)
            }
        };
        Ok(lif_update_count(lif_shape))
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count()
    }
}
