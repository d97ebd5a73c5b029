//! The desk-scale classifier: two downsampling cells, a global spatial
//! average, and a linear readout over time-averaged logits. Everything except
//! the cell ordering is shared across architecture variants, so paired-seed
//! runs differ only in where the reduction sits relative to the neuron.

use rand::Rng;
use spikepool_core::{
    BnMode, DownsampleBlock, LifConfig, Linear, NodeId, Result, Scalar, Shape5, Tape, Tensor5,
    Variant,
};

pub struct SpikeNet<T: Scalar> {
    pub block1: DownsampleBlock<T>,
    pub block2: DownsampleBlock<T>,
    pub head: Linear<T>,
}

/// Tape ids from one forward pass: parameter leaves in [`SpikeNet::params_mut`]
/// order, the `[1, B, K, 1, 1]` logits, and the LIF updates spent.
pub struct NetNodes {
    pub params: Vec<NodeId>,
    pub logits: NodeId,
    pub lif_updates: u64,
}

impl<T: Scalar> SpikeNet<T> {
    /// `channels` is `[input, cell1, cell2]`; both cells share `k` and the
    /// reduction stride.
    pub fn init<R: Rng>(
        variant: Variant,
        channels: [usize; 3],
        k: usize,
        stride: usize,
        classes: usize,
        lif: LifConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let block1 = DownsampleBlock::init(variant, channels[0], channels[1], k, stride, lif, rng)?;
        let block2 = DownsampleBlock::init(variant, channels[1], channels[2], k, stride, lif, rng)?;
        let head = Linear::init(channels[2], classes, rng);
        Ok(SpikeNet {
            block1,
            block2,
            head,
        })
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, input: NodeId, mode: BnMode) -> Result<NetNodes> {
        let n1 = self.block1.forward(tape, input, mode)?;
        let n2 = self.block2.forward(tape, n1.out, mode)?;
        let pooled = tape.spatial_mean(n2.out);
        let readout = self.head.forward(tape, pooled)?;
        let logits = tape.mean_time(readout.out);

        let mut params = Vec::with_capacity(8);
        params.extend(n1.params.param_ids());
        params.extend(n2.params.param_ids());
        params.extend(readout.param_ids());
        Ok(NetNodes {
            params,
            logits,
            lif_updates: n1.lif_updates + n2.lif_updates,
        })
    }

    /// Parameter tensors in the same order as [`NetNodes::params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor5<T>> {
        let mut out = Vec::with_capacity(8);
        out.extend(self.block1.conv.params_mut());
        out.extend(self.block2.conv.params_mut());
        out.extend(self.head.params_mut());
        out
    }

    pub fn param_sizes(&mut self) -> Vec<usize> {
        self.params_mut().iter().map(|p| p.len()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.block1.param_count()
            + self.block2.param_count()
            + self.head.weight.len()
            + self.head.bias.len()
    }

    /// Membrane updates one sample costs in a forward pass, from the closed
    /// forms of both cells (no tensors touched).
    pub fn lif_updates_per_sample(&self, input: Shape5) -> Result<u64> {
        let u1 = self.block1.count_lif_updates(input)?;
        let stride = self.block1.pool.stride;
        let mid = Shape5::new(
            input.t,
            input.b,
            self.block1.conv.out_channels(),
            input.h / stride,
            input.w / stride,
        );
        let u2 = self.block2.count_lif_updates(mid)?;
        Ok(u1 + u2)
    }
}
