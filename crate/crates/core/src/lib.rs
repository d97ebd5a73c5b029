//! A small spiking-neural-network training framework built around one
//! question: where does max-pool backpropagation send gradient when the pool
//! sits before versus after the spiking nonlinearity?
//!
//! The crate provides dense `[T,B,C,H,W]` tensors, numeric kernels
//! (convolution, batch norm, pooling), multi-step leaky integrate-and-fire
//! neurons with surrogate gradients, a tape-based reverse-mode autodiff, the
//! four downsampling block orderings, and a routing probe that checks the
//! autodiff behavior against a brute-force oracle.
//!
//! Kernels run data-parallel over batch/channel slices via rayon (the
//! `parallel` feature, on by default) or sequentially; both paths produce
//! bitwise-identical results.

pub mod autodiff;
pub mod downsample;
pub mod error;
pub mod exec;
pub mod fdcheck;
pub mod gradprobe;
pub mod kernels;
pub mod layers;
pub mod lif;
pub mod surrogate;
pub mod tensor;

pub use autodiff::{Gradients, NodeId, Tape};
pub use downsample::{BlockNodes, DownsampleBlock, Variant};
pub use error::{Error, Result};
pub use exec::Exec;
pub use kernels::batchnorm::{BnMode, BnStats, RunningStats};
pub use layers::{ConvBn, ConvBnNodes, Linear, LinearNodes};
pub use lif::{lif_update_count, LifConfig, LifParams, LifTrace, ResetGrad, SurrogateArg};
pub use surrogate::{heaviside, sigmoid, SpikeMode, SurrogateConfig, SurrogateKind};
pub use tensor::{real, PoolSpec, Scalar, Shape5, Tensor5};
