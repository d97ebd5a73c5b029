//! Dense numeric kernels: convolution, pooling, batch normalization.

pub mod batchnorm;
pub mod conv;
pub mod pool;

pub use batchnorm::{batchnorm_backward, batchnorm_forward, BnMode, BnStats, RunningStats};
pub use conv::{conv2d, conv2d_grad_input, conv2d_grad_weight, conv_out_shape};
pub use pool::{
    avgpool_backward, avgpool_forward, maxpool_backward, maxpool_forward, ArgmaxMap,
};
