//! Parameterized layers: the ConvBN compound and the linear readout.
//!
//! Layers own their parameter tensors and running statistics. Each forward
//! call registers the parameters as fresh leaves on the caller's tape and
//! returns the leaf ids, so an optimizer can pair every parameter tensor with
//! its gradient after `backward`.

use rand::Rng;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::kernels::batchnorm::{BnMode, RunningStats};
use crate::tensor::{real, Scalar, Shape5, Tensor5};

/// Convolution followed by batch normalization, treated as one stage.
#[derive(Clone, Debug)]
pub struct ConvBn<T: Scalar> {
    /// `[1, Cout, Cin, kh, kw]`.
    pub weight: Tensor5<T>,
    /// `[1, 1, Cout, 1, 1]`.
    pub gamma: Tensor5<T>,
    pub beta: Tensor5<T>,
    pub running: RunningStats<T>,
    pub stride: usize,
    pub pad: usize,
    pub eps: T,
    pub momentum: T,
}

/// Tape ids produced by one [`ConvBn::forward`] call.
#[derive(Clone, Copy, Debug)]
pub struct ConvBnNodes {
    pub weight: NodeId,
    pub gamma: NodeId,
    pub beta: NodeId,
    pub out: NodeId,
}

impl ConvBnNodes {
    /// Parameter leaves in the order of [`ConvBn::params_mut`].
    pub fn param_ids(&self) -> [NodeId; 3] {
        [self.weight, self.gamma, self.beta]
    }
}

impl<T: Scalar> ConvBn<T> {
    /// Wrap an explicit kernel; batch norm starts as the identity.
    pub fn new(weight: Tensor5<T>, stride: usize, pad: usize) -> Result<Self> {
        let ws = weight.shape();
        if ws.t != 1 {
            return Err(Error::ShapeMismatch {
                op: "conv weight",
                left: ws,
                right: Shape5::new(1, ws.b, ws.c, ws.h, ws.w),
            });
        }
        let cout = ws.b;
        Ok(Self {
            weight,
            gamma: Tensor5::ones(Shape5::new(1, 1, cout, 1, 1)),
            beta: Tensor5::zeros(Shape5::new(1, 1, cout, 1, 1)),
            running: RunningStats::identity(cout),
            stride,
            pad,
            eps: real(1e-5),
            momentum: real(0.1),
        })
    }

    /// Kernel drawn uniformly from `±1/sqrt(fan_in)`.
    pub fn init<R: Rng>(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        let shape = Shape5::new(1, cout, cin, k, k);
        let data = (0..shape.len())
            .map(|_| real::<T>(rng.gen_range(-bound..bound)))
            .collect();
        let weight = Tensor5::from_vec(shape, data).expect("init length");
        Self::new(weight, stride, pad).expect("valid init shape")
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().b
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.gamma.len() + self.beta.len()
    }

    /// Parameter tensors in the order of [`ConvBnNodes::param_ids`].
    pub fn params_mut(&mut self) -> [&mut Tensor5<T>; 3] {
        [&mut self.weight, &mut self.gamma, &mut self.beta]
    }

    /// Record conv + batchnorm on the tape. Train mode computes batch
    /// statistics and folds them into the running averages.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        input: NodeId,
        mode: BnMode,
    ) -> Result<ConvBnNodes> {
        let weight = tape.leaf(self.weight.clone());
        let gamma = tape.leaf(self.gamma.clone());
        let beta = tape.leaf(self.beta.clone());
        let conv = tape.conv2d(input, weight, None, self.stride, self.pad)?;
        let (out, stats) = tape.batchnorm(conv, gamma, beta, &self.running, mode, self.eps)?;
        if mode == BnMode::Train {
            self.running.update(&stats, self.momentum);
        }
        Ok(ConvBnNodes {
            weight,
            gamma,
            beta,
            out,
        })
    }

    /// Fold the running statistics into an equivalent plain convolution:
    /// `w' = w * gamma/sqrt(var+eps)`, `b' = beta - mean * gamma/sqrt(var+eps)`.
    /// Eval-mode output of the compound equals `conv2d(w', b')`.
    pub fn fold(&self) -> (Tensor5<T>, Vec<T>) {
        let ws = self.weight.shape();
        let per = ws.c * ws.h * ws.w;
        let cout = ws.b;
        let mut weight = self.weight.clone();
        let mut bias = vec![T::ZERO; cout];
        for co in 0..cout {
            let inv_std = T::ONE / (self.running.var[co] + self.eps).sqrt();
            let k = self.gamma.data()[co] * inv_std;
            for v in &mut weight.data_mut()[co * per..(co + 1) * per] {
                *v = *v * k;
            }
            bias[co] = self.beta.data()[co] - self.running.mean[co] * k;
        }
        (weight, bias)
    }
}

/// Fully connected readout over channels, `C -> K`.
#[derive(Clone, Debug)]
pub struct Linear<T: Scalar> {
    /// `[1, K, C, 1, 1]`.
    pub weight: Tensor5<T>,
    /// `[1, 1, K, 1, 1]`.
    pub bias: Tensor5<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct LinearNodes {
    pub weight: NodeId,
    pub bias: NodeId,
    pub out: NodeId,
}

impl LinearNodes {
    pub fn param_ids(&self) -> [NodeId; 2] {
        [self.weight, self.bias]
    }
}

impl<T: Scalar> Linear<T> {
    pub fn new(weight: Tensor5<T>, bias: Tensor5<T>) -> Result<Self> {
        let ws = weight.shape();
        if ws.t != 1 || ws.h != 1 || ws.w != 1 {
            return Err(Error::ShapeMismatch {
                op: "linear weight",
                left: ws,
                right: Shape5::new(1, ws.b, ws.c, 1, 1),
            });
        }
        if bias.len() != ws.b {
            return Err(Error::ChannelMismatch {
                what: "linear bias",
                expected: ws.b,
                got: bias.len(),
            });
        }
        Ok(Self { weight, bias })
    }

    pub fn init<R: Rng>(cin: usize, classes: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (cin as f64).sqrt();
        let shape = Shape5::new(1, classes, cin, 1, 1);
        let data = (0..shape.len())
            .map(|_| real::<T>(rng.gen_range(-bound..bound)))
            .collect();
        let weight = Tensor5::from_vec(shape, data).expect("init length");
        Self::new(weight, Tensor5::zeros(Shape5::new(1, 1, classes, 1, 1)))
            .expect("valid init shape")
    }

    pub fn params_mut(&mut self) -> [&mut Tensor5<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn forward(&self, tape: &mut Tape<T>, input: NodeId) -> Result<LinearNodes> {
        let weight = tape.leaf(self.weight.clone());
        let bias = tape.leaf(self.bias.clone());
        let out = tape.linear(input, weight, Some(bias))?;
        Ok(LinearNodes { weight, bias, out })
    }
}
