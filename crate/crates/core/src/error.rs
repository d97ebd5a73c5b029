//! Error types shared by the tensor kernels, autodiff tape and block layers.

use std::fmt;

use crate::tensor::Shape5;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensor ops, the tape and the downsampling blocks.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// Constructor received a data buffer whose length does not match the shape.
    DataLength { expected: usize, got: usize },
    /// Two tensors that must agree in shape do not.
    ShapeMismatch {
        op: &'static str,
        left: Shape5,
        right: Shape5,
    },
    /// Convolution geometry does not produce a positive output extent.
    ConvGeometry {
        input: (usize, usize),
        kernel: (usize, usize),
        stride: usize,
        pad: usize,
    },
    /// Pooling window does not fit inside the input plane.
    WindowTooLarge {
        window: usize,
        height: usize,
        width: usize,
    },
    /// Spatial extent is not divisible by the pooling stride.
    Indivisible { extent: usize, stride: usize },
    /// Per-channel parameter vector has the wrong length.
    ChannelMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// Batch statistics cannot be computed from an empty batch.
    EmptyBatch,
    /// A configuration value violates its invariant.
    InvalidConfig { name: &'static str, value: f64 },
    /// Backward seed shape does not match the root output shape.
    SeedShape { expected: Shape5, got: Shape5 },
    /// Saved state does not match the tensor it is replayed against.
    StateMismatch { expected: Shape5, got: Shape5 },
    /// Routing analysis is only defined for max-pool orderings.
    RoutingNotApplicable { variant: &'static str },
    /// A stride must be a positive integer.
    ZeroStride,
    /// A class label lies outside the logit range.
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DataLength { expected, got } => {
                write!(f, "data length mismatch: expected {expected}, got {got}")
            }
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch between {left} and {right}")
            }
            Error::ConvGeometry {
                input,
                kernel,
                stride,
                pad,
            } => write!(
                f,
                "convolution geometry invalid: input {}x{}, kernel {}x{}, stride {stride}, pad {pad}",
                input.0, input.1, kernel.0, kernel.1
            ),
            Error::WindowTooLarge {
                window,
                height,
                width,
            } => write!(
                f,
                "pooling window {window}x{window} larger than input plane {height}x{width}"
            ),
            Error::Indivisible { extent, stride } => write!(
                f,
                "spatial extent {extent} not divisible by pooling stride {stride}"
            ),
            Error::ChannelMismatch {
                what,
                expected,
                got,
            } => write!(f, "{what}: expected {expected} channels, got {got}"),
            Error::EmptyBatch => write!(f, "batch statistics require a non-empty batch"),
            Error::InvalidConfig { name, value } => {
                write!(f, "invalid config: {name} = {value}")
            }
            Error::SeedShape { expected, got } => {
                write!(f, "backward seed shape {got} does not match output {expected}")
            }
            Error::StateMismatch { expected, got } => {
                write!(f, "saved state shape {expected} does not match tensor {got}")
            }
            Error::RoutingNotApplicable { variant } => {
                write!(f, "routing analysis not applicable to variant {variant}")
            }
            Error::ZeroStride => write!(f, "stride must be a positive integer"),
            Error::LabelOutOfRange {
                index,
                label,
                classes,
            } => write!(
                f,
                "label {label} at position {index} outside {classes} classes"
            ),
        }
    }
}

impl std::error::Error for Error {}
