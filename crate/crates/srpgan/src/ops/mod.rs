//! Differentiable operator layer: convolution, transposed convolution,
//! instance normalization, activations, channel concat. Every forward has a
//! hand-written backward; the `gradcheck` module verifies each one against
//! central finite differences.

mod act;
mod concat;
mod conv;
mod norm;

pub use act::{
    leaky_relu, leaky_relu_backward, log_sigmoid, log_sigmoid_backward, log_sigmoid_scalar,
    sigmoid, sigmoid_backward, sigmoid_scalar,
};
pub use concat::{concat_channels, concat_channels_backward, split_channels};
pub use conv::{
    conv2d, conv2d_backward, conv2d_raw, conv2d_raw_backward, conv2d_transpose,
    conv2d_transpose_backward, Conv2dSpec, ConvGrads, TConv2dSpec, CONV_KERNEL, CONV_PADDING,
    TCONV_KERNEL, TCONV_PADDING, TCONV_STRIDE,
};
pub use norm::{
    instance_norm, instance_norm_backward, instance_norm_fwd, InstanceNormMoments,
    INSTANCE_NORM_EPS,
};

/// Which gradients a backward call should produce. Input gradients are what
/// flows further down the graph; parameter gradients feed the optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Wants {
    pub input: bool,
    pub params: bool,
}

impl Wants {
    pub const ALL: Wants = Wants {
        input: true,
        params: true,
    };
    pub const INPUT_ONLY: Wants = Wants {
        input: true,
        params: false,
    };
    pub const PARAMS_ONLY: Wants = Wants {
        input: false,
        params: true,
    };
}

/// Leaky slope used by both networks.
pub const LEAKY_SLOPE: f64 = 0.2;
