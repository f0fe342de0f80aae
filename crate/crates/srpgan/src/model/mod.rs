//! Network assembly: U-Net generator and conditional patch discriminator,
//! built from the ops layer with explicit per-stage forward contexts so the
//! backward passes are plain reversed loops.

mod discriminator;
mod generator;

pub use discriminator::{
    Discriminator, DiscriminatorCtx, DiscriminatorPlan, FeatureTaps, TapGrads,
};
pub use generator::{Generator, GeneratorCtx, GeneratorPlan};

use crate::error::Result;
use crate::ops::{self, Conv2dSpec};
use crate::scalar::Scalar;
use crate::tensor::{he_normal_init, xavier_init, RngStream, Tensor};

/// Weight initialization family. Glorot-uniform is the default; He-normal is
/// available behind a config flag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InitKind {
    #[default]
    XavierUniform,
    HeNormal,
}

/// Channel progression shared by both networks: stage k runs at
/// base * 2^min(k, 3), capped at 512.
pub(crate) fn stage_channels(base: usize, k: usize) -> usize {
    (base << k.min(3)).min(512)
}

fn init_weight<E: Scalar>(
    stream: &mut RngStream,
    dims: &[usize],
    fan_in: usize,
    fan_out: usize,
    kind: InitKind,
) -> Result<Tensor<E>> {
    match kind {
        InitKind::XavierUniform => xavier_init(stream, dims, fan_in, fan_out),
        InitKind::HeNormal => he_normal_init(stream, dims, fan_in),
    }
}

/// 3x3 convolution layer (weight, bias, stride). Biases start at zero.
#[derive(Clone, Debug)]
pub struct ConvLayer<E> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
    pub spec: Conv2dSpec,
}

impl<E: Scalar> ConvLayer<E> {
    pub fn new(
        stream: &mut RngStream,
        c_in: usize,
        c_out: usize,
        stride: usize,
        kind: InitKind,
    ) -> Result<Self> {
        let k = ops::CONV_KERNEL;
        let fan_in = c_in * k * k;
        let fan_out = c_out * k * k;
        let mut weight = init_weight(stream, &[c_out, c_in, k, k], fan_in, fan_out, kind)?;
        let mut bias = Tensor::zeros(&[c_out])?;
        weight.ensure_grad();
        bias.ensure_grad();
        Ok(ConvLayer {
            weight,
            bias,
            spec: Conv2dSpec { stride },
        })
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        ops::conv2d(x, &self.weight, &self.bias, self.spec)
    }

    /// Accumulates parameter gradients in-place; returns the input gradient
    /// when requested.
    pub fn backward(
        &mut self,
        x: &Tensor<E>,
        grad_out: &Tensor<E>,
        wants: ops::Wants,
    ) -> Result<Option<Tensor<E>>> {
        let grads = ops::conv2d_backward(x, &self.weight, self.spec, grad_out, wants)?;
        if let Some(gw) = grads.weight {
            accumulate(&mut self.weight, &gw);
        }
        if let Some(gb) = grads.bias {
            accumulate(&mut self.bias, &gb);
        }
        Ok(grads.input)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// 4x4 stride-2 transposed convolution layer.
#[derive(Clone, Debug)]
pub struct TConvLayer<E> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

impl<E: Scalar> TConvLayer<E> {
    pub fn new(
        stream: &mut RngStream,
        c_in: usize,
        c_out: usize,
        kind: InitKind,
    ) -> Result<Self> {
        let k = ops::TCONV_KERNEL;
        let fan_in = c_in * k * k;
        let fan_out = c_out * k * k;
        let mut weight = init_weight(stream, &[c_in, c_out, k, k], fan_in, fan_out, kind)?;
        let mut bias = Tensor::zeros(&[c_out])?;
        weight.ensure_grad();
        bias.ensure_grad();
        Ok(TConvLayer { weight, bias })
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        ops::conv2d_transpose(x, &self.weight, &self.bias, ops::TConv2dSpec)
    }

    pub fn backward(
        &mut self,
        x: &Tensor<E>,
        grad_out: &Tensor<E>,
        wants: ops::Wants,
    ) -> Result<Option<Tensor<E>>> {
        let grads = ops::conv2d_transpose_backward(
            x,
            &self.weight,
            grad_out,
            ops::TConv2dSpec,
            wants,
        )?;
        if let Some(gw) = grads.weight {
            accumulate(&mut self.weight, &gw);
        }
        if let Some(gb) = grads.bias {
            accumulate(&mut self.bias, &gb);
        }
        Ok(grads.input)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

fn accumulate<E: Scalar>(param: &mut Tensor<E>, grad: &Tensor<E>) {
    param.ensure_grad();
    for (g, &d) in param.grad_mut().iter_mut().zip(grad.data()) {
        *g = *g + d;
    }
}
