//! Conditional patch discriminator: a stack of stride-2 convolutions with
//! LeakyReLU activations (no normalization anywhere) followed by a stride-1
//! head that emits a spatial map of raw real/fake logits. Every
//! post-activation feature map is exposed as a tap for the perceptual loss.

use super::{stage_channels, ConvLayer, InitKind};
use crate::error::{Error, Result};
use crate::ops::{self, Wants};
use crate::scalar::Scalar;
use crate::tensor::{RngStream, Tensor};

/// Structural hyper-parameters of the discriminator.
#[derive(Clone, Debug)]
pub struct DiscriminatorPlan {
    /// Total conv stages: `layers - 1` stride-2 stages plus the stride-1 head.
    pub layers: usize,
    /// Channel count of the first stage; later stages double up to 512.
    pub base_channels: usize,
    /// When set, the input condition is concatenated with the candidate
    /// (6 input channels); otherwise the candidate alone is judged.
    pub conditional: bool,
    /// Channels of one image (RGB = 3).
    pub image_channels: usize,
    /// Negative-side slope of the activations.
    pub leaky_slope: f64,
    /// Weight initialization family.
    pub init: InitKind,
}

impl DiscriminatorPlan {
    /// Full-size configuration used for real training runs.
    pub fn full() -> Self {
        DiscriminatorPlan {
            layers: 5,
            base_channels: 64,
            ..DiscriminatorPlan::desk()
        }
    }

    /// Small configuration for CPU-scale verification runs.
    pub fn desk() -> Self {
        DiscriminatorPlan {
            layers: 3,
            base_channels: 16,
            conditional: true,
            image_channels: 3,
            leaky_slope: ops::LEAKY_SLOPE,
            init: InitKind::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 {
            return Err(Error::InvalidParameter(
                "discriminator needs at least 1 conv stage".into(),
            ));
        }
        if self.base_channels == 0 || self.image_channels == 0 {
            return Err(Error::InvalidParameter(
                "discriminator channel counts must be positive".into(),
            ));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "leaky slope must lie in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// Channels entering the first conv stage.
    pub fn input_channels(&self) -> usize {
        if self.conditional {
            2 * self.image_channels
        } else {
            self.image_channels
        }
    }

    /// Output channels of each stride-2 stage (the head always emits 1).
    pub fn stage_output_channels(&self) -> Vec<usize> {
        (0..self.layers - 1)
            .map(|k| stage_channels(self.base_channels, k))
            .collect()
    }

    /// One-axis interval `[lo, hi]` of input coordinates (possibly reaching
    /// into padding) that influence logit index `t`, obtained by folding the
    /// conv geometry backwards through every stage.
    pub fn logit_receptive_interval(&self, t: usize) -> (isize, isize) {
        // Head: 3x3 stride 1, pad 1.
        let mut lo = t as isize - 1;
        let mut hi = t as isize + 1;
        // Stride-2 stages: output index i reads input rows 2i-1 ..= 2i+1.
        for _ in 0..self.layers - 1 {
            lo = 2 * lo - 1;
            hi = 2 * hi + 1;
        }
        (lo, hi)
    }
}

/// Ordered post-activation feature maps, one per conv stage. The last entry
/// is the activated logit map (the logits themselves stay raw).
#[derive(Clone, Debug)]
pub struct FeatureTaps<E>(pub Vec<Tensor<E>>);

impl<E: Scalar> FeatureTaps<E> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Tensor<E>> {
        self.0.iter()
    }
}

/// Per-tap upstream gradients for the backward pass; `None` entries carry no
/// gradient. Must have one slot per conv stage.
pub type TapGrads<E> = Vec<Option<Tensor<E>>>;

/// Saved intermediates of a discriminator forward pass.
#[derive(Clone, Debug)]
pub struct DiscriminatorCtx<E> {
    input: Tensor<E>,
    /// Pre-activation output of each stride-2 stage.
    stage_pre: Vec<Tensor<E>>,
    /// Post-activation output of each stride-2 stage.
    stage_out: Vec<Tensor<E>>,
    logits: Tensor<E>,
}

impl<E: Scalar> DiscriminatorCtx<E> {
    /// Raw logit map saved by the forward pass.
    pub fn logits(&self) -> &Tensor<E> {
        &self.logits
    }
}

/// The discriminator network.
#[derive(Clone, Debug)]
pub struct Discriminator<E> {
    pub plan: DiscriminatorPlan,
    pub stages: Vec<ConvLayer<E>>,
    pub head: ConvLayer<E>,
}

impl<E: Scalar> Discriminator<E> {
    /// Builds and initializes a discriminator, consuming draws from `stream`
    /// in a fixed order (stride-2 stages, then the head).
    pub fn build(plan: DiscriminatorPlan, stream: &mut RngStream) -> Result<Self> {
        plan.validate()?;
        let mut stages = Vec::with_capacity(plan.layers - 1);
        let mut c_in = plan.input_channels();
        for c_out in plan.stage_output_channels() {
            stages.push(ConvLayer::new(stream, c_in, c_out, 2, plan.init)?);
            c_in = c_out;
        }
        let head = ConvLayer::new(stream, c_in, 1, 1, plan.init)?;
        Ok(Discriminator { plan, stages, head })
    }

    fn assemble_input(&self, z: &Tensor<E>, candidate: &Tensor<E>) -> Result<Tensor<E>> {
        if !z.same_shape(candidate) {
            return Err(Error::shape_mismatch(
                "discriminator condition vs candidate",
                z.dims(),
                candidate.dims(),
            ));
        }
        let (_, c, _, _) = candidate.dims4();
        if c != self.plan.image_channels {
            return Err(Error::shape_mismatch(
                "discriminator candidate channels",
                candidate.dims(),
                &[self.plan.image_channels],
            ));
        }
        if self.plan.conditional {
            ops::concat_channels(z, candidate)
        } else {
            Ok(candidate.clone())
        }
    }

    fn run_forward(
        &self,
        z: &Tensor<E>,
        candidate: &Tensor<E>,
        collect: bool,
    ) -> Result<(Tensor<E>, FeatureTaps<E>, Option<DiscriminatorCtx<E>>)> {
        let slope = self.plan.leaky_slope;
        let input = self.assemble_input(z, candidate)?;

        let mut stage_pre = Vec::new();
        let mut stage_out = Vec::new();
        let mut taps = Vec::with_capacity(self.plan.layers);
        let mut x = input.clone();
        for layer in &self.stages {
            let pre = layer.forward(&x)?;
            let out = ops::leaky_relu(&pre, slope);
            taps.push(out.clone());
            if collect {
                stage_pre.push(pre);
                stage_out.push(out.clone());
            }
            x = out;
        }
        let logits = self.head.forward(&x)?;
        taps.push(ops::leaky_relu(&logits, slope));

        let ctx = if collect {
            Some(DiscriminatorCtx {
                input,
                stage_pre,
                stage_out,
                logits: logits.clone(),
            })
        } else {
            None
        };
        Ok((logits, FeatureTaps(taps), ctx))
    }

    /// Inference-mode forward pass: raw logit map plus the feature taps.
    /// In unconditional mode `z` is ignored apart from a shape check.
    pub fn forward(
        &self,
        z: &Tensor<E>,
        candidate: &Tensor<E>,
    ) -> Result<(Tensor<E>, FeatureTaps<E>)> {
        let (logits, taps, _) = self.run_forward(z, candidate, false)?;
        Ok((logits, taps))
    }

    /// Forward pass that records every intermediate needed by `backward`.
    pub fn forward_train(
        &self,
        z: &Tensor<E>,
        candidate: &Tensor<E>,
    ) -> Result<(Tensor<E>, FeatureTaps<E>, DiscriminatorCtx<E>)> {
        let (logits, taps, ctx) = self.run_forward(z, candidate, true)?;
        Ok((logits, taps, ctx.expect("context requested")))
    }

    /// Backpropagates gradients arriving at the raw logits and optionally at
    /// each feature tap, accumulating parameter gradients in-place. Returns
    /// `(grad_z, grad_candidate)` with respect to the images when requested
    /// (`grad_z` is `None` in unconditional mode).
    #[allow(clippy::type_complexity)]
    pub fn backward(
        &mut self,
        ctx: &DiscriminatorCtx<E>,
        grad_logits: &Tensor<E>,
        tap_grads: Option<&TapGrads<E>>,
        wants: Wants,
    ) -> Result<Option<(Option<Tensor<E>>, Tensor<E>)>> {
        let slope = self.plan.leaky_slope;
        let n_stages = self.stages.len();
        if let Some(tg) = tap_grads {
            if tg.len() != self.plan.layers {
                return Err(Error::InvalidParameter(format!(
                    "expected {} tap gradient slots, got {}",
                    self.plan.layers,
                    tg.len()
                )));
            }
        }
        let tap_grad = |i: usize| -> Option<&Tensor<E>> {
            tap_grads.and_then(|tg| tg[i].as_ref())
        };

        // The last tap is leaky_relu(logits); fold its gradient into the raw
        // logit gradient.
        let mut g_logits = grad_logits.clone();
        if let Some(gt) = tap_grad(n_stages) {
            let extra = ops::leaky_relu_backward(&ctx.logits, slope, gt)?;
            g_logits.add_assign(&extra)?;
        }

        let head_in = if n_stages == 0 {
            &ctx.input
        } else {
            &ctx.stage_out[n_stages - 1]
        };
        let head_wants = Wants {
            input: n_stages > 0 || wants.input,
            params: wants.params,
        };
        let mut g = self.head.backward(head_in, &g_logits, head_wants)?;

        for s in (0..n_stages).rev() {
            let mut g_out = g.expect("stage output gradient");
            if let Some(gt) = tap_grad(s) {
                g_out.add_assign(gt)?;
            }
            let g_pre = ops::leaky_relu_backward(&ctx.stage_pre[s], slope, &g_out)?;
            let stage_in = if s == 0 {
                &ctx.input
            } else {
                &ctx.stage_out[s - 1]
            };
            let stage_wants = Wants {
                input: s > 0 || wants.input,
                params: wants.params,
            };
            g = self.stages[s].backward(stage_in, &g_pre, stage_wants)?;
        }

        if !wants.input {
            return Ok(None);
        }
        let g_input = g.expect("input gradient");
        if self.plan.conditional {
            let (g_z, g_candidate) = ops::split_channels(&g_input, self.plan.image_channels)?;
            Ok(Some((Some(g_z), g_candidate)))
        } else {
            Ok(Some((None, g_input)))
        }
    }

    /// Visits every parameter tensor with a stable, unique name.
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        for (s, layer) in self.stages.iter().enumerate() {
            f(&format!("stage{s}.weight"), &layer.weight);
            f(&format!("stage{s}.bias"), &layer.bias);
        }
        f("head.weight", &self.head.weight);
        f("head.bias", &self.head.bias);
    }

    /// Mutable variant of [`Discriminator::visit_params`], same order.
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        for (s, layer) in self.stages.iter_mut().enumerate() {
            f(&format!("stage{s}.weight"), &mut layer.weight);
            f(&format!("stage{s}.bias"), &mut layer.bias);
        }
        f("head.weight", &mut self.head.weight);
        f("head.bias", &mut self.head.bias);
    }

    /// Total number of learnable scalars.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.len());
        n
    }

    /// Clears every parameter gradient buffer.
    pub fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |_, t| t.zero_grad());
    }
}
