//! U-Net generator: stride-2 conv encoder, transposed-conv decoder with
//! channel-concatenation skips, sigmoid head. Operates on the pre-upscaled
//! low-resolution image and emits a same-size restoration in (0, 1).

use super::{stage_channels, ConvLayer, InitKind, TConvLayer};
use crate::error::{Error, Result};
use crate::ops::{self, InstanceNormMoments, Wants};
use crate::scalar::Scalar;
use crate::tensor::{RngStream, Tensor};

/// Structural hyper-parameters of the generator.
#[derive(Clone, Debug)]
pub struct GeneratorPlan {
    /// Number of encoder stages (= number of decoder stages).
    pub n_half: usize,
    /// Channel count of the first encoder stage; later stages double up to
    /// a cap of 512.
    pub base_channels: usize,
    /// Channels of the network input (RGB = 3).
    pub in_channels: usize,
    /// Channels of the network output (RGB = 3).
    pub out_channels: usize,
    /// Negative-side slope of the activations.
    pub leaky_slope: f64,
    /// Epsilon inside the instance-norm standard deviation.
    pub norm_eps: f64,
    /// Weight initialization family.
    pub init: InitKind,
}

impl GeneratorPlan {
    /// Full-size configuration used for real training runs.
    pub fn full() -> Self {
        GeneratorPlan {
            n_half: 5,
            base_channels: 64,
            ..GeneratorPlan::desk()
        }
    }

    /// Small configuration for CPU-scale verification runs.
    pub fn desk() -> Self {
        GeneratorPlan {
            n_half: 3,
            base_channels: 16,
            in_channels: 3,
            out_channels: 3,
            leaky_slope: ops::LEAKY_SLOPE,
            norm_eps: ops::INSTANCE_NORM_EPS,
            init: InitKind::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_half < 1 {
            return Err(Error::InvalidParameter(
                "generator needs at least 1 encoder stage".into(),
            ));
        }
        if self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidParameter(
                "generator channel counts must be positive".into(),
            ));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "leaky slope must lie in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        if self.norm_eps <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "norm epsilon must be positive, got {}",
                self.norm_eps
            )));
        }
        Ok(())
    }

    /// Output channels of each encoder stage.
    pub fn encoder_channels(&self) -> Vec<usize> {
        (0..self.n_half)
            .map(|k| stage_channels(self.base_channels, k))
            .collect()
    }

    /// Output channels of each decoder stage (encoder progression reversed).
    pub fn decoder_channels(&self) -> Vec<usize> {
        let mut ch = self.encoder_channels();
        ch.reverse();
        ch
    }

    /// Input spatial extents must be divisible by this.
    pub fn input_multiple(&self) -> usize {
        1 << self.n_half
    }
}

/// Saved intermediates of one conv/norm/activation stage.
#[derive(Clone, Debug)]
struct NormStageCtx<E> {
    pre_norm: Tensor<E>,
    moments: InstanceNormMoments,
    pre_act: Tensor<E>,
}

/// Everything the generator backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct GeneratorCtx<E> {
    z: Tensor<E>,
    enc_stage: Vec<NormStageCtx<E>>,
    enc_out: Vec<Tensor<E>>,
    dec_in: Vec<Tensor<E>>,
    dec_stage: Vec<NormStageCtx<E>>,
    head_in: Tensor<E>,
    output: Tensor<E>,
}

impl<E: Scalar> GeneratorCtx<E> {
    /// Network output saved by the forward pass.
    pub fn output(&self) -> &Tensor<E> {
        &self.output
    }

    /// Post-activation encoder outputs (useful for shape diagnostics).
    pub fn encoder_outputs(&self) -> &[Tensor<E>] {
        &self.enc_out
    }
}

/// The generator network.
#[derive(Clone, Debug)]
pub struct Generator<E> {
    pub plan: GeneratorPlan,
    pub encoder: Vec<ConvLayer<E>>,
    pub decoder: Vec<TConvLayer<E>>,
    pub head: ConvLayer<E>,
}

impl<E: Scalar> Generator<E> {
    /// Builds and initializes a generator, consuming draws from `stream` in a
    /// fixed order (encoder stages, decoder stages, head).
    pub fn build(plan: GeneratorPlan, stream: &mut RngStream) -> Result<Self> {
        plan.validate()?;
        let enc_ch = plan.encoder_channels();
        let dec_ch = plan.decoder_channels();

        let mut encoder = Vec::with_capacity(plan.n_half);
        let mut c_in = plan.in_channels;
        for &c_out in &enc_ch {
            encoder.push(ConvLayer::new(stream, c_in, c_out, 2, plan.init)?);
            c_in = c_out;
        }

        let mut decoder = Vec::with_capacity(plan.n_half);
        for d in 0..plan.n_half {
            // Stage 0 consumes the innermost encoder output directly; later
            // stages consume the previous decoder output concatenated with
            // the matching encoder skip.
            let c_in = if d == 0 {
                enc_ch[plan.n_half - 1]
            } else {
                dec_ch[d - 1] + enc_ch[plan.n_half - 1 - d]
            };
            decoder.push(TConvLayer::new(stream, c_in, dec_ch[d], plan.init)?);
        }

        let head = ConvLayer::new(stream, dec_ch[plan.n_half - 1], plan.out_channels, 1, plan.init)?;
        Ok(Generator {
            plan,
            encoder,
            decoder,
            head,
        })
    }

    fn check_input(&self, z: &Tensor<E>) -> Result<()> {
        let (_, c, h, w) = z.dims4();
        if c != self.plan.in_channels {
            return Err(Error::shape_mismatch(
                "generator input channels",
                z.dims(),
                &[self.plan.in_channels],
            ));
        }
        let m = self.plan.input_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::InvalidParameter(format!(
                "generator input extents {}x{} must be divisible by {}",
                h, w, m
            )));
        }
        Ok(())
    }

    fn run_forward(
        &self,
        z: &Tensor<E>,
        collect: bool,
        ablate_skip: Option<usize>,
    ) -> Result<(Tensor<E>, Option<GeneratorCtx<E>>)> {
        self.check_input(z)?;
        let n_half = self.plan.n_half;
        let slope = self.plan.leaky_slope;
        let eps = self.plan.norm_eps;

        let mut enc_stage = Vec::new();
        let mut enc_out: Vec<Tensor<E>> = Vec::with_capacity(n_half);
        let mut x = z.clone();
        for layer in &self.encoder {
            let pre_norm = layer.forward(&x)?;
            let (pre_act, moments) = ops::instance_norm_fwd(&pre_norm, eps)?;
            let out = ops::leaky_relu(&pre_act, slope);
            if collect {
                enc_stage.push(NormStageCtx {
                    pre_norm,
                    moments,
                    pre_act,
                });
            }
            enc_out.push(out.clone());
            x = out;
        }

        let mut dec_in = Vec::new();
        let mut dec_stage = Vec::new();
        let mut cur = enc_out[n_half - 1].clone();
        for (d, layer) in self.decoder.iter().enumerate() {
            let input = if d == 0 {
                cur
            } else {
                let skip_index = n_half - 1 - d;
                let skip = &enc_out[skip_index];
                if ablate_skip == Some(skip_index) {
                    let zeros = Tensor::zeros(skip.dims())?;
                    ops::concat_channels(&cur, &zeros)?
                } else {
                    ops::concat_channels(&cur, skip)?
                }
            };
            let pre_norm = layer.forward(&input)?;
            let (pre_act, moments) = ops::instance_norm_fwd(&pre_norm, eps)?;
            let out = ops::leaky_relu(&pre_act, slope);
            if collect {
                dec_in.push(input);
                dec_stage.push(NormStageCtx {
                    pre_norm,
                    moments,
                    pre_act,
                });
            }
            cur = out;
        }

        let pre_sig = self.head.forward(&cur)?;
        let output = ops::sigmoid(&pre_sig);
        let ctx = if collect {
            Some(GeneratorCtx {
                z: z.clone(),
                enc_stage,
                enc_out,
                dec_in,
                dec_stage,
                head_in: cur,
                output: output.clone(),
            })
        } else {
            None
        };
        Ok((output, ctx))
    }

    /// Inference-mode forward pass (no saved intermediates).
    pub fn forward(&self, z: &Tensor<E>) -> Result<Tensor<E>> {
        Ok(self.run_forward(z, false, None)?.0)
    }

    /// Forward pass that records every intermediate needed by `backward`.
    pub fn forward_train(&self, z: &Tensor<E>) -> Result<(Tensor<E>, GeneratorCtx<E>)> {
        let (out, ctx) = self.run_forward(z, true, None)?;
        Ok((out, ctx.expect("context requested")))
    }

    /// Diagnostic forward pass with one encoder skip replaced by zeros.
    /// `skip_index` refers to an encoder stage that feeds a concatenation,
    /// i.e. a value in `0..n_half - 1`.
    pub fn forward_skip_ablated(&self, z: &Tensor<E>, skip_index: usize) -> Result<Tensor<E>> {
        if skip_index + 1 >= self.plan.n_half {
            return Err(Error::InvalidParameter(format!(
                "skip index {} out of range; skips come from encoder stages 0..{}",
                skip_index,
                self.plan.n_half - 1
            )));
        }
        Ok(self.run_forward(z, false, Some(skip_index))?.0)
    }

    /// Backpropagates `grad_output` (gradient of a scalar objective with
    /// respect to the network output) through the recorded context,
    /// accumulating parameter gradients in-place. Returns the gradient with
    /// respect to the input when `wants_input` is set.
    pub fn backward(
        &mut self,
        ctx: &GeneratorCtx<E>,
        grad_output: &Tensor<E>,
        wants_input: bool,
    ) -> Result<Option<Tensor<E>>> {
        if !ctx.output.same_shape(grad_output) {
            return Err(Error::shape_mismatch(
                "generator output gradient",
                ctx.output.dims(),
                grad_output.dims(),
            ));
        }
        let n_half = self.plan.n_half;
        let slope = self.plan.leaky_slope;
        let dec_ch = self.plan.decoder_channels();

        let g_pre_sig = ops::sigmoid_backward(&ctx.output, grad_output)?;
        let mut g = self
            .head
            .backward(&ctx.head_in, &g_pre_sig, Wants::ALL)?
            .expect("head input gradient");

        // Decoder stages in reverse; gradients for the skip halves are set
        // aside and injected during the encoder sweep.
        let mut skip_grads: Vec<Option<Tensor<E>>> = vec![None; n_half];
        for d in (0..n_half).rev() {
            let stage = &ctx.dec_stage[d];
            let g_pre_act = ops::leaky_relu_backward(&stage.pre_act, slope, &g)?;
            let g_pre_norm =
                ops::instance_norm_backward(&stage.pre_norm, &stage.moments, &g_pre_act)?;
            let g_in = self.decoder[d]
                .backward(&ctx.dec_in[d], &g_pre_norm, Wants::ALL)?
                .expect("decoder input gradient");
            if d == 0 {
                g = g_in;
            } else {
                let (g_prev, g_skip) = ops::split_channels(&g_in, dec_ch[d - 1])?;
                skip_grads[n_half - 1 - d] = Some(g_skip);
                g = g_prev;
            }
        }

        // Encoder stages in reverse; `g` enters as the gradient with respect
        // to the innermost encoder output.
        for k in (0..n_half).rev() {
            if let Some(sg) = &skip_grads[k] {
                g.add_assign(sg)?;
            }
            let stage = &ctx.enc_stage[k];
            let g_pre_act = ops::leaky_relu_backward(&stage.pre_act, slope, &g)?;
            let g_pre_norm =
                ops::instance_norm_backward(&stage.pre_norm, &stage.moments, &g_pre_act)?;
            let conv_in = if k == 0 { &ctx.z } else { &ctx.enc_out[k - 1] };
            let wants = Wants {
                input: k > 0 || wants_input,
                params: true,
            };
            let g_in = self.encoder[k].backward(conv_in, &g_pre_norm, wants)?;
            if k == 0 {
                return Ok(g_in);
            }
            g = g_in.expect("encoder input gradient");
        }
        unreachable!("encoder loop returns at stage 0")
    }

    /// Visits every parameter tensor with a stable, unique name.
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        for (k, layer) in self.encoder.iter().enumerate() {
            f(&format!("enc{k}.weight"), &layer.weight);
            f(&format!("enc{k}.bias"), &layer.bias);
        }
        for (d, layer) in self.decoder.iter().enumerate() {
            f(&format!("dec{d}.weight"), &layer.weight);
            f(&format!("dec{d}.bias"), &layer.bias);
        }
        f("head.weight", &self.head.weight);
        f("head.bias", &self.head.bias);
    }

    /// Mutable variant of [`Generator::visit_params`], same order and names.
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        for (k, layer) in self.encoder.iter_mut().enumerate() {
            f(&format!("enc{k}.weight"), &mut layer.weight);
            f(&format!("enc{k}.bias"), &mut layer.bias);
        }
        for (d, layer) in self.decoder.iter_mut().enumerate() {
            f(&format!("dec{d}.weight"), &mut layer.weight);
            f(&format!("dec{d}.bias"), &mut layer.bias);
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

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_generator() -> Generator<f32> {
        let mut stream = RngStream::new(11);
        Generator::build(GeneratorPlan::desk(), &mut stream).unwrap()
    }

    /// Layer-by-layer count for the desk plan (n_half = 3, base 16):
    /// encoder 3->16->32->64 stride-2 convs, decoder 64->64, 96->32, 48->16
    /// transposed convs, head 16->3 conv, biases included.
    #[test]
    fn desk_param_count_matches_hand_count() {
        let g = desk_generator();
        assert_eq!(g.param_count(), 151_107);
    }

    /// Channel doubling caps at 512 for the full-size plan.
    #[test]
    fn full_plan_channel_progression_caps() {
        let plan = GeneratorPlan::full();
        assert_eq!(plan.encoder_channels(), vec![64, 128, 256, 512, 512]);
        assert_eq!(plan.decoder_channels(), vec![512, 512, 256, 128, 64]);
        assert_eq!(plan.input_multiple(), 32);
    }

    /// Output preserves the input extents and lands strictly
    /// inside (0, 1) because of the sigmoid head.
    #[test]
    fn forward_shape_and_range() {
        let g = desk_generator();
        let mut stream = RngStream::new(5);
        let z = crate::tensor::rng_uniform::<f32>(&mut stream, &[2, 3, 64, 48], 0.0, 1.0).unwrap();
        let (out, ctx) = g.forward_train(&z).unwrap();
        assert_eq!(out.dims(), &[2, 3, 64, 48]);
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
        // Encoder halves the extents at every stage.
        let shapes: Vec<_> = ctx
            .encoder_outputs()
            .iter()
            .map(|t| t.dims().to_vec())
            .collect();
        assert_eq!(
            shapes,
            vec![
                vec![2, 16, 32, 24],
                vec![2, 32, 16, 12],
                vec![2, 64, 8, 6]
            ]
        );
    }

    /// Indivisible input extents are rejected up front.
    #[test]
    fn indivisible_input_rejected() {
        let g = desk_generator();
        let z = Tensor::<f32>::zeros(&[1, 3, 60, 64]).unwrap();
        assert!(g.forward(&z).is_err());
    }

    /// Same seed, same parameters; forward passes are bit-stable.
    #[test]
    fn deterministic_build_and_forward() {
        let g1 = desk_generator();
        let g2 = desk_generator();
        let mut stream = RngStream::new(7);
        let z = crate::tensor::rng_uniform::<f32>(&mut stream, &[1, 3, 32, 32], 0.0, 1.0).unwrap();
        let a = g1.forward(&z).unwrap();
        let b = g2.forward(&z).unwrap();
        assert_eq!(a.data(), b.data());
        let c = g1.forward(&z).unwrap();
        assert_eq!(a.data(), c.data());
    }

    /// The skip connections are live: replacing either skip with
    /// zeros changes the output.
    #[test]
    fn skip_ablation_changes_output() {
        let g = desk_generator();
        let mut stream = RngStream::new(9);
        let z = crate::tensor::rng_uniform::<f32>(&mut stream, &[1, 3, 32, 32], 0.0, 1.0).unwrap();
        let full = g.forward(&z).unwrap();
        for skip in 0..2 {
            let ablated = g.forward_skip_ablated(&z, skip).unwrap();
            assert!(
                full.data() != ablated.data(),
                "skip {skip} had no effect on the output"
            );
        }
        // The innermost encoder output is the decoder trunk, not a skip.
        assert!(g.forward_skip_ablated(&z, 2).is_err());
    }

    /// Parameter names are unique and the mutable visitor matches
    /// the immutable one.
    #[test]
    fn param_visitor_names_unique_and_consistent() {
        let mut g = desk_generator();
        let mut names = Vec::new();
        g.visit_params(&mut |name, _| names.push(name.to_string()));
        let mut names_mut = Vec::new();
        g.visit_params_mut(&mut |name, _| names_mut.push(name.to_string()));
        assert_eq!(names, names_mut);
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len(), "duplicate parameter names");
        assert_eq!(names.len(), 2 * (3 + 3 + 1));
    }
}
