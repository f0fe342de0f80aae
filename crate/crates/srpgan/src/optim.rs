//! Bias-corrected ADAM, the two-phase learning-rate schedule, and the
//! alternating D-then-G training iteration with its divergence guard.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::loss::{
    adversarial_loss, adversarial_loss_backward, content_loss, content_loss_backward,
    discriminator_objective, generator_objective, perceptual_loss, perceptual_loss_backward,
    LossReport, LossWeights,
};
use crate::model::{Discriminator, Generator, TapGrads};
use crate::ops::Wants;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// ADAM moment decay rates and denominator epsilon.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "invalid ADAM configuration: beta1={}, beta2={}, eps={}",
                self.beta1, self.beta2, self.eps
            )));
        }
        Ok(())
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug)]
struct MomentPair<E> {
    m: Tensor<E>,
    v: Tensor<E>,
}

/// Optimizer state for one model: per-parameter moments keyed by the
/// parameter's visitor name, plus the shared step counter.
#[derive(Clone, Debug)]
pub struct AdamState<E> {
    cfg: AdamConfig,
    t: u64,
    slots: BTreeMap<String, MomentPair<E>>,
}

impl<E: Scalar> AdamState<E> {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(AdamState {
            cfg,
            t: 0,
            slots: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// Completed optimizer steps.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// Restores the step counter (checkpoint loading).
    pub fn set_t(&mut self, t: u64) {
        self.t = t;
    }

    /// Visits every stored moment pair as (parameter name, m, v).
    pub fn visit_moments(&self, f: &mut dyn FnMut(&str, &Tensor<E>, &Tensor<E>)) {
        for (name, pair) in &self.slots {
            f(name, &pair.m, &pair.v);
        }
    }

    /// Installs a moment pair (checkpoint loading). Shapes must agree.
    pub fn insert_moments(&mut self, name: &str, m: Tensor<E>, v: Tensor<E>) -> Result<()> {
        if !m.same_shape(&v) {
            return Err(Error::shape_mismatch(
                &format!("ADAM moments for {name}"),
                m.dims(),
                v.dims(),
            ));
        }
        self.slots.insert(name.to_string(), MomentPair { m, v });
        Ok(())
    }

    /// One optimizer step over every parameter the visitor yields. Each
    /// parameter must carry an accumulated gradient; a non-finite gradient
    /// aborts the step naming the parameter. Updates are computed in f64 and
    /// written back in the element type.
    pub fn step<F>(&mut self, lr: f64, visit: F) -> Result<()>
    where
        F: FnOnce(&mut dyn FnMut(&str, &mut Tensor<E>)),
    {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive and finite, got {lr}"
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.eps);

        let slots = &mut self.slots;
        let mut first_error: Option<Error> = None;
        visit(&mut |name, param| {
            if first_error.is_some() {
                return;
            }
            let dims = param.dims().to_vec();
            let (data, grad) = param.data_and_grad_mut();
            let grad = match grad {
                Some(g) => g,
                None => {
                    first_error = Some(Error::InvalidParameter(format!(
                        "parameter {name} has no gradient buffer"
                    )));
                    return;
                }
            };
            if grad.iter().any(|g| !g.is_finite()) {
                first_error = Some(Error::NonFiniteGradient(name.to_string()));
                return;
            }
            let pair = slots.entry(name.to_string()).or_insert_with(|| MomentPair {
                m: Tensor::zeros(&dims).expect("parameter dims are valid"),
                v: Tensor::zeros(&dims).expect("parameter dims are valid"),
            });
            if pair.m.dims() != dims.as_slice() {
                first_error = Some(Error::shape_mismatch(
                    &format!("ADAM moments for {name}"),
                    pair.m.dims(),
                    &dims,
                ));
                return;
            }
            let m = pair.m.data_mut();
            let v = pair.v.data_mut();
            for i in 0..data.len() {
                let g = grad[i].into_f64();
                let mi = b1 * m[i].into_f64() + (1.0 - b1) * g;
                let vi = b2 * v[i].into_f64() + (1.0 - b2) * g * g;
                m[i] = E::from_f64(mi);
                v[i] = E::from_f64(vi);
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                let theta = data[i].into_f64() - lr * m_hat / (v_hat.sqrt() + eps);
                data[i] = E::from_f64(theta);
            }
        });
        match first_error {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

/// Two-phase learning-rate schedule: a constant initial rate that drops to
/// the final rate at the switch iteration.
#[derive(Clone, Copy, Debug)]
pub struct Schedule {
    pub lr_initial: f64,
    pub lr_final: f64,
    pub switch_iteration: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            lr_initial: 1e-4,
            lr_final: 1e-5,
            switch_iteration: 1_000_000,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_initial > 0.0 && self.lr_final > 0.0) {
            return Err(Error::InvalidParameter(
                "learning rates must be positive".into(),
            ));
        }
        if self.lr_final > self.lr_initial {
            return Err(Error::InvalidParameter(format!(
                "final learning rate {} exceeds initial {}",
                self.lr_final, self.lr_initial
            )));
        }
        Ok(())
    }

    /// Learning rate used by iteration `t` (0-based count of completed
    /// iterations).
    pub fn lr(&self, t: u64) -> f64 {
        if t < self.switch_iteration {
            self.lr_initial
        } else {
            self.lr_final
        }
    }
}

/// Alternating trainer: one discriminator step followed by one generator
/// step per iteration, each on a freshly computed forward pass.
pub struct Trainer<E> {
    pub generator: Generator<E>,
    pub discriminator: Discriminator<E>,
    pub adam_g: AdamState<E>,
    pub adam_d: AdamState<E>,
    pub weights: LossWeights,
    pub schedule: Schedule,
    iteration: u64,
}

fn scale_tap_grads<E: Scalar>(grads: &mut TapGrads<E>, factor: f64) {
    for g in grads.iter_mut().flatten() {
        g.scale(E::from_f64(factor));
    }
}

impl<E: Scalar> Trainer<E> {
    pub fn new(
        generator: Generator<E>,
        discriminator: Discriminator<E>,
        adam: AdamConfig,
        weights: LossWeights,
        schedule: Schedule,
    ) -> Result<Self> {
        weights.validate()?;
        schedule.validate()?;
        Ok(Trainer {
            generator,
            discriminator,
            adam_g: AdamState::new(adam)?,
            adam_d: AdamState::new(adam)?,
            weights,
            schedule,
            iteration: 0,
        })
    }

    /// Completed training iterations.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Restores the iteration counter (checkpoint loading).
    pub fn set_iteration(&mut self, iteration: u64) {
        self.iteration = iteration;
    }

    /// One discriminator update on the batch: minimizes
    /// `l_d = -l_a + lambda_d * l_p` with the generator frozen.
    /// Returns the pre-update `(l_a, l_p)` values.
    pub fn d_step(&mut self, z: &Tensor<E>, y: &Tensor<E>, lr: f64) -> Result<(f64, f64)> {
        let fake = self.generator.forward(z)?;
        let (real_logits, real_taps, real_ctx) = self.discriminator.forward_train(z, y)?;
        let (fake_logits, fake_taps, fake_ctx) = self.discriminator.forward_train(z, &fake)?;

        let l_a = adversarial_loss(&real_logits, &fake_logits)?;
        let l_p = perceptual_loss(&real_taps, &fake_taps)?;
        let l_d = discriminator_objective(l_a, l_p, &self.weights);
        if !l_d.is_finite() {
            return Err(Error::Divergence {
                iteration: self.iteration + 1,
                detail: format!("discriminator objective became {l_d}"),
            });
        }

        // l_d = -l_a + lambda_d * l_p, so the logit gradients flip sign and
        // the tap gradients pick up lambda_d. The perceptual term reaches
        // the parameters through BOTH branches.
        let (mut g_real, mut g_fake) = adversarial_loss_backward(&real_logits, &fake_logits)?;
        g_real.scale(E::from_f64(-1.0));
        g_fake.scale(E::from_f64(-1.0));
        let (mut taps_real_g, mut taps_fake_g) =
            perceptual_loss_backward(&real_taps, &fake_taps)?;
        scale_tap_grads(&mut taps_real_g, self.weights.lambda_d);
        scale_tap_grads(&mut taps_fake_g, self.weights.lambda_d);

        self.discriminator.zero_grads();
        self.discriminator
            .backward(&real_ctx, &g_real, Some(&taps_real_g), Wants::PARAMS_ONLY)?;
        self.discriminator
            .backward(&fake_ctx, &g_fake, Some(&taps_fake_g), Wants::PARAMS_ONLY)?;

        let discriminator = &mut self.discriminator;
        self.adam_d.step(lr, |f| discriminator.visit_params_mut(f))?;
        Ok((l_a, l_p))
    }

    /// One generator update on the batch: minimizes
    /// `l_g = l_a + lambda1 * l_p + lambda2 * l_y` with the discriminator
    /// frozen (its parameters receive no update; gradients flow through its
    /// activations into the generator output).
    pub fn g_step(&mut self, z: &Tensor<E>, y: &Tensor<E>, lr: f64) -> Result<LossReport> {
        let (fake, gen_ctx) = self.generator.forward_train(z)?;
        let (real_logits, real_taps) = self.discriminator.forward(z, y)?;
        let (fake_logits, fake_taps, fake_ctx) = self.discriminator.forward_train(z, &fake)?;

        let l_a = adversarial_loss(&real_logits, &fake_logits)?;
        let l_p = perceptual_loss(&real_taps, &fake_taps)?;
        let l_y = content_loss(y, &fake, self.weights.content_kind, self.weights.charbonnier_eps)?;
        let report = LossReport::from_parts(l_a, l_p, l_y, &self.weights);
        if !report.is_finite() {
            return Err(Error::Divergence {
                iteration: self.iteration + 1,
                detail: format!(
                    "generator-step losses became non-finite: l_a={}, l_y={}, l_p={}",
                    report.l_a, report.l_y, report.l_p
                ),
            });
        }

        // d l_g / d fake_logits is the adversarial fake-side gradient; the
        // real branch carries no generator dependence.
        let (_, g_fake_logits) = adversarial_loss_backward(&real_logits, &fake_logits)?;
        let (_, mut taps_fake_g) = perceptual_loss_backward(&real_taps, &fake_taps)?;
        scale_tap_grads(&mut taps_fake_g, self.weights.lambda1);

        // Input-only backward through the frozen discriminator yields
        // d(l_a + lambda1 l_p)/d fake.
        let (_, mut grad_fake) = self
            .discriminator
            .backward(&fake_ctx, &g_fake_logits, Some(&taps_fake_g), Wants::INPUT_ONLY)?
            .expect("input gradient requested");

        // Direct content-loss path.
        let mut g_content = content_loss_backward(
            y,
            &fake,
            self.weights.content_kind,
            self.weights.charbonnier_eps,
        )?;
        g_content.scale(E::from_f64(self.weights.lambda2));
        grad_fake.add_assign(&g_content)?;

        self.generator.zero_grads();
        self.generator.backward(&gen_ctx, &grad_fake, false)?;

        let generator = &mut self.generator;
        self.adam_g.step(lr, |f| generator.visit_params_mut(f))?;
        Ok(report)
    }

    /// One full training iteration: a D step, then a G step on a fresh
    /// forward pass against the updated discriminator. Returns the G-step
    /// loss report. Non-finite losses abort with the iteration index before
    /// any parameter update (divergence guard, checked inside each step).
    pub fn train_iteration(&mut self, z: &Tensor<E>, y: &Tensor<E>) -> Result<LossReport> {
        let lr = self.schedule.lr(self.iteration);
        self.d_step(z, y, lr)?;
        let report = self.g_step(z, y, lr)?;
        self.iteration += 1;
        Ok(report)
    }
}

/// Finite-difference checks of the full objectives through both networks:
/// for a tiny model, d l_g / d theta_G and d l_d / d theta_D are probed at
/// 20 sampled parameter coordinates each and compared against the analytic
/// backward passes, at the model tolerance.
pub fn end_to_end_checks(seed: u64) -> Vec<crate::gradcheck::CheckReport> {
    use crate::gradcheck::{rel_err, CheckReport, MODEL_FD_STEP, MODEL_TOLERANCE};
    use crate::model::{DiscriminatorPlan, GeneratorPlan, InitKind};
    use crate::tensor::{rng_uniform, RngStream};

    let g_plan = GeneratorPlan {
        n_half: 2,
        base_channels: 4,
        in_channels: 3,
        out_channels: 3,
        leaky_slope: crate::ops::LEAKY_SLOPE,
        norm_eps: crate::ops::INSTANCE_NORM_EPS,
        init: InitKind::XavierUniform,
    };
    let d_plan = DiscriminatorPlan {
        layers: 2,
        base_channels: 4,
        conditional: true,
        image_channels: 3,
        leaky_slope: crate::ops::LEAKY_SLOPE,
        init: InitKind::XavierUniform,
    };
    let weights = LossWeights::default();

    let mut stream = RngStream::new(seed ^ 0xE2E);
    let generator = Generator::<f64>::build(g_plan, &mut stream).unwrap();
    let discriminator = Discriminator::<f64>::build(d_plan, &mut stream).unwrap();
    let z = rng_uniform::<f64>(&mut stream, &[1, 3, 16, 16], 0.0, 1.0).unwrap();
    let y = rng_uniform::<f64>(&mut stream, &[1, 3, 16, 16], 0.0, 1.0).unwrap();

    // Scalar objectives as pure functions of the current parameters.
    let eval_l_g = |generator: &Generator<f64>, discriminator: &Discriminator<f64>| -> f64 {
        let fake = generator.forward(&z).unwrap();
        let (real_logits, real_taps) = discriminator.forward(&z, &y).unwrap();
        let (fake_logits, fake_taps) = discriminator.forward(&z, &fake).unwrap();
        let l_a = adversarial_loss(&real_logits, &fake_logits).unwrap();
        let l_p = perceptual_loss(&real_taps, &fake_taps).unwrap();
        let l_y = content_loss(&y, &fake, weights.content_kind, weights.charbonnier_eps).unwrap();
        generator_objective(l_a, l_p, l_y, &weights)
    };
    let eval_l_d = |generator: &Generator<f64>, discriminator: &Discriminator<f64>| -> f64 {
        let fake = generator.forward(&z).unwrap();
        let (real_logits, real_taps) = discriminator.forward(&z, &y).unwrap();
        let (fake_logits, fake_taps) = discriminator.forward(&z, &fake).unwrap();
        let l_a = adversarial_loss(&real_logits, &fake_logits).unwrap();
        let l_p = perceptual_loss(&real_taps, &fake_taps).unwrap();
        discriminator_objective(l_a, l_p, &weights)
    };

    // Analytic gradients via the same backward paths the trainer runs,
    // minus the optimizer updates.
    let mut g_work = generator.clone();
    let mut d_work = discriminator.clone();

    // Generator side.
    let (fake, gen_ctx) = g_work.forward_train(&z).unwrap();
    let (real_logits, real_taps) = d_work.forward(&z, &y).unwrap();
    let (fake_logits, fake_taps, fake_ctx) = d_work.forward_train(&z, &fake).unwrap();
    let (_, g_fake_logits) = adversarial_loss_backward(&real_logits, &fake_logits).unwrap();
    let (_, mut taps_fake_g) = perceptual_loss_backward(&real_taps, &fake_taps).unwrap();
    scale_tap_grads(&mut taps_fake_g, weights.lambda1);
    let (_, mut grad_fake) = d_work
        .backward(&fake_ctx, &g_fake_logits, Some(&taps_fake_g), Wants::INPUT_ONLY)
        .unwrap()
        .expect("input gradient");
    let mut g_content =
        content_loss_backward(&y, &fake, weights.content_kind, weights.charbonnier_eps).unwrap();
    g_content.scale(weights.lambda2);
    grad_fake.add_assign(&g_content).unwrap();
    g_work.zero_grads();
    g_work.backward(&gen_ctx, &grad_fake, false).unwrap();
    let mut g_grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    g_work.visit_params(&mut |name, t| {
        g_grads.insert(name.to_string(), t.grad().unwrap().to_vec());
    });

    // Discriminator side.
    let (real_logits, real_taps, real_ctx) = d_work.forward_train(&z, &y).unwrap();
    let (fake_logits, fake_taps, fake_ctx) = d_work.forward_train(&z, &fake).unwrap();
    let (mut g_real, mut g_fake) =
        adversarial_loss_backward(&real_logits, &fake_logits).unwrap();
    g_real.scale(-1.0);
    g_fake.scale(-1.0);
    let (mut taps_real_g, mut taps_fake_g) =
        perceptual_loss_backward(&real_taps, &fake_taps).unwrap();
    scale_tap_grads(&mut taps_real_g, weights.lambda_d);
    scale_tap_grads(&mut taps_fake_g, weights.lambda_d);
    d_work.zero_grads();
    d_work
        .backward(&real_ctx, &g_real, Some(&taps_real_g), Wants::PARAMS_ONLY)
        .unwrap();
    d_work
        .backward(&fake_ctx, &g_fake, Some(&taps_fake_g), Wants::PARAMS_ONLY)
        .unwrap();
    let mut d_grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    d_work.visit_params(&mut |name, t| {
        d_grads.insert(name.to_string(), t.grad().unwrap().to_vec());
    });

    // Probe 20 sampled coordinates per objective with central differences.
    let mut probe_stream = RngStream::new(seed ^ 0xFD);
    let mut probe = |which: &str,
                     grads: &BTreeMap<String, Vec<f64>>,
                     eval: &dyn Fn(&Generator<f64>, &Discriminator<f64>) -> f64,
                     on_generator: bool|
     -> CheckReport {
        let names: Vec<&String> = grads.keys().collect();
        let mut max_err = 0.0f64;
        for _ in 0..20 {
            let name = names[probe_stream.next_below(names.len())].clone();
            let idx = probe_stream.next_below(grads[&name].len());
            let mut g_pert = generator.clone();
            let mut d_pert = discriminator.clone();
            let bump = |model_g: &mut Generator<f64>,
                        model_d: &mut Discriminator<f64>,
                        delta: f64| {
                let apply = &mut |n: &str, t: &mut Tensor<f64>| {
                    if n == name {
                        t.data_mut()[idx] += delta;
                    }
                };
                if on_generator {
                    model_g.visit_params_mut(apply);
                } else {
                    model_d.visit_params_mut(apply);
                }
            };
            bump(&mut g_pert, &mut d_pert, MODEL_FD_STEP);
            let fp = eval(&g_pert, &d_pert);
            bump(&mut g_pert, &mut d_pert, -2.0 * MODEL_FD_STEP);
            let fm = eval(&g_pert, &d_pert);
            let fd = (fp - fm) / (2.0 * MODEL_FD_STEP);
            let analytic = grads[&name][idx];
            max_err = max_err.max(rel_err(fd, analytic));
        }
        CheckReport {
            name: which.to_string(),
            max_rel_err: max_err,
            threshold: MODEL_TOLERANCE,
            probes: 20,
        }
    };

    vec![
        probe("end_to_end/l_g_wrt_generator", &g_grads, &eval_l_g, true),
        probe(
            "end_to_end/l_d_wrt_discriminator",
            &d_grads,
            &eval_l_d,
            false,
        ),
    ]
}
