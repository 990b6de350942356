use crate::denoiser::{collect_features_var, Ddpm};
use crate::error::{shape_err, Error, Result};
use crate::predictor::{InputMode, Lgp, LossKind};
use crate::tensor::{Tape, Tensor};

/// What guidance steers toward and how hard.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceTarget {
    /// Target map `[K, H, W]` in the predictor's output space.
    pub map: Tensor<f32>,
    pub loss_kind: LossKind,
    pub start_frac: f64,
    pub stop_frac: f64,
    pub beta: f64,
}

impl GuidanceTarget {
    pub fn new(map: Tensor<f32>, loss_kind: LossKind) -> Self {
        Self {
            map,
            loss_kind,
            start_frac: 1.0,
            stop_frac: 0.5,
            beta: 1.6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.stop_frac && self.stop_frac < self.start_frac && self.start_frac <= 1.0) {
            return Err(Error::Config(format!(
                "guidance window needs 0 <= stop < start <= 1, got ({}, {})",
                self.start_frac, self.stop_frac
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("guidance scale {} must be >= 0", self.beta)));
        }
        if self.map.rank() != 3 {
            return Err(shape_err!("guidance map must be [K, H, W], got {:?}", self.map.shape()));
        }
        Ok(())
    }

    /// Whether step `t` of `steps` lies in `[stop·T, start·T]`.
    pub fn active(&self, t: usize, steps: usize) -> bool {
        let (t, total) = (t as f64, steps as f64);
        t >= self.stop_frac * total && t <= self.start_frac * total
    }
}

/// Result of one guidance evaluation at `z_t`.
#[derive(Clone, Debug)]
pub struct GuidanceEval {
    /// `∇_{z_t} L`, same shape as `z_t`.
    pub grad: Tensor<f32>,
    pub loss: f64,
    /// Conditional noise prediction from the same forward pass.
    pub eps_cond: Tensor<f32>,
}

/// Runs the conditional denoiser pass at `z_t: [1, C, H, W]`, predicts the map,
/// and differentiates the map loss with respect to `z_t` only.
pub fn guidance_gradient(
    ddpm: &Ddpm,
    lgp: &Lgp<f32>,
    z_t: &Tensor<f32>,
    t: usize,
    cond: Option<usize>,
    target: &GuidanceTarget,
) -> Result<GuidanceEval> {
    ddpm.schedule.check_step(t)?;
    let (n, _, h, w) = z_t.dims4()?;
    if n != 1 {
        return Err(shape_err!("guidance_gradient: expects a single sample, got batch {n}"));
    }
    let ms = target.map.shape();
    if ms.len() != 3 || ms[1] != h || ms[2] != w {
        return Err(shape_err!("guidance target {ms:?} does not match sample {h}x{w}"));
    }
    let tape = Tape::new();
    let z = tape.leaf(z_t.clone(), true);
    let collect = lgp.config().input_mode == InputMode::Features;
    let out = ddpm.unet.forward_frozen(&tape, z, &[t], &[cond], collect)?;
    let input = match lgp.config().input_mode {
        InputMode::Features => collect_features_var(&out.taps, h, w)?,
        InputMode::ZtBaseline => z,
    };
    let p = lgp.params().bind(&tape, false);
    let pred = lgp.predict_map(&p, input, ddpm.schedule.normalized(t))?;
    let rows = pred.nchw_to_rows()?;
    let k = ms[0];
    let target_rows = Tensor::from_fn([h * w, k], |idx| {
        let (pix, c) = (idx / k, idx % k);
        target.map.data()[c * h * w + pix]
    });
    let loss = target.loss_kind.apply(rows, &target_rows)?;
    let loss_value = loss.value().item()? as f64;
    let eps_cond = out.eps.to_tensor();
    let mut grads = tape.backward(loss)?;
    let grad = grads
        .take(z)
        .unwrap_or_else(|| Tensor::zeros(z_t.shape().to_vec()));
    Ok(GuidanceEval {
        grad,
        loss: loss_value,
        eps_cond,
    })
}

/// Gradients with a global norm below this are treated as zero.
pub const ZERO_GRAD_NORM: f64 = 1e-12;

/// Outcome of [`apply_guidance`].
#[derive(Clone, Debug)]
pub struct GuidedStep {
    pub z: Tensor<f32>,
    /// `‖z_t − z_next‖₂`.
    pub step_norm: f64,
    pub grad_norm: f64,
    /// Scale applied to the gradient; zero when guidance was a no-op.
    pub alpha: f64,
}

/// `z_next − α·grad` with `α = β·‖z_t − z_next‖₂ / ‖grad‖₂` over all elements.
pub fn apply_guidance(
    z_t: &Tensor<f32>,
    z_next: &Tensor<f32>,
    grad: &Tensor<f32>,
    beta: f64,
) -> Result<GuidedStep> {
    z_t.expect_same_shape(z_next, "apply_guidance")?;
    z_t.expect_same_shape(grad, "apply_guidance")?;
    let step_norm = z_t
        .data()
        .iter()
        .zip(z_next.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    let grad_norm = grad.norm_l2();
    if beta == 0.0 || grad_norm < ZERO_GRAD_NORM {
        return Ok(GuidedStep {
            z: z_next.clone(),
            step_norm,
            grad_norm,
            alpha: 0.0,
        });
    }
    let alpha = beta * step_norm / grad_norm;
    let z = z_next.zip_map(grad, |v, g| (v as f64 - alpha * g as f64) as f32)?;
    Ok(GuidedStep {
        z,
        step_norm,
        grad_norm,
        alpha,
    })
}
