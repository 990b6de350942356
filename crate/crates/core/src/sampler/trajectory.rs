use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{cfg_combine, Ddpm};
use crate::error::{Error, Result};
use crate::predictor::Lgp;
use crate::tensor::{Tape, Tensor};

use super::guidance::{apply_guidance, guidance_gradient, GuidanceTarget};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleRunConfig {
    /// Must match the denoiser's schedule length.
    pub steps: usize,
    pub cfg_scale: f64,
    pub seed: u64,
    pub class: Option<usize>,
    pub stochastic: bool,
    pub height: usize,
    pub width: usize,
    /// Clamp the clean-sample estimate to the model range `[-1, 1]` before
    /// taking the posterior mean.
    pub clip_x0: bool,
}

impl Default for SampleRunConfig {
    fn default() -> Self {
        Self {
            steps: 250,
            cfg_scale: 8.0,
            seed: 0,
            class: None,
            stochastic: true,
            height: 32,
            width: 32,
            clip_x0: true,
        }
    }
}

impl SampleRunConfig {
    pub fn validate(&self, ddpm: &Ddpm) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::Config(format!("sampling needs at least 2 steps, got {}", self.steps)));
        }
        if self.steps != ddpm.schedule.steps() {
            return Err(Error::Config(format!(
                "run asks for {} steps but the denoiser was trained with {}",
                self.steps,
                ddpm.schedule.steps()
            )));
        }
        if !self.cfg_scale.is_finite() {
            return Err(Error::Config("cfg_scale must be finite".into()));
        }
        Ok(())
    }
}

/// One row of the per-step trajectory log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub t_norm: f64,
    pub guidance_loss: Option<f64>,
    pub step_norm: f64,
    pub grad_norm: Option<f64>,
    pub alpha: Option<f64>,
}

pub const STEP_LOG_HEADER: [&str; 6] = ["step", "t_norm", "guidance_loss", "step_norm", "grad_norm", "alpha"];

pub fn write_step_log(path: &Path, log: &[StepLog]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(STEP_LOG_HEADER)?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SampleOutput {
    /// Final sample `[C, H, W]` in the denoiser's space.
    pub image: Tensor<f32>,
    pub log: Vec<StepLog>,
}

/// A reverse-diffusion run that can be advanced one step at a time.
#[derive(Clone, Debug)]
pub struct Trajectory<'a> {
    ddpm: &'a Ddpm,
    guide: Option<(&'a Lgp<f32>, &'a GuidanceTarget)>,
    run: SampleRunConfig,
    rng: ChaCha8Rng,
    z: Tensor<f32>,
    t: usize,
    log: Vec<StepLog>,
}

impl<'a> Trajectory<'a> {
    /// Draws `z_T` from the run's seed.
    pub fn new(
        ddpm: &'a Ddpm,
        guide: Option<(&'a Lgp<f32>, &'a GuidanceTarget)>,
        run: &SampleRunConfig,
    ) -> Result<Self> {
        run.validate(ddpm)?;
        if let Some((_, target)) = guide {
            target.validate()?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
        let c = ddpm.unet.config().in_channels;
        let z = Tensor::randn([1, c, run.height, run.width], &mut rng);
        Ok(Self {
            ddpm,
            guide,
            run: run.clone(),
            rng,
            z,
            t: run.steps,
            log: Vec::with_capacity(run.steps),
        })
    }

    /// Step index the next call to [`step`](Self::step) starts from; 0 once finished.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn z(&self) -> &Tensor<f32> {
        &self.z
    }

    pub fn log(&self) -> &[StepLog] {
        &self.log
    }

    /// The same state, continuing without guidance.
    pub fn without_guidance(&self) -> Self {
        Self {
            guide: None,
            ..self.clone()
        }
    }

    fn eps_pass(&self, cond: Option<usize>) -> Result<Tensor<f32>> {
        let tape = Tape::new();
        let z = tape.constant(self.z.clone());
        let out = self.ddpm.unet.forward_frozen(&tape, z, &[self.t], &[cond], false)?;
        Ok(out.eps.to_tensor())
    }

    /// Advances from `z_t` to `z_{t−1}`.
    pub fn step(&mut self) -> Result<()> {
        let t = self.t;
        if t == 0 {
            return Err(Error::Usage("trajectory already finished".into()));
        }
        let guide = self
            .guide
            .filter(|(_, target)| target.beta > 0.0 && target.active(t, self.run.steps));
        let cond = self.run.class;
        let (eps_cond, guidance) = match guide {
            Some((lgp, target)) => {
                let eval = guidance_gradient(self.ddpm, lgp, &self.z, t, cond, target)?;
                (eval.eps_cond.clone(), Some((eval, target.beta)))
            }
            None => (self.eps_pass(cond)?, None),
        };
        let eps = if self.run.cfg_scale == 1.0 {
            eps_cond
        } else {
            let eps_uncond = self.eps_pass(None)?;
            cfg_combine(&eps_cond, &eps_uncond, self.run.cfg_scale)?
        };
        // Drawn every step so paired runs consume identical randomness.
        let noise = Tensor::randn(self.z.shape().to_vec(), &mut self.rng);
        let noise = self.run.stochastic.then_some(&noise);
        let schedule = &self.ddpm.schedule;
        let z_next = if self.run.clip_x0 {
            let x0 = schedule.predict_x0(&self.z, &eps, t)?.map(|v| v.clamp(-1.0, 1.0));
            schedule.posterior_step(&self.z, &x0, t, noise)?
        } else {
            schedule.reverse_step(&self.z, &eps, t, noise)?
        };
        let (z_next, row) = match guidance {
            Some((eval, beta)) => {
                let g = apply_guidance(&self.z, &z_next, &eval.grad, beta)?;
                let row = StepLog {
                    step: t,
                    t_norm: self.ddpm.schedule.normalized(t),
                    guidance_loss: Some(eval.loss),
                    step_norm: g.step_norm,
                    grad_norm: Some(g.grad_norm),
                    alpha: Some(g.alpha),
                };
                (g.z, row)
            }
            None => {
                let step_norm = self.z.zip_map(&z_next, |a, b| a - b)?.norm_l2();
                let row = StepLog {
                    step: t,
                    t_norm: self.ddpm.schedule.normalized(t),
                    guidance_loss: None,
                    step_norm,
                    grad_norm: None,
                    alpha: None,
                };
                (z_next, row)
            }
        };
        z_next.ensure_finite("sampler step")?;
        self.z = z_next;
        self.log.push(row);
        self.t -= 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<SampleOutput> {
        while self.t > 0 {
            self.step()?;
        }
        let s = self.z.shape()[1..].to_vec();
        Ok(SampleOutput {
            image: self.z.reshape(s)?,
            log: self.log,
        })
    }
}

/// Full reverse diffusion from `z_T`, guided when `guide` is given.
pub fn sample(
    ddpm: &Ddpm,
    guide: Option<(&Lgp<f32>, &GuidanceTarget)>,
    run: &SampleRunConfig,
) -> Result<SampleOutput> {
    Trajectory::new(ddpm, guide, run)?.finish()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Overhead {
    pub guided_ms: f64,
    pub unguided_ms: f64,
    pub ratio: f64,
}

/// Wall-clock time of one guided and one unguided run with the same seed.
pub fn measure_overhead(
    ddpm: &Ddpm,
    lgp: &Lgp<f32>,
    target: &GuidanceTarget,
    run: &SampleRunConfig,
) -> Result<Overhead> {
    let start = Instant::now();
    sample(ddpm, None, run)?;
    let unguided_ms = start.elapsed().as_secs_f64() * 1e3;
    let start = Instant::now();
    sample(ddpm, Some((lgp, target)), run)?;
    let guided_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(Overhead {
        guided_ms,
        unguided_ms,
        ratio: guided_ms / unguided_ms,
    })
}
