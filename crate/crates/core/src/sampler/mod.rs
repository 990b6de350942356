//! Reverse diffusion with gradient guidance from the map predictor.

mod guidance;
mod trajectory;

pub use guidance::{apply_guidance, guidance_gradient, GuidanceEval, GuidanceTarget, GuidedStep, ZERO_GRAD_NORM};
pub use trajectory::{
    measure_overhead, sample, write_step_log, Overhead, SampleOutput, SampleRunConfig, StepLog, Trajectory,
    STEP_LOG_HEADER,
};

use crate::error::Result;
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

/// One ancestral step `z_t → z_{t−1}`; `noise` is ignored at `t = 1`.
pub fn ddpm_reverse_step(
    z_t: &Tensor<f32>,
    eps: &Tensor<f32>,
    t: usize,
    schedule: &NoiseSchedule,
    noise: Option<&Tensor<f32>>,
) -> Result<Tensor<f32>> {
    schedule.reverse_step(z_t, eps, t, noise)
}
