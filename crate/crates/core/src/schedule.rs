//! Variance-preserving noise schedules.
//!
//! Index `t` runs over `0..=T`; `t = 0` is the clean sample. The noised sample
//! is `z_t = α_t·z₀ + μ_t·ξ` with `α_t = √ᾱ_t` and `μ_t = √(1 − ᾱ_t)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Per-step variances linear from 1e-4 to 2e-2.
    Linear,
    /// Squared-cosine `ᾱ` profile with offset 0.008.
    Cosine,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "cosine" => Ok(Self::Cosine),
            _ => Err(Error::Config(format!("unknown schedule kind `{s}`"))),
        }
    }
}

const LINEAR_BETA_START: f64 = 1e-4;
const LINEAR_BETA_END: f64 = 2e-2;
const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    /// `beta[t - 1]` is the variance of step `t`.
    beta: Vec<f64>,
    /// `alpha_bar[t]` for `t` in `0..=T`.
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(steps: usize, kind: ScheduleKind) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Config(format!("schedule needs T >= 2, got {steps}")));
        }
        let beta: Vec<f64> = match kind {
            ScheduleKind::Linear => (0..steps)
                .map(|i| {
                    LINEAR_BETA_START
                        + (LINEAR_BETA_END - LINEAR_BETA_START) * i as f64 / (steps - 1) as f64
                })
                .collect(),
            ScheduleKind::Cosine => {
                let f = |t: usize| {
                    let x = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                    (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
                };
                (1..=steps)
                    .map(|t| (1.0 - f(t) / f(t - 1)).clamp(1e-8, MAX_BETA))
                    .collect()
            }
        };
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        for b in &beta {
            let prev = *alpha_bar.last().expect("non-empty");
            alpha_bar.push(prev * (1.0 - b));
        }
        Ok(Self {
            kind,
            beta,
            alpha_bar,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Signal scale `α_t`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha_bar[t].sqrt()
    }

    /// Noise scale `μ_t`.
    pub fn mu(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }

    /// Variance of step `t` (`1 ≤ t ≤ T`).
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Range(format!("step {t} outside [1, {}]", self.steps())));
        }
        Ok(())
    }

    /// `t / T`.
    pub fn normalized(&self, t: usize) -> f64 {
        t as f64 / self.steps() as f64
    }

    /// The step index nearest to a normalized time, `round(t_norm·T)`, kept in `[1, T]`.
    pub fn index_of(&self, t_norm: f64) -> usize {
        ((t_norm * self.steps() as f64).round() as usize).clamp(1, self.steps())
    }

    /// `α_t·z₀ + μ_t·ξ`.
    pub fn noise_image<T: Scalar>(&self, z0: &Tensor<T>, t: usize, xi: &Tensor<T>) -> Result<Tensor<T>> {
        if t > self.steps() {
            return Err(Error::Range(format!("step {t} outside [0, {}]", self.steps())));
        }
        if t == 0 {
            z0.expect_same_shape(xi, "noise_image")?;
            return Ok(z0.clone());
        }
        let (a, m) = (T::lit(self.alpha(t)), T::lit(self.mu(t)));
        z0.zip_map(xi, |x, n| a * x + m * n)
    }

    /// Noises a batch `[N, ...]`, image `n` at step `steps[n]`.
    pub fn noise_batch<T: Scalar>(&self, z0: &Tensor<T>, steps: &[usize], xi: &Tensor<T>) -> Result<Tensor<T>> {
        z0.expect_same_shape(xi, "noise_batch")?;
        let n = z0.shape().first().copied().unwrap_or(0);
        if steps.len() != n {
            return Err(Error::Shape(format!("noise_batch: {} steps for {n} images", steps.len())));
        }
        let per = if n == 0 { 0 } else { z0.numel() / n };
        let mut out = Vec::with_capacity(z0.numel());
        for (b, &t) in steps.iter().enumerate() {
            if t > self.steps() {
                return Err(Error::Range(format!("step {t} outside [0, {}]", self.steps())));
            }
            let (a, m) = (T::lit(self.alpha(t)), T::lit(self.mu(t)));
            let range = b * per..(b + 1) * per;
            out.extend(z0.data()[range.clone()].iter().zip(&xi.data()[range]).map(|(&x, &e)| a * x + m * e));
        }
        Tensor::new(z0.shape().to_vec(), out)
    }

    /// A step drawn uniformly from `1..=T`.
    pub fn sample_time<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(1..=self.steps())
    }

    /// Clean-sample estimate `(z_t − μ_t·ε) / α_t`.
    pub fn predict_x0<T: Scalar>(&self, z_t: &Tensor<T>, eps: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
        self.check_step(t)?;
        let (inv_a, m) = (T::lit(1.0 / self.alpha(t)), T::lit(self.mu(t)));
        z_t.zip_map(eps, |z, e| inv_a * (z - m * e))
    }

    /// Mean of `q(z_{t−1} | z_t, z₀)` plus `σ_t·noise`, `σ_t² = β_t`. No noise
    /// is added at `t = 1`.
    pub fn posterior_step<T: Scalar>(
        &self,
        z_t: &Tensor<T>,
        x0: &Tensor<T>,
        t: usize,
        noise: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>> {
        self.check_step(t)?;
        let (beta, ab, ab_prev) = (self.beta(t), self.alpha_bar(t), self.alpha_bar(t - 1));
        let c0 = T::lit(ab_prev.sqrt() * beta / (1.0 - ab));
        let ct = T::lit((1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab));
        let mut out = x0.zip_map(z_t, |x, z| c0 * x + ct * z)?;
        if let (Some(noise), true) = (noise, t > 1) {
            let sigma = T::lit(beta.sqrt());
            out = out.zip_map(noise, |m, n| m + sigma * n)?;
        }
        Ok(out)
    }

    /// Posterior mean of `z_{t−1}` given `z_t` and the predicted noise, plus
    /// `σ_t·noise` with `σ_t² = β_t`. No noise is added at `t = 1`.
    pub fn reverse_step<T: Scalar>(
        &self,
        z_t: &Tensor<T>,
        eps: &Tensor<T>,
        t: usize,
        noise: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>> {
        self.check_step(t)?;
        let beta = self.beta(t);
        let inv_sqrt_alpha = T::lit(1.0 / (1.0 - beta).sqrt());
        let eps_coef = T::lit(beta / self.mu(t));
        let mut out = z_t.zip_map(eps, |z, e| inv_sqrt_alpha * (z - eps_coef * e))?;
        if let (Some(noise), true) = (noise, t > 1) {
            let sigma = T::lit(beta.sqrt());
            out = out.zip_map(noise, |m, n| m + sigma * n)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_tiny_step_counts() {
        assert!(matches!(NoiseSchedule::new(1, ScheduleKind::Linear), Err(Error::Config(_))));
        assert!(NoiseSchedule::new(2, ScheduleKind::Cosine).is_ok());
    }

    #[test]
    fn clean_endpoint_and_invariants() {
        for kind in [ScheduleKind::Linear, ScheduleKind::Cosine] {
            for steps in [2, 10, 250, 1000] {
                let s = NoiseSchedule::new(steps, kind).unwrap();
                assert_eq!(s.alpha(0), 1.0);
                assert_eq!(s.mu(0), 0.0);
                for t in 1..=steps {
                    assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
                    assert!(s.mu(t) > s.mu(t - 1));
                    assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
                    let a = s.alpha(t) as f32;
                    let m = s.mu(t) as f32;
                    assert!((a * a + m * m - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn linear_thousand_steps_is_fully_noised() {
        // Direct product of (1 - beta) over the linear ramp.
        let steps = 1000;
        let mut prod = 1.0_f64;
        for i in 0..steps {
            prod *= 1.0 - (1e-4 + (2e-2 - 1e-4) * i as f64 / (steps - 1) as f64);
        }
        let s = NoiseSchedule::new(steps, ScheduleKind::Linear).unwrap();
        assert!(prod < 1e-4);
        assert!((s.alpha_bar(steps) - prod).abs() < 1e-15);
    }

    #[test]
    fn noise_image_edge_cases() {
        let s = NoiseSchedule::new(250, ScheduleKind::Cosine).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z0 = Tensor::<f32>::randn([1, 4, 4], &mut rng);
        let xi = Tensor::<f32>::randn([1, 4, 4], &mut rng);
        assert_eq!(s.noise_image(&z0, 0, &xi).unwrap(), z0);
        let zero = Tensor::zeros([1, 4, 4]);
        let noised = s.noise_image(&zero, 100, &xi).unwrap();
        let m = s.mu(100) as f32;
        for (a, b) in noised.data().iter().zip(xi.data()) {
            assert!((a - m * b).abs() < 1e-6);
        }
        assert!(matches!(s.noise_image(&z0, 251, &xi), Err(Error::Range(_))));
    }

    #[test]
    fn sample_time_is_in_range_and_reproducible() {
        let s = NoiseSchedule::new(50, ScheduleKind::Linear).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..1000).map(|_| s.sample_time(&mut rng)).collect::<Vec<_>>()
        };
        let a = draw(3);
        assert_eq!(a, draw(3));
        assert!(a.iter().all(|&t| (1..=50).contains(&t)));
    }

    #[test]
    fn last_step_adds_no_noise() {
        let s = NoiseSchedule::new(10, ScheduleKind::Cosine).unwrap();
        let z = Tensor::<f64>::full([3], 0.3);
        let e = Tensor::<f64>::full([3], 0.1);
        let n = Tensor::<f64>::full([3], 5.0);
        assert_eq!(
            s.reverse_step(&z, &e, 1, Some(&n)).unwrap(),
            s.reverse_step(&z, &e, 1, None).unwrap()
        );
        assert_ne!(
            s.reverse_step(&z, &e, 2, Some(&n)).unwrap(),
            s.reverse_step(&z, &e, 2, None).unwrap()
        );
    }
}
