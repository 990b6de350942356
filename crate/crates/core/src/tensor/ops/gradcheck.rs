//! Central finite-difference gradient checks in f64.
//!
//! The checked function's output is contracted against a fixed random weight
//! tensor so every output element contributes a distinct coefficient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

pub const STEP: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Per input: `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`.
    pub rel_errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

pub fn random(shape: impl Into<Vec<usize>>, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(shape, &mut rng)
}

fn contract<'t>(out: Var<'t, f64>, weights: &Tensor<f64>) -> Result<Var<'t, f64>> {
    let w = out.tape().constant(weights.clone());
    out.mul(w)?.sum()
}

fn eval<F>(inputs: &[Tensor<f64>], f: &F, weights: Option<&Tensor<f64>>) -> Result<(f64, Tensor<f64>)>
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&vars)?;
    let value = out.to_tensor();
    let loss = match weights {
        Some(w) => contract(out, w)?.value().item()?,
        None => 0.0,
    };
    Ok((loss, value))
}

/// Compares tape gradients of `sum(f(inputs) ⊙ W)` against central differences
/// with step [`STEP`].
pub fn finite_difference_check<F>(inputs: &[Tensor<f64>], f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let (_, probe) = eval(inputs, &f, None)?;
    let weights = random(probe.shape().to_vec(), 0x5eed);

    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let loss = contract(f(&vars)?, &weights)?;
    let grads = tape.backward(loss)?;

    let mut rel_errors = Vec::with_capacity(inputs.len());
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape().to_vec()));
        let mut numeric = Vec::with_capacity(inputs[i].numel());
        let mut perturbed: Vec<Tensor<f64>> = inputs.to_vec();
        for j in 0..inputs[i].numel() {
            let base = inputs[i].data()[j];
            perturbed[i].data_mut()[j] = base + STEP;
            let (plus, _) = eval(&perturbed, &f, Some(&weights))?;
            perturbed[i].data_mut()[j] = base - STEP;
            let (minus, _) = eval(&perturbed, &f, Some(&weights))?;
            perturbed[i].data_mut()[j] = base;
            numeric.push((plus - minus) / (2.0 * STEP));
        }
        let numeric = Tensor::new(inputs[i].shape().to_vec(), numeric)?;
        let diff = analytic.zip_map(&numeric, |a, b| a - b)?.norm_l2();
        let scale = analytic.norm_l2().max(numeric.norm_l2());
        rel_errors.push(if scale == 0.0 { 0.0 } else { diff / scale });
    }
    Ok(GradCheckReport { rel_errors })
}

#[cfg(test)]
pub(crate) fn check_unary<F>(x: &Tensor<f64>, f: F)
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    check_multi(std::slice::from_ref(x), |vs| f(vs[0]));
}

#[cfg(test)]
pub(crate) fn check_multi<F>(inputs: &[Tensor<f64>], f: F)
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let report = finite_difference_check(inputs, f).unwrap();
    assert!(
        report.max_rel_error() < 1e-3,
        "finite-difference mismatch: {:?}",
        report.rel_errors
    );
}
