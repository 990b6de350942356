use super::Tensor;
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. A missing gradient counts as zero.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Option<Tensor<T>>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(shape_err!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::lit(1.0 - cfg.beta1.powi(t));
    let c2 = T::lit(1.0 - cfg.beta2.powi(t));
    let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        if m.shape() != p.shape() {
            return Err(shape_err!("adam: state {:?} vs param {:?}", m.shape(), p.shape()));
        }
        if let Some(g) = &grads[i] {
            p.expect_same_shape(g, "adam")?;
        }
        let pd = p.data_mut();
        let (md, vd) = (m.data_mut(), v.data_mut());
        for j in 0..pd.len() {
            let g = grads[i].as_ref().map_or(T::zero(), |g| g.data()[j]);
            md[j] = b1 * md[j] + (T::one() - b1) * g;
            vd[j] = b2 * vd[j] + (T::one() - b2) * g * g;
            let mhat = md[j] / c1;
            let vhat = vd[j] / c2;
            pd[j] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut params = vec![Tensor::<f64>::full([3], 2.0)];
        let mut state = AdamState::new(&params);
        state.m[0] = Tensor::full([3], 0.0);
        let cfg = AdamConfig::default();
        adam_step(&mut params, &[Some(Tensor::zeros([3]))], &mut state, &cfg).unwrap();
        assert_eq!(params[0], Tensor::full([3], 2.0));

        state.m[0] = Tensor::full([3], 1.0);
        state.v[0] = Tensor::full([3], 1.0);
        let mut frozen = vec![Tensor::<f64>::full([3], 2.0)];
        let before = (state.m[0].data()[0], state.v[0].data()[0]);
        let _ = adam_step(&mut frozen, &[None], &mut state, &cfg);
        assert!((state.m[0].data()[0] - before.0 * 0.9).abs() < 1e-15);
        assert!((state.v[0].data()[0] - before.1 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g and v̂ = g² on the first step, so the update is lr·g/(|g| + eps).
        for g in [0.5_f64, -3.0, 1e-2] {
            let mut params = vec![Tensor::scalar(1.0)];
            let mut state = AdamState::new(&params);
            let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
            adam_step(&mut params, &[Some(Tensor::scalar(g))], &mut state, &cfg).unwrap();
            let want = 1.0 - 0.01 * g / (g.abs() + 1e-8);
            assert!((params[0].data()[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn defaults_are_conventional() {
        let cfg = AdamConfig::default();
        assert_eq!((cfg.beta1, cfg.beta2, cfg.eps), (0.9, 0.999, 1e-8));
    }
}
