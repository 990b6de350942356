use super::super::{Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Class targets for [`Var::reduce_ce`].
#[derive(Clone, Debug)]
pub enum CeTarget<T> {
    /// One class index per row.
    Hard(Vec<usize>),
    /// A probability distribution per row, `[M, K]`.
    Soft(Tensor<T>),
}

fn log_softmax_row<T: Scalar>(row: &[T], out: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().fold(T::zero(), |a, &v| a + (v - max).exp()).ln() + max;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Mean of `(self − target)²` over all elements.
    pub fn reduce_sq_err(self, target: Var<'t, T>) -> Result<Var<'t, T>> {
        self.sub(target)?.square()?.mean()
    }

    /// Mean binary cross-entropy between `sigmoid(self)` and `targets ∈ [0, 1]`.
    pub fn reduce_bce(self, targets: &Tensor<T>) -> Result<Var<'t, T>> {
        let x = self.value();
        x.expect_same_shape(targets, "reduce_bce")?;
        if let Some(bad) = targets.data().iter().find(|&&y| !(y >= T::zero() && y <= T::one())) {
            return Err(Error::Domain(format!("bce target {bad} outside [0, 1]")));
        }
        let count = T::lit(x.numel().max(1) as f64);
        let total = x
            .data()
            .iter()
            .zip(targets.data())
            .fold(T::zero(), |acc, (&v, &y)| {
                acc + v.max(T::zero()) - v * y + (T::one() + (-v.abs()).exp()).ln()
            });
        let targets = targets.clone();
        self.tape()
            .record("reduce_bce", Tensor::scalar(total / count), &[self], |_| {
                Box::new(move |g| {
                    let scale = g.data()[0] / count;
                    let gx = x
                        .zip_map(&targets, |v, y| {
                            let s = if v >= T::zero() {
                                T::one() / (T::one() + (-v).exp())
                            } else {
                                let e = v.exp();
                                e / (T::one() + e)
                            };
                            (s - y) * scale
                        })
                        .expect("same shape");
                    vec![Some(gx)]
                })
            })
    }

    /// Mean over rows of the cross-entropy between `softmax(self)` (`[M, K]`
    /// logits) and `target`.
    pub fn reduce_ce(self, target: &CeTarget<T>) -> Result<Var<'t, T>> {
        let x = self.value();
        let [m, k] = x.shape()[..] else {
            return Err(shape_err!("reduce_ce: logits must be [M, K], got {:?}", x.shape()));
        };
        let probs: Tensor<T> = match target {
            CeTarget::Hard(labels) => {
                if labels.len() != m {
                    return Err(shape_err!("reduce_ce: {} labels for {m} rows", labels.len()));
                }
                if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
                    return Err(Error::Domain(format!("class index {bad} outside {k} classes")));
                }
                let mut p = Tensor::zeros([m, k]);
                for (i, &l) in labels.iter().enumerate() {
                    p.data_mut()[i * k + l] = T::one();
                }
                p
            }
            CeTarget::Soft(p) => {
                x.expect_same_shape(p, "reduce_ce")?;
                let tol = T::lit(1e-4);
                for row in p.data().chunks(k) {
                    let s = row.iter().fold(T::zero(), |a, &v| a + v);
                    if row.iter().any(|&v| !(v >= T::zero() && v <= T::one())) || (s - T::one()).abs() > tol {
                        return Err(Error::Domain("soft ce target rows must be distributions".into()));
                    }
                }
                p.clone()
            }
        };
        let mut logp = vec![T::zero(); m * k];
        for (src, dst) in x.data().chunks(k).zip(logp.chunks_mut(k)) {
            log_softmax_row(src, dst);
        }
        let count = T::lit(m.max(1) as f64);
        let total = logp
            .iter()
            .zip(probs.data())
            .fold(T::zero(), |acc, (&lp, &p)| acc - p * lp);
        self.tape()
            .record("reduce_ce", Tensor::scalar(total / count), &[self], |_| {
                Box::new(move |g| {
                    let scale = g.data()[0] / count;
                    let d = logp
                        .iter()
                        .zip(probs.data())
                        .map(|(&lp, &p)| (lp.exp() - p) * scale)
                        .collect();
                    vec![Some(Tensor::new([m, k], d).expect("logit shape"))]
                })
            })
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::{check_multi, check_unary, random};
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn analytic_values() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(random([3, 4], 50));
        assert_eq!(x.reduce_sq_err(x).unwrap().value().item().unwrap(), 0.0);

        let zero = tape.constant(Tensor::zeros([1]));
        let bce = zero.reduce_bce(&Tensor::full([1], 0.5)).unwrap();
        assert!((bce.value().item().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);

        let uniform = tape.constant(Tensor::zeros([3, 2]));
        let ce = uniform.reduce_ce(&CeTarget::Hard(vec![0, 1, 1])).unwrap();
        assert!((ce.value().item().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros([2]));
        assert!(matches!(
            x.reduce_bce(&Tensor::new([2], vec![0.5, 1.5]).unwrap()),
            Err(Error::Domain(_))
        ));
        let logits = tape.constant(Tensor::zeros([2, 2]));
        assert!(matches!(logits.reduce_ce(&CeTarget::Hard(vec![0, 2])), Err(Error::Domain(_))));
        let not_dist = Tensor::new([2, 2], vec![0.5, 0.6, 1.0, 0.0]).unwrap();
        assert!(matches!(logits.reduce_ce(&CeTarget::Soft(not_dist)), Err(Error::Domain(_))));
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        check_multi(&[random([3, 4], 51), random([3, 4], 52)], |v| v[0].reduce_sq_err(v[1]));
        let targets = random([3, 4], 53).map(|v| 1.0 / (1.0 + (-v).exp()));
        check_unary(&random([3, 4], 54), |v| v.reduce_bce(&targets));
        check_unary(&random([4, 3], 55), |v| v.reduce_ce(&CeTarget::Hard(vec![2, 0, 1, 1])));
        let soft = Tensor::new([2, 2], vec![0.25, 0.75, 1.0, 0.0]).unwrap();
        check_unary(&random([2, 2], 56), |v| v.reduce_ce(&CeTarget::Soft(soft.clone())));
    }
}
