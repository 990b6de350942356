use super::super::{gemm, Layout, Tensor, Var};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

impl<'t, T: Scalar> Var<'t, T> {
    /// `y = x·Wᵀ + b` over the trailing dimension of `x`, with `weight: [Dout, Din]`.
    pub fn linear(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        self.same_tape(&weight)?;
        let x = self.value();
        let w = weight.value();
        let [dout, din] = w.shape()[..] else {
            return Err(shape_err!("linear: weight must be [Dout, Din], got {:?}", w.shape()));
        };
        let Some((&last, lead)) = x.shape().split_last() else {
            return Err(shape_err!("linear: rank-0 input"));
        };
        if last != din {
            return Err(shape_err!("linear: input trailing dim {last} != Din {din}"));
        }
        let rows: usize = lead.iter().product();
        let mut out = vec![T::zero(); rows * dout];
        let bias_val = match bias {
            Some(b) => {
                self.same_tape(&b)?;
                let bv = b.value();
                if bv.shape() != [dout] {
                    return Err(shape_err!("linear: bias {:?} != [{dout}]", bv.shape()));
                }
                for row in out.chunks_mut(dout) {
                    row.copy_from_slice(bv.data());
                }
                true
            }
            None => false,
        };
        gemm(rows, din, dout, x.data(), Layout::N, w.data(), Layout::T, &mut out, bias_val);
        let mut shape = lead.to_vec();
        shape.push(dout);
        let out = Tensor::new(shape, out)?;

        let mut parents = vec![self, weight];
        parents.extend(bias);
        self.tape().record("linear", out, &parents, |flags| {
            let (want_x, want_w) = (flags[0], flags[1]);
            let want_b = flags.get(2).copied().unwrap_or(false);
            let has_bias = flags.len() == 3;
            Box::new(move |g| {
                let gd = g.data();
                let gx = want_x.then(|| {
                    let mut d = vec![T::zero(); rows * din];
                    gemm(rows, dout, din, gd, Layout::N, w.data(), Layout::N, &mut d, false);
                    Tensor::new(x.shape().to_vec(), d).expect("input shape")
                });
                let gw = want_w.then(|| {
                    let mut d = vec![T::zero(); dout * din];
                    gemm(dout, rows, din, gd, Layout::T, x.data(), Layout::N, &mut d, false);
                    Tensor::new([dout, din], d).expect("weight shape")
                });
                let mut grads = vec![gx, gw];
                if has_bias {
                    grads.push(want_b.then(|| {
                        let mut sums = vec![T::zero(); dout];
                        for row in gd.chunks(dout) {
                            for (s, &v) in sums.iter_mut().zip(row) {
                                *s += v;
                            }
                        }
                        Tensor::new([dout], sums).expect("bias shape")
                    }));
                }
                grads
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::{check_multi, random};
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn identity_weight_is_identity() {
        let tape = Tape::<f32>::new();
        let x = Tensor::from_fn([2, 3, 4], |i| i as f32 - 7.0);
        let eye = Tensor::from_fn([4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        let y = tape
            .constant(x.clone())
            .linear(tape.constant(eye), Some(tape.constant(Tensor::zeros([4]))))
            .unwrap();
        assert_eq!(*y.value(), x);
    }

    #[test]
    fn wide_first_hidden_layer_is_accepted() {
        let tape = Tape::<f32>::new();
        let y = tape
            .constant(Tensor::ones([3, 512]))
            .linear(tape.constant(Tensor::zeros([256, 512])), None)
            .unwrap();
        assert_eq!(y.shape(), vec![3, 256]);
    }

    #[test]
    fn dim_mismatch_is_a_shape_error() {
        let tape = Tape::<f32>::new();
        let r = tape
            .constant(Tensor::ones([3, 5]))
            .linear(tape.constant(Tensor::zeros([2, 4])), None);
        assert!(r.is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = random([5, 4], 20);
        let w = random([3, 4], 21);
        let b = random([3], 22);
        check_multi(&[x.clone(), w.clone(), b], |v| v[0].linear(v[1], Some(v[2])));
        check_multi(&[x, w], |v| v[0].linear(v[1], None));
    }
}
