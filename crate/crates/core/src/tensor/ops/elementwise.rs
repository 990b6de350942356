use super::super::{Tensor, Var};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

fn sigmoid_tensor<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(x.shape().to_vec());
    T::sigmoid_into(x.data(), out.data_mut());
    out
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let out = a.zip_map(&b, |x, y| x + y)?;
        self.tape().record("add", out, &[self, other], |_| {
            Box::new(move |g| vec![Some(g.clone()), Some(g.clone())])
        })
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let out = a.zip_map(&b, |x, y| x - y)?;
        self.tape().record("sub", out, &[self, other], |_| {
            Box::new(move |g| vec![Some(g.clone()), Some(g.map(|v| -v))])
        })
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let out = a.zip_map(&b, |x, y| x * y)?;
        self.tape().record("mul", out, &[self, other], |flags| {
            let (wa, wb) = (flags[0], flags[1]);
            Box::new(move |g| {
                vec![
                    wa.then(|| g.zip_map(&b, |gv, bv| gv * bv).expect("same shape")),
                    wb.then(|| g.zip_map(&a, |gv, av| gv * av).expect("same shape")),
                ]
            })
        })
    }

    pub fn scale(self, s: T) -> Result<Var<'t, T>> {
        let out = self.value().map(|v| v * s);
        self.tape()
            .record("scale", out, &[self], |_| Box::new(move |g| vec![Some(g.map(|v| v * s))]))
    }

    pub fn add_scalar(self, s: T) -> Result<Var<'t, T>> {
        let out = self.value().map(|v| v + s);
        self.tape()
            .record("add_scalar", out, &[self], |_| Box::new(move |g| vec![Some(g.clone())]))
    }

    pub fn relu(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let out = x.map(|v| v.max(T::zero()));
        self.tape().record("relu", out, &[self], |_| {
            // Subgradient 0 at the kink.
            Box::new(move |g| {
                vec![Some(
                    g.zip_map(&x, |gv, xv| if xv > T::zero() { gv } else { T::zero() })
                        .expect("same shape"),
                )]
            })
        })
    }

    pub fn silu(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let s = sigmoid_tensor(&x);
        let out = s.zip_map(&x, |sv, xv| xv * sv)?;
        self.tape().record("silu", out, &[self], |_| {
            Box::new(move |g| {
                let mut d = sigmoid_tensor(&x);
                for ((dv, &gv), &xv) in d.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                    *dv = gv * *dv * (T::one() + xv * (T::one() - *dv));
                }
                vec![Some(d)]
            })
        })
    }

    pub fn sigmoid(self) -> Result<Var<'t, T>> {
        let out = sigmoid_tensor(&self.value());
        let y = out.clone();
        self.tape().record("sigmoid", out, &[self], |_| {
            Box::new(move |g| {
                vec![Some(
                    g.zip_map(&y, |gv, yv| gv * yv * (T::one() - yv))
                        .expect("same shape"),
                )]
            })
        })
    }

    pub fn square(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let out = x.map(|v| v * v);
        self.tape().record("square", out, &[self], |_| {
            Box::new(move |g| {
                vec![Some(
                    g.zip_map(&x, |gv, xv| gv * (xv + xv)).expect("same shape"),
                )]
            })
        })
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let total = x.data().iter().fold(T::zero(), |acc, &v| acc + v);
        self.tape().record("sum", Tensor::scalar(total), &[self], |_| {
            Box::new(move |g| vec![Some(Tensor::full(shape, g.data()[0]))])
        })
    }

    /// Mean of all elements as a rank-0 tensor.
    pub fn mean(self) -> Result<Var<'t, T>> {
        let n = self.value().numel().max(1);
        self.sum()?.scale(T::one() / T::lit(n as f64))
    }

    /// `x[n, c, h, w] + b[n, c]`, broadcasting `b` over the spatial dims.
    pub fn add_per_channel(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&bias)?;
        let x = self.value();
        let b = bias.value();
        let (n, c, h, w) = x.dims4()?;
        if b.shape() != [n, c] {
            return Err(shape_err!(
                "add_per_channel: bias {:?} does not match [{n}, {c}]",
                b.shape()
            ));
        }
        let hw = h * w;
        let mut out = (*x).clone();
        for (plane, &bv) in out.data_mut().chunks_mut(hw).zip(b.data()) {
            plane.iter_mut().for_each(|v| *v += bv);
        }
        self.tape().record("add_per_channel", out, &[self, bias], |flags| {
            let wb = flags[1];
            Box::new(move |g| {
                let gb = wb.then(|| {
                    let sums = g
                        .data()
                        .chunks(hw)
                        .map(|plane| plane.iter().fold(T::zero(), |a, &v| a + v))
                        .collect();
                    Tensor::new([n, c], sums).expect("bias shape")
                });
                vec![Some(g.clone()), gb]
            })
        })
    }
}
