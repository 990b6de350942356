use super::super::{Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Per-feature running mean and variance of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(features: usize) -> Self {
        Self {
            mean: vec![T::zero(); features],
            var: vec![T::one(); features],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

pub enum BatchNormMode<'a, T> {
    /// Normalize with batch statistics and fold them into `stats` as
    /// `stats ← (1 − momentum)·stats + momentum·batch`.
    Train {
        stats: &'a mut RunningStats<T>,
        momentum: T,
    },
    /// Normalize with the frozen running statistics.
    Eval { stats: &'a RunningStats<T> },
}

fn check_affine<T: Scalar>(what: &str, t: &Tensor<T>, len: usize) -> Result<()> {
    if t.shape() != [len] {
        return Err(shape_err!("{what}: affine parameter {:?} != [{len}]", t.shape()));
    }
    Ok(())
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Group normalization of `[N, C, H, W]` with per-channel affine `gamma`, `beta`.
    pub fn group_norm(
        self,
        groups: usize,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        eps: T,
    ) -> Result<Var<'t, T>> {
        self.same_tape(&gamma)?;
        self.same_tape(&beta)?;
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        if groups == 0 || c % groups != 0 {
            return Err(shape_err!("group_norm: {c} channels not divisible into {groups} groups"));
        }
        let (gv, bv) = (gamma.value(), beta.value());
        check_affine("group_norm", &gv, c)?;
        check_affine("group_norm", &bv, c)?;
        let hw = h * w;
        let per_group = c / groups;
        let span = per_group * hw;
        let count = T::lit(span as f64);

        let mut xhat = vec![T::zero(); x.numel()];
        let mut inv_std = vec![T::zero(); n * groups];
        for (gi, (src, dst)) in x.data().chunks(span).zip(xhat.chunks_mut(span)).enumerate() {
            let mean = src.iter().fold(T::zero(), |a, &v| a + v) / count;
            let var = src.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / count;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[gi] = inv;
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - mean) * inv;
            }
        }
        let mut out = xhat.clone();
        for (plane_idx, plane) in out.chunks_mut(hw).enumerate() {
            let ch = plane_idx % c;
            let (g_, b_) = (gv.data()[ch], bv.data()[ch]);
            plane.iter_mut().for_each(|v| *v = *v * g_ + b_);
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        let shape = x.shape().to_vec();

        self.tape().record("group_norm", out, &[self, gamma, beta], |flags| {
            let (want_x, want_g, want_b) = (flags[0], flags[1], flags[2]);
            Box::new(move |grad| {
                let gd = grad.data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for (plane_idx, (gp, xp)) in gd.chunks(hw).zip(xhat.chunks(hw)).enumerate() {
                    let ch = plane_idx % c;
                    for (&gv_, &xv) in gp.iter().zip(xp) {
                        dgamma[ch] += gv_ * xv;
                        dbeta[ch] += gv_;
                    }
                }
                let gx = want_x.then(|| {
                    let mut dx = vec![T::zero(); gd.len()];
                    for gi in 0..n * groups {
                        let range = gi * span..(gi + 1) * span;
                        let first_ch = (gi % groups) * per_group;
                        let (gs, xs) = (&gd[range.clone()], &xhat[range.clone()]);
                        let dxhat = |j: usize| gs[j] * gv.data()[first_ch + j / hw];
                        let mut mean_d = T::zero();
                        let mut mean_dx = T::zero();
                        for j in 0..span {
                            let d = dxhat(j);
                            mean_d += d;
                            mean_dx += d * xs[j];
                        }
                        mean_d = mean_d / count;
                        mean_dx = mean_dx / count;
                        let inv = inv_std[gi];
                        for j in 0..span {
                            dx[range.start + j] = inv * (dxhat(j) - mean_d - xs[j] * mean_dx);
                        }
                    }
                    Tensor::new(shape.clone(), dx).expect("input shape")
                });
                vec![
                    gx,
                    want_g.then(|| Tensor::new([c], dgamma).expect("gamma")),
                    want_b.then(|| Tensor::new([c], dbeta).expect("beta")),
                ]
            })
        })
    }

    /// Batch normalization over the rows of `[M, D]` with per-feature affine.
    pub fn batch_norm(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        mode: BatchNormMode<'_, T>,
        eps: T,
    ) -> Result<Var<'t, T>> {
        self.same_tape(&gamma)?;
        self.same_tape(&beta)?;
        let x = self.value();
        let [m, d] = x.shape()[..] else {
            return Err(shape_err!("batch_norm: expected [M, D], got {:?}", x.shape()));
        };
        let (gv, bv) = (gamma.value(), beta.value());
        check_affine("batch_norm", &gv, d)?;
        check_affine("batch_norm", &bv, d)?;
        let stats_len = match &mode {
            BatchNormMode::Train { stats, .. } => stats.len(),
            BatchNormMode::Eval { stats } => stats.len(),
        };
        if stats_len != d {
            return Err(shape_err!("batch_norm: running stats for {stats_len} features, input has {d}"));
        }

        let (mean, inv_std, train) = match mode {
            BatchNormMode::Train { stats, momentum } => {
                if m == 0 {
                    return Err(shape_err!("batch_norm: empty batch in train mode"));
                }
                let count = T::lit(m as f64);
                let mut mean = vec![T::zero(); d];
                let mut var = vec![T::zero(); d];
                for row in x.data().chunks(d) {
                    for (mu, &v) in mean.iter_mut().zip(row) {
                        *mu += v;
                    }
                }
                mean.iter_mut().for_each(|v| *v = *v / count);
                for row in x.data().chunks(d) {
                    for ((s, &mu), &v) in var.iter_mut().zip(&mean).zip(row) {
                        *s += (v - mu) * (v - mu);
                    }
                }
                var.iter_mut().for_each(|v| *v = *v / count);
                let unbias = if m > 1 {
                    count / T::lit((m - 1) as f64)
                } else {
                    T::one()
                };
                let keep = T::one() - momentum;
                for j in 0..d {
                    stats.mean[j] = keep * stats.mean[j] + momentum * mean[j];
                    stats.var[j] = keep * stats.var[j] + momentum * var[j] * unbias;
                }
                let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                (mean, inv, true)
            }
            BatchNormMode::Eval { stats } => {
                if let Some(j) = stats.var.iter().position(|&v| v < T::zero() || v.is_nan()) {
                    return Err(Error::Invariant(format!(
                        "batch_norm running variance of feature {j} is {}",
                        stats.var[j]
                    )));
                }
                let inv = stats.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                (stats.mean.clone(), inv, false)
            }
        };

        let mut xhat = vec![T::zero(); m * d];
        for (dst, src) in xhat.chunks_mut(d).zip(x.data().chunks(d)) {
            for j in 0..d {
                dst[j] = (src[j] - mean[j]) * inv_std[j];
            }
        }
        let mut out = xhat.clone();
        for row in out.chunks_mut(d) {
            for j in 0..d {
                row[j] = row[j] * gv.data()[j] + bv.data()[j];
            }
        }
        let out = Tensor::new([m, d], out)?;

        self.tape().record("batch_norm", out, &[self, gamma, beta], |flags| {
            let (want_x, want_g, want_b) = (flags[0], flags[1], flags[2]);
            Box::new(move |grad| {
                let gd = grad.data();
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                for (gr, xr) in gd.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        dgamma[j] += gr[j] * xr[j];
                        dbeta[j] += gr[j];
                    }
                }
                let gx = want_x.then(|| {
                    let mut dx = vec![T::zero(); m * d];
                    if train {
                        let count = T::lit(m as f64);
                        for j in 0..d {
                            let g_ = gv.data()[j];
                            let mean_d = dbeta[j] * g_ / count;
                            let mean_dx = dgamma[j] * g_ / count;
                            for i in 0..m {
                                let k = i * d + j;
                                dx[k] = inv_std[j] * (gd[k] * g_ - mean_d - xhat[k] * mean_dx);
                            }
                        }
                    } else {
                        for i in 0..m {
                            for j in 0..d {
                                let k = i * d + j;
                                dx[k] = gd[k] * gv.data()[j] * inv_std[j];
                            }
                        }
                    }
                    Tensor::new([m, d], dx).expect("input shape")
                });
                vec![
                    gx,
                    want_g.then(|| Tensor::new([d], dgamma).expect("gamma")),
                    want_b.then(|| Tensor::new([d], dbeta).expect("beta")),
                ]
            })
        })
    }
}
