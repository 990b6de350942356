use super::super::{Tensor, Var};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Source index of output position `i` when resizing `src` to `dst` samples.
#[inline]
pub fn nearest_source(i: usize, src: usize, dst: usize) -> usize {
    i * src / dst
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, T>> {
        let x = self.value();
        let old = x.shape().to_vec();
        let out = (*x).clone().reshape(shape)?;
        self.tape().record("reshape", out, &[self], |_| {
            Box::new(move |g| vec![Some(g.clone().reshape(old).expect("same numel"))])
        })
    }

    /// Nearest-neighbour resize of `[N, C, H, W]` with source index `⌊i·H/out_h⌋`.
    pub fn resize_nearest(self, out_h: usize, out_w: usize) -> Result<Var<'t, T>> {
        if out_h == 0 || out_w == 0 {
            return Err(shape_err!("resize_nearest: target {out_h}x{out_w} is empty"));
        }
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        if (h, w) == (out_h, out_w) {
            return self.tape().record("resize_nearest", (*x).clone(), &[self], |_| {
                Box::new(|g| vec![Some(g.clone())])
            });
        }
        let index: Vec<usize> = (0..out_h * out_w)
            .map(|k| {
                let (i, j) = (k / out_w, k % out_w);
                nearest_source(i, h, out_h) * w + nearest_source(j, w, out_w)
            })
            .collect();
        let mut out = Vec::with_capacity(n * c * out_h * out_w);
        for plane in x.data().chunks(h * w) {
            out.extend(index.iter().map(|&s| plane[s]));
        }
        let out = Tensor::new([n, c, out_h, out_w], out)?;
        let in_shape = x.shape().to_vec();
        self.tape().record("resize_nearest", out, &[self], |_| {
            Box::new(move |g| {
                let mut gx = vec![T::zero(); n * c * h * w];
                for (src_plane, g_plane) in gx.chunks_mut(h * w).zip(g.data().chunks(out_h * out_w)) {
                    for (&s, &gv) in index.iter().zip(g_plane) {
                        src_plane[s] += gv;
                    }
                }
                vec![Some(Tensor::new(in_shape, gx).expect("input shape"))]
            })
        })
    }

    /// Rows of `[N, C, H, W]` as `[N·H·W, C]`, row index `(n·H + i)·W + j`.
    pub fn nchw_to_rows(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        let hw = h * w;
        let mut out = vec![T::zero(); x.numel()];
        for b in 0..n {
            for ch in 0..c {
                let plane = &x.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                for (p, &v) in plane.iter().enumerate() {
                    out[(b * hw + p) * c + ch] = v;
                }
            }
        }
        let out = Tensor::new([n * hw, c], out)?;
        self.tape().record("nchw_to_rows", out, &[self], |_| {
            Box::new(move |g| vec![Some(rows_to_nchw_raw(g, n, c, h, w))])
        })
    }

    /// Inverse of [`Var::nchw_to_rows`].
    pub fn rows_to_nchw(self, n: usize, h: usize, w: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let [rows, c] = x.shape()[..] else {
            return Err(shape_err!("rows_to_nchw: expected [rows, C], got {:?}", x.shape()));
        };
        if rows != n * h * w {
            return Err(shape_err!("rows_to_nchw: {rows} rows != {n}x{h}x{w}"));
        }
        let out = rows_to_nchw_raw(&x, n, c, h, w);
        self.tape().record("rows_to_nchw", out, &[self], |_| {
            Box::new(move |g| {
                let hw = h * w;
                let mut gx = vec![T::zero(); g.numel()];
                for b in 0..n {
                    for ch in 0..c {
                        let plane = &g.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                        for (p, &v) in plane.iter().enumerate() {
                            gx[(b * hw + p) * c + ch] = v;
                        }
                    }
                }
                vec![Some(Tensor::new([n * hw, c], gx).expect("rows shape"))]
            })
        })
    }

    /// Concatenates `[M, A]` and `[M, B]` into `[M, A + B]`.
    pub fn concat_cols(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let (&[ma, da], &[mb, db]) = (a.shape(), b.shape()) else {
            return Err(shape_err!(
                "concat_cols: expected two rank-2 tensors, got {:?} and {:?}",
                a.shape(),
                b.shape()
            ));
        };
        if ma != mb {
            return Err(shape_err!("concat_cols: row counts {ma} and {mb} differ"));
        }
        let mut out = Vec::with_capacity(ma * (da + db));
        for i in 0..ma {
            out.extend_from_slice(&a.data()[i * da..(i + 1) * da]);
            out.extend_from_slice(&b.data()[i * db..(i + 1) * db]);
        }
        let out = Tensor::new([ma, da + db], out)?;
        self.tape().record("concat_cols", out, &[self, other], |_| {
            Box::new(move |g| {
                let mut ga = Vec::with_capacity(ma * da);
                let mut gb = Vec::with_capacity(ma * db);
                for row in g.data().chunks(da + db) {
                    ga.extend_from_slice(&row[..da]);
                    gb.extend_from_slice(&row[da..]);
                }
                vec![
                    Some(Tensor::new([ma, da], ga).expect("lhs")),
                    Some(Tensor::new([ma, db], gb).expect("rhs")),
                ]
            })
        })
    }

    /// Rows of a `[V, D]` table selected by `ids`, giving `[ids.len(), D]`.
    pub fn embedding(self, ids: &[usize]) -> Result<Var<'t, T>> {
        let table = self.value();
        let [v, d] = table.shape()[..] else {
            return Err(shape_err!("embedding: table must be [V, D], got {:?}", table.shape()));
        };
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(shape_err!("embedding: id {bad} outside table of {v} rows"));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&table.data()[i * d..(i + 1) * d]);
        }
        let out = Tensor::new([ids.len(), d], out)?;
        let ids = ids.to_vec();
        self.tape().record("embedding", out, &[self], |_| {
            Box::new(move |g| {
                let mut gt = vec![T::zero(); v * d];
                for (row, &i) in g.data().chunks(d).zip(&ids) {
                    for (acc, &gv) in gt[i * d..(i + 1) * d].iter_mut().zip(row) {
                        *acc += gv;
                    }
                }
                vec![Some(Tensor::new([v, d], gt).expect("table"))]
            })
        })
    }
}

fn rows_to_nchw_raw<T: Scalar>(rows: &Tensor<T>, n: usize, c: usize, h: usize, w: usize) -> Tensor<T> {
    let hw = h * w;
    let mut out = vec![T::zero(); n * c * hw];
    for b in 0..n {
        for p in 0..hw {
            let row = &rows.data()[(b * hw + p) * c..(b * hw + p + 1) * c];
            for (ch, &v) in row.iter().enumerate() {
                out[(b * c + ch) * hw + p] = v;
            }
        }
    }
    Tensor::new([n, c, h, w], out).expect("nchw shape")
}

/// Channel-wise concatenation of `[N, Cᵢ, H, W]` tensors, in order.
pub fn concat_channels<'t, T: Scalar>(xs: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let first = xs
        .first()
        .ok_or_else(|| shape_err!("concat_channels: no inputs"))?;
    let values: Vec<_> = xs.iter().map(|v| v.value()).collect();
    let (n, _, h, w) = values[0].dims4()?;
    let mut channels = Vec::with_capacity(xs.len());
    for (v, var) in values.iter().zip(xs) {
        first.same_tape(var)?;
        let (ni, ci, hi, wi) = v.dims4()?;
        if (ni, hi, wi) != (n, h, w) {
            return Err(shape_err!(
                "concat_channels: input {:?} does not match batch/spatial dims [{n}, _, {h}, {w}]",
                v.shape()
            ));
        }
        channels.push(ci);
    }
    let total: usize = channels.iter().sum();
    let hw = h * w;
    let mut out = Vec::with_capacity(n * total * hw);
    for b in 0..n {
        for (v, &ci) in values.iter().zip(&channels) {
            out.extend_from_slice(&v.data()[b * ci * hw..(b + 1) * ci * hw]);
        }
    }
    let out = Tensor::new([n, total, h, w], out)?;
    first.tape().record("concat_channels", out, xs, |_| {
        Box::new(move |g| {
            let mut grads: Vec<Vec<T>> = channels.iter().map(|&ci| Vec::with_capacity(n * ci * hw)).collect();
            for b in 0..n {
                let mut offset = b * total * hw;
                for (gi, &ci) in grads.iter_mut().zip(&channels) {
                    gi.extend_from_slice(&g.data()[offset..offset + ci * hw]);
                    offset += ci * hw;
                }
            }
            grads
                .into_iter()
                .zip(&channels)
                .map(|(d, &ci)| Some(Tensor::new([n, ci, h, w], d).expect("slice shape")))
                .collect()
        })
    })
}
