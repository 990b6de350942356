use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::ops::layout::{concat_channels, nearest_source};
use crate::tensor::{Tape, Tensor, Var};

/// Per-pixel feature stack of one image: `[C_F, H, W]` plus the normalized
/// time it was computed at.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack<T> {
    pub data: Tensor<T>,
    pub t_norm: f64,
}

impl<T: Scalar> FeatureStack<T> {
    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }
}

/// Resizes every tap `[N, C_i, h_i, w_i]` to `(h, w)` and concatenates along
/// channels in the given order.
pub fn collect_features_var<'t, T: Scalar>(taps: &[Var<'t, T>], h: usize, w: usize) -> Result<Var<'t, T>> {
    if taps.is_empty() {
        return Err(shape_err!("collect_features: no taps"));
    }
    let resized = taps
        .iter()
        .map(|t| {
            let (_, _, th, tw) = t.value().dims4()?;
            if (th, tw) == (h, w) {
                Ok(*t)
            } else {
                t.resize_nearest(h, w)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if resized.len() == 1 {
        return Ok(resized[0]);
    }
    concat_channels(&resized)
}

/// Builds the feature stack of image `n` from plain tap tensors.
pub fn collect_features<T: Scalar>(
    taps: &[Tensor<T>],
    n: usize,
    h: usize,
    w: usize,
    t_norm: f64,
) -> Result<FeatureStack<T>> {
    let tape = Tape::new();
    let vars: Vec<_> = taps.iter().map(|t| tape.constant(t.clone())).collect();
    let stacked = collect_features_var(&vars, h, w)?.to_tensor();
    Ok(FeatureStack {
        data: stacked.index_outer(n)?,
        t_norm,
    })
}

/// Feature vectors at selected pixels, `[M, C_F]`, without materializing the
/// full stack. `picks[m] = (image, row, col)` at the `(h, w)` target resolution.
/// Row `m` equals the matching pixel of [`collect_features`].
pub fn gather_pixel_features<T: Scalar>(
    taps: &[Tensor<T>],
    h: usize,
    w: usize,
    picks: &[(usize, usize, usize)],
) -> Result<Tensor<T>> {
    if taps.is_empty() {
        return Err(shape_err!("gather_pixel_features: no taps"));
    }
    let dims = taps.iter().map(|t| t.dims4()).collect::<Result<Vec<_>>>()?;
    let width: usize = dims.iter().map(|d| d.1).sum();
    let mut out = Vec::with_capacity(picks.len() * width);
    for &(n, i, j) in picks {
        if i >= h || j >= w {
            return Err(shape_err!("gather_pixel_features: pixel ({i}, {j}) outside {h}x{w}"));
        }
        for (tap, &(tn, c, th, tw)) in taps.iter().zip(&dims) {
            if n >= tn {
                return Err(shape_err!("gather_pixel_features: image {n} outside batch of {tn}"));
            }
            let (si, sj) = (nearest_source(i, th, h), nearest_source(j, tw, w));
            let base = n * c * th * tw + si * tw + sj;
            out.extend((0..c).map(|ch| tap.data()[base + ch * th * tw]));
        }
    }
    Tensor::new([picks.len(), width], out)
}

/// `eps_uncond + scale·(eps_cond − eps_uncond)`.
pub fn cfg_combine<T: Scalar>(eps_cond: &Tensor<T>, eps_uncond: &Tensor<T>, scale: f64) -> Result<Tensor<T>> {
    eps_cond.expect_same_shape(eps_uncond, "cfg_combine")?;
    if scale == 1.0 {
        return Ok(eps_cond.clone());
    }
    if scale == 0.0 {
        return Ok(eps_uncond.clone());
    }
    let s = T::lit(scale);
    eps_cond.zip_map(eps_uncond, |c, u| u + s * (c - u))
}
