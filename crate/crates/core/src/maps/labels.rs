use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{MapKind, SpatialMap};

/// Half-open pixel rectangle `[y0, y1) × [x0, x1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRegion {
    pub rect: Rect,
    /// Probability of the foreground class inside the rectangle.
    pub prob: f32,
}

/// Soft two-class label map. Regions are painted over a zero background in
/// order, so later regions overwrite earlier ones where they overlap. A
/// separable box filter of radius `band` then turns every step between regions
/// into a linear ramp.
pub fn make_label_map(h: usize, w: usize, regions: &[LabelRegion], band: usize) -> Result<SpatialMap> {
    let mut m = vec![0.0f32; h * w];
    for r in regions {
        if !(0.0..=1.0).contains(&r.prob) {
            return Err(Error::Domain(format!("label probability {} outside [0, 1]", r.prob)));
        }
        for i in r.rect.y0.min(h)..r.rect.y1.min(h) {
            for j in r.rect.x0.min(w)..r.rect.x1.min(w) {
                m[i * w + j] = r.prob;
            }
        }
    }
    if band > 0 {
        m = box_blur(&m, h, w, band, true);
        m = box_blur(&m, h, w, band, false);
    }
    m.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    SpatialMap::new(Tensor::new([1, h, w], m)?, MapKind::Labels)
}

fn box_blur(src: &[f32], h: usize, w: usize, r: usize, horizontal: bool) -> Vec<f32> {
    let (lines, len) = if horizontal { (h, w) } else { (w, h) };
    let at = |line: usize, k: usize| if horizontal { line * w + k } else { k * w + line };
    let mut out = vec![0.0f32; h * w];
    for line in 0..lines {
        for k in 0..len {
            let sum: f32 = (k as isize - r as isize..=k as isize + r as isize)
                .map(|q| src[at(line, q.clamp(0, len as isize - 1) as usize)])
                .sum();
            out[at(line, k)] = sum / (2 * r + 1) as f32;
        }
    }
    out
}

/// Gaussian blob `exp(−d²/2σ²)` centred at `(cy, cx)`, peak 1.
pub fn saliency_blob(h: usize, w: usize, cy: f32, cx: f32, sigma: f32) -> Result<SpatialMap> {
    if sigma <= 0.0 {
        return Err(Error::Domain(format!("saliency sigma {sigma} must be positive")));
    }
    let data = Tensor::from_fn([1, h, w], |k| {
        let (dy, dx) = ((k / w) as f32 - cy, (k % w) as f32 - cx);
        (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp()
    });
    SpatialMap::new(data, MapKind::Saliency)
}
