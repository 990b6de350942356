use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

use super::{MapKind, SpatialMap};

pub const DEFAULT_EDGE_THRESHOLD: f32 = 0.5;

/// Sobel gradient magnitude with replicated borders, scaled so the strongest
/// response is 1, then binarized: `1` where the scaled magnitude is at least
/// `threshold`.
pub fn extract_edges(image: &Tensor<f32>, threshold: f32) -> Result<SpatialMap> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 1 {
        return Err(shape_err!("extract_edges: image must be [1, H, W], got {s:?}"));
    }
    if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Domain("extract_edges: image values outside [0, 1]".into()));
    }
    let (h, w) = (s[1], s[2]);
    let px = |i: isize, j: isize| {
        let i = i.clamp(0, h as isize - 1) as usize;
        let j = j.clamp(0, w as isize - 1) as usize;
        image.data()[i * w + j]
    };
    let mut mag = vec![0.0f32; h * w];
    for i in 0..h as isize {
        for j in 0..w as isize {
            let gx = (px(i - 1, j + 1) + 2.0 * px(i, j + 1) + px(i + 1, j + 1))
                - (px(i - 1, j - 1) + 2.0 * px(i, j - 1) + px(i + 1, j - 1));
            let gy = (px(i + 1, j - 1) + 2.0 * px(i + 1, j) + px(i + 1, j + 1))
                - (px(i - 1, j - 1) + 2.0 * px(i - 1, j) + px(i - 1, j + 1));
            mag[i as usize * w + j as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    let peak = mag.iter().copied().fold(0.0f32, f32::max);
    let edges = if peak <= 1e-6 {
        vec![0.0; h * w]
    } else {
        mag.iter()
            .map(|&m| if m / peak >= threshold { 1.0 } else { 0.0 })
            .collect()
    };
    SpatialMap::new(Tensor::new([1, h, w], edges)?, MapKind::Edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_no_edges() {
        let e = extract_edges(&Tensor::full([1, 16, 16], 0.7), 0.5).unwrap();
        assert!(e.data().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rectangle_edges_lie_on_a_thin_band() {
        let (h, w) = (20, 24);
        let (r0, r1, c0, c1) = (5, 14, 6, 18);
        let img = Tensor::from_fn([1, h, w], |k| {
            let (i, j) = (k / w, k % w);
            if (r0..r1).contains(&i) && (c0..c1).contains(&j) {
                1.0
            } else {
                0.0
            }
        });
        let e = extract_edges(&img, DEFAULT_EDGE_THRESHOLD).unwrap();
        // Chebyshev distance from the pixel to the boundary between inside and outside.
        let inside = |i: usize, j: usize| (r0..r1).contains(&i) && (c0..c1).contains(&j);
        for i in 0..h {
            for j in 0..w {
                let v = e.data().data()[i * w + j];
                let near_boundary = (i.saturating_sub(1)..=(i + 1).min(h - 1))
                    .flat_map(|a| (j.saturating_sub(1)..=(j + 1).min(w - 1)).map(move |b| (a, b)))
                    .any(|(a, b)| inside(a, b) != inside(i, j));
                if v != 0.0 {
                    assert!(near_boundary, "edge at ({i}, {j}) away from the boundary");
                }
                let on_side = inside(i, j)
                    && (i == r0 || i == r1 - 1 || j == c0 || j == c1 - 1);
                if on_side {
                    assert_eq!(v, 1.0, "boundary pixel ({i}, {j}) missed");
                }
            }
        }
        assert!(e.data().data().iter().any(|&v| v == 1.0));
    }

    #[test]
    fn rejects_out_of_range_images() {
        assert!(extract_edges(&Tensor::full([1, 4, 4], 1.5), 0.5).is_err());
        assert!(extract_edges(&Tensor::full([2, 4, 4], 0.5), 0.5).is_err());
    }
}
