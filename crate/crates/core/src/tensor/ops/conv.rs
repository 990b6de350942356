use super::super::{gemm, Layout, Tensor, Var};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Valid output-column range `[lo, hi)` for kernel column `kj`.
    #[inline]
    fn ox_range(&self, kj: usize) -> (usize, usize) {
        let lo = if self.pad > kj {
            (self.pad - kj).div_ceil(self.stride)
        } else {
            0
        };
        let hi = if self.w + self.pad > kj {
            ((self.w + self.pad - kj - 1) / self.stride + 1).min(self.wo)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    /// Calls `f(dst_offset, src_offset, len, src_step)` for each contiguous output
    /// run of column `col` block starting at `col_base` in a row of width `ld`.
    #[inline]
    fn for_each_run(&self, ld: usize, col_base: usize, mut f: impl FnMut(usize, usize, usize)) {
        let plane = self.out_plane();
        for c in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let (lo, hi) = self.ox_range(kj);
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let ix = lo * self.stride + kj - self.pad;
                        let src = (c * self.h + iy as usize) * self.w + ix;
                        let dst = row * ld + col_base + oy * self.wo + lo;
                        debug_assert!(oy * self.wo + hi <= plane);
                        f(dst, src, hi - lo);
                    }
                }
            }
        }
    }

    /// Writes the patches of one image into columns `[col_base, col_base + plane)`
    /// of a `[patch, ld]` matrix whose padded entries are already zero.
    fn im2col<T: Scalar>(&self, image: &[T], cols: &mut [T], ld: usize, col_base: usize) {
        let s = self.stride;
        self.for_each_run(ld, col_base, |dst, src, len| {
            let out = &mut cols[dst..dst + len];
            if s == 1 {
                out.copy_from_slice(&image[src..src + len]);
            } else {
                for (j, v) in out.iter_mut().enumerate() {
                    *v = image[src + j * s];
                }
            }
        });
    }

    fn col2im<T: Scalar>(&self, cols: &[T], image: &mut [T], ld: usize, col_base: usize) {
        let s = self.stride;
        self.for_each_run(ld, col_base, |dst, src, len| {
            for (j, &v) in cols[dst..dst + len].iter().enumerate() {
                image[src + j * s] += v;
            }
        });
    }
}

/// Scratch space for a chunk of `count` images: patch columns `[patch, count·plane]`
/// and a wide output `[K, count·plane]`.
struct Chunk<T> {
    count: usize,
    cols: Vec<T>,
    wide: Vec<T>,
}

impl<T: Scalar> Chunk<T> {
    fn new(g: &Geometry, k: usize, count: usize) -> Self {
        let ld = count * g.out_plane();
        Self {
            count,
            // Padding taps are never written, so they stay zero across reuse.
            cols: vec![T::zero(); g.patch() * ld],
            wide: vec![T::zero(); k * ld],
        }
    }

    fn ld(&self, g: &Geometry) -> usize {
        self.count * g.out_plane()
    }

    fn fill_cols(&mut self, g: &Geometry, images: &[T]) {
        let (plane, ld) = (g.out_plane(), self.ld(g));
        let in_stride = g.c * g.h * g.w;
        for (i, image) in images.chunks(in_stride).enumerate() {
            if g.is_pointwise() {
                for ch in 0..g.c {
                    self.cols[ch * ld + i * plane..ch * ld + (i + 1) * plane]
                        .copy_from_slice(&image[ch * plane..(ch + 1) * plane]);
                }
            } else {
                g.im2col(image, &mut self.cols, ld, i * plane);
            }
        }
    }
}

/// Images per GEMM, sized so the patch matrix stays around 4 MiB.
fn chunk_size(g: &Geometry, n: usize) -> usize {
    const TARGET_BYTES: usize = 4 << 20;
    let per_image = g.patch() * g.out_plane() * std::mem::size_of::<f32>();
    (TARGET_BYTES / per_image.max(1)).clamp(1, n.max(1))
}

/// Runs `f(first_image, chunk)` over consecutive image chunks with reused buffers.
fn for_each_chunk<T: Scalar>(g: &Geometry, k: usize, n: usize, mut f: impl FnMut(usize, &mut Chunk<T>)) {
    let size = chunk_size(g, n);
    let mut full = Chunk::new(g, k, size);
    let mut start = 0;
    while start < n {
        let count = size.min(n - start);
        if count == size {
            f(start, &mut full);
        } else {
            f(start, &mut Chunk::new(g, k, count));
        }
        start += count;
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    /// 2-D cross-correlation of `self: [N, C, H, W]` with `weight: [K, C, kh, kw]`
    /// plus `bias: [K]`. Output size is `(H + 2·pad − kh) / stride + 1`, rounded
    /// down.
    pub fn conv2d(
        self,
        weight: Var<'t, T>,
        bias: Var<'t, T>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'t, T>> {
        self.same_tape(&weight)?;
        self.same_tape(&bias)?;
        let x = self.value();
        let wt = weight.value();
        let b = bias.value();
        let (n, c, h, w) = x.dims4()?;
        let (k, wc, kh, kw) = wt.dims4()?;
        if wc != c {
            return Err(shape_err!(
                "conv2d: weight expects {wc} input channels, input has {c}"
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(shape_err!("conv2d: kernel {kh}x{kw} must have odd sides"));
        }
        if stride == 0 {
            return Err(shape_err!("conv2d: stride must be positive"));
        }
        if b.shape() != [k] {
            return Err(shape_err!("conv2d: bias {:?} does not match [{k}]", b.shape()));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(shape_err!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            ));
        }
        let g = Geometry {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        };
        let (patch, plane) = (g.patch(), g.out_plane());
        let in_stride = c * h * w;
        let mut out = vec![T::zero(); n * k * plane];
        for_each_chunk(&g, k, n, |first, chunk| {
            let ld = chunk.ld(&g);
            chunk.fill_cols(&g, &x.data()[first * in_stride..(first + chunk.count) * in_stride]);
            gemm(k, patch, ld, wt.data(), Layout::N, &chunk.cols, Layout::N, &mut chunk.wide, false);
            for i in 0..chunk.count {
                for (kk, &bv) in b.data().iter().enumerate() {
                    let src = &chunk.wide[kk * ld + i * plane..kk * ld + (i + 1) * plane];
                    let row = ((first + i) * k + kk) * plane;
                    for (d, &v) in out[row..row + plane].iter_mut().zip(src) {
                        *d = v + bv;
                    }
                }
            }
        });
        let out = Tensor::new([n, k, g.ho, g.wo], out)?;

        self.tape().record("conv2d", out, &[self, weight, bias], |flags| {
            let (want_x, want_w, want_b) = (flags[0], flags[1], flags[2]);
            Box::new(move |grad| {
                let gd = grad.data();
                let mut gw = want_w.then(|| vec![T::zero(); wt.numel()]);
                let mut gx = want_x.then(|| vec![T::zero(); x.numel()]);
                let mut gcols = Vec::new();
                for_each_chunk(&g, k, n, |first, chunk| {
                    let ld = chunk.ld(&g);
                    for i in 0..chunk.count {
                        for kk in 0..k {
                            let row = ((first + i) * k + kk) * plane;
                            chunk.wide[kk * ld + i * plane..kk * ld + (i + 1) * plane]
                                .copy_from_slice(&gd[row..row + plane]);
                        }
                    }
                    if let Some(gw) = gw.as_mut() {
                        chunk.fill_cols(&g, &x.data()[first * in_stride..(first + chunk.count) * in_stride]);
                        gemm(k, ld, patch, &chunk.wide, Layout::N, &chunk.cols, Layout::T, gw, true);
                    }
                    if let Some(gx) = gx.as_mut() {
                        gcols.resize(patch * ld, T::zero());
                        gemm(patch, k, ld, wt.data(), Layout::T, &chunk.wide, Layout::N, &mut gcols, false);
                        for i in 0..chunk.count {
                            let dst = &mut gx[(first + i) * in_stride..(first + i + 1) * in_stride];
                            if g.is_pointwise() {
                                for ch in 0..c {
                                    dst[ch * plane..(ch + 1) * plane].copy_from_slice(
                                        &gcols[ch * ld + i * plane..ch * ld + (i + 1) * plane],
                                    );
                                }
                            } else {
                                g.col2im(&gcols, dst, ld, i * plane);
                            }
                        }
                    }
                });
                let gb = want_b.then(|| {
                    let mut sums = vec![T::zero(); k];
                    for (idx, row) in gd.chunks(plane).enumerate() {
                        sums[idx % k] += row.iter().fold(T::zero(), |a, &v| a + v);
                    }
                    Tensor::new([k], sums).expect("bias shape")
                });
                vec![
                    gx.map(|d| Tensor::new(x.shape().to_vec(), d).expect("input shape")),
                    gw.map(|d| Tensor::new(wt.shape().to_vec(), d).expect("weight shape")),
                    gb,
                ]
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::{check_multi, random};
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn pointwise_identity_kernel_is_identity() {
        let tape = Tape::<f32>::new();
        let x = Tensor::from_fn([2, 3, 4, 5], |i| (i as f32 * 0.31).sin());
        let mut eye = Tensor::zeros([3, 3, 1, 1]);
        for c in 0..3 {
            eye.data_mut()[c * 3 + c] = 1.0;
        }
        let y = tape
            .constant(x.clone())
            .conv2d(tape.constant(eye), tape.constant(Tensor::zeros([3])), 1, 0)
            .unwrap();
        assert_eq!(*y.value(), x);
    }

    #[test]
    fn constant_sum_at_center() {
        let tape = Tape::<f32>::new();
        let y = tape
            .constant(Tensor::ones([1, 1, 3, 3]))
            .conv2d(
                tape.constant(Tensor::ones([1, 1, 3, 3])),
                tape.constant(Tensor::zeros([1])),
                1,
                1,
            )
            .unwrap();
        let v = y.value();
        assert_eq!(v.shape(), &[1, 1, 3, 3]);
        assert_eq!(v.data()[4], 9.0);
        assert_eq!(v.data()[0], 4.0);
    }

    #[test]
    fn strided_output_size_rounds_down() {
        let tape = Tape::<f32>::new();
        let y = tape
            .constant(Tensor::ones([1, 2, 8, 8]))
            .conv2d(
                tape.constant(Tensor::ones([4, 2, 3, 3])),
                tape.constant(Tensor::zeros([4])),
                2,
                1,
            )
            .unwrap();
        assert_eq!(y.shape(), vec![1, 4, 4, 4]);
    }

    #[test]
    fn shape_errors() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones([1, 2, 5, 5]));
        let b = tape.constant(Tensor::zeros([1]));
        let wrong_c = tape.constant(Tensor::ones([1, 3, 3, 3]));
        assert!(x.conv2d(wrong_c, b, 1, 1).is_err());
        let even = tape.constant(Tensor::ones([1, 2, 2, 2]));
        assert!(x.conv2d(even, b, 1, 1).is_err());
        let flat = tape.constant(Tensor::ones([2, 5, 5]));
        assert!(flat.conv2d(even, b, 1, 1).is_err());
    }

    #[test]
    fn input_gradient_of_sum_matches_finite_differences() {
        let x = random([1, 1, 5, 5], 10);
        let w = random([1, 1, 3, 3], 11);
        let b = random([1], 12);
        check_multi(&[x, w, b], |v| v[0].conv2d(v[1], v[2], 1, 1));
    }

    #[test]
    fn strided_multichannel_gradients() {
        let x = random([2, 3, 6, 5], 13);
        let w = random([4, 3, 3, 3], 14);
        let b = random([4], 15);
        check_multi(&[x, w, b], |v| v[0].conv2d(v[1], v[2], 2, 1));
        let w1 = random([2, 3, 1, 1], 16);
        let b1 = random([2], 17);
        let x1 = random([2, 3, 3, 3], 18);
        check_multi(&[x1, w1, b1], |v| v[0].conv2d(v[1], v[2], 1, 0));
    }
}
