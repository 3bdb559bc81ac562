//! Radix-2 FFTs and spectral convolution.
//!
//! Convention: the forward transform is unscaled, the inverse divides by the
//! transform length, so `inverse(forward(x)) == x`. Multiplying two same-size
//! spectra therefore yields circular convolution with the kernel anchored at
//! (0,0).

use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Precomputed twiddle factors for one transform length.
#[derive(Debug, Clone)]
pub struct FftPlan {
    len: usize,
    direction: Direction,
    // twiddles[j] = exp(-2*pi*i*j/len) for forward, conjugate for inverse;
    // only the first len/2 entries are needed by the butterflies.
    tw_re: Vec<f64>,
    tw_im: Vec<f64>,
}

impl FftPlan {
    pub fn new(len: usize, direction: Direction) -> Result<FftPlan> {
        if len == 0 || !len.is_power_of_two() {
            return Err(Error::UnsupportedSize(format!(
                "fft length {len} is not a power of two"
            )));
        }
        let half = (len / 2).max(1);
        let sign = match direction {
            Direction::Forward => -1.0,
            Direction::Inverse => 1.0,
        };
        let mut tw_re = Vec::with_capacity(half);
        let mut tw_im = Vec::with_capacity(half);
        for j in 0..half {
            let theta = sign * 2.0 * std::f64::consts::PI * j as f64 / len as f64;
            tw_re.push(theta.cos());
            tw_im.push(theta.sin());
        }
        Ok(FftPlan {
            len,
            direction,
            tw_re,
            tw_im,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn twiddle(&self, j: usize) -> (f64, f64) {
        (self.tw_re[j], self.tw_im[j])
    }

    /// In-place transform of one line of `len` complex values.
    pub fn process(&self, re: &mut [f64], im: &mut [f64]) {
        debug_assert_eq!(re.len(), self.len);
        debug_assert_eq!(im.len(), self.len);
        let n = self.len;
        if n == 1 {
            return;
        }

        // bit-reversal permutation
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = (i.reverse_bits() >> (usize::BITS - bits)) as usize;
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }

        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let step = n / size;
            let mut start = 0;
            while start < n {
                for k in 0..half {
                    let (wr, wi) = (self.tw_re[k * step], self.tw_im[k * step]);
                    let a = start + k;
                    let b = a + half;
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
                start += size;
            }
            size *= 2;
        }

        if self.direction == Direction::Inverse {
            let scale = 1.0 / n as f64;
            for x in re.iter_mut() {
                *x *= scale;
            }
            for x in im.iter_mut() {
                *x *= scale;
            }
        }
    }
}

/// 1D FFT of a rank-1 complex tensor.
pub fn fft1d(x: &ComplexTensor, direction: Direction) -> Result<ComplexTensor> {
    if x.shape().len() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "fft1d expects rank 1, got {:?}",
            x.shape()
        )));
    }
    let plan = FftPlan::new(x.len(), direction)?;
    let mut out = x.clone();
    plan.process(&mut out.re, &mut out.im);
    Ok(out)
}

/// Blocked out-of-place transpose of an h x w plane into a w x h plane.
/// Tiling keeps both access patterns within cache lines, which matters for
/// the benchmark scaling bounds at larger sizes.
fn transpose_into(src: &[f64], dst: &mut [f64], h: usize, w: usize) {
    const TILE: usize = 32;
    for r0 in (0..h).step_by(TILE) {
        for c0 in (0..w).step_by(TILE) {
            for r in r0..(r0 + TILE).min(h) {
                for c in c0..(c0 + TILE).min(w) {
                    dst[c * h + r] = src[r * w + c];
                }
            }
        }
    }
}

/// Row-column 2D FFT over raw planes. `re`/`im` hold h rows of w values.
/// The column pass runs as row transforms on a transposed copy so every
/// transform touches contiguous memory.
fn fft2d_planes(re: &mut [f64], im: &mut [f64], h: usize, w: usize, direction: Direction) -> Result<()> {
    let row_plan = FftPlan::new(w, direction)?;
    let col_plan = FftPlan::new(h, direction)?;
    for r in 0..h {
        row_plan.process(&mut re[r * w..(r + 1) * w], &mut im[r * w..(r + 1) * w]);
    }
    let mut t_re = vec![0.0; h * w];
    let mut t_im = vec![0.0; h * w];
    transpose_into(re, &mut t_re, h, w);
    transpose_into(im, &mut t_im, h, w);
    for c in 0..w {
        col_plan.process(&mut t_re[c * h..(c + 1) * h], &mut t_im[c * h..(c + 1) * h]);
    }
    transpose_into(&t_re, re, w, h);
    transpose_into(&t_im, im, w, h);
    Ok(())
}

/// 2D FFT of a rank-2 complex tensor.
pub fn fft2d(x: &ComplexTensor, direction: Direction) -> Result<ComplexTensor> {
    let (h, w) = match x.shape()[..] {
        [h, w] => (h, w),
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "fft2d expects rank 2, got {:?}",
                x.shape()
            )))
        }
    };
    let mut out = x.clone();
    fft2d_planes(&mut out.re, &mut out.im, h, w, direction)?;
    Ok(out)
}

/// Forward 2D FFT of a real rank-2 tensor.
pub fn fft2d_real(x: &Tensor, direction: Direction) -> Result<ComplexTensor> {
    fft2d(&ComplexTensor::from_real(x), direction)
}

/// FFT-based circular convolution of a 2D image with a (possibly smaller)
/// kernel anchored at (0,0): pad, transform both, multiply spectra, invert,
/// keep the real part.
pub fn spectral_conv2d(x: &Tensor, k: &Tensor) -> Result<Tensor> {
    let [h, w] = x.dims2()?;
    let [kh, kw] = k.dims2()?;
    if kh > h || kw > w {
        return Err(Error::InvalidArgument(format!(
            "kernel {kh}x{kw} larger than input {h}x{w}"
        )));
    }
    if !h.is_power_of_two() || !w.is_power_of_two() {
        return Err(Error::UnsupportedSize(format!(
            "input {h}x{w} is not power-of-two sized"
        )));
    }
    let row_f = FftPlan::new(w, Direction::Forward)?;
    let col_f = FftPlan::new(h, Direction::Forward)?;
    let row_i = FftPlan::new(w, Direction::Inverse)?;
    let col_i = FftPlan::new(h, Direction::Inverse)?;

    // Forward transform of a real plane, leaving the spectrum transposed
    // (w rows of h values). Keeping both spectra transposed lets the product
    // and the first inverse pass run without the round trip through the
    // standard orientation: the elementwise product is layout-agnostic.
    let forward_t = |mut re: Vec<f64>| -> (Vec<f64>, Vec<f64>) {
        let mut im = vec![0.0; h * w];
        for r in 0..h {
            row_f.process(&mut re[r * w..(r + 1) * w], &mut im[r * w..(r + 1) * w]);
        }
        let mut t_re = vec![0.0; h * w];
        let mut t_im = vec![0.0; h * w];
        transpose_into(&re, &mut t_re, h, w);
        transpose_into(&im, &mut t_im, h, w);
        for c in 0..w {
            col_f.process(&mut t_re[c * h..(c + 1) * h], &mut t_im[c * h..(c + 1) * h]);
        }
        (t_re, t_im)
    };

    let (mut pr, mut pi) = forward_t(x.data().to_vec());
    let (kr, ki) = forward_t(k.pad2d_zero(h, w)?.data().to_vec());
    for i in 0..h * w {
        let (a, b) = (pr[i], pi[i]);
        pr[i] = a * kr[i] - b * ki[i];
        pi[i] = a * ki[i] + b * kr[i];
    }

    // Inverse: the original columns are contiguous rows of the transposed
    // product, so invert them first, transpose back, then invert the rows.
    for c in 0..w {
        col_i.process(&mut pr[c * h..(c + 1) * h], &mut pi[c * h..(c + 1) * h]);
    }
    let mut re = vec![0.0; h * w];
    let mut im = vec![0.0; h * w];
    transpose_into(&pr, &mut re, w, h);
    transpose_into(&pi, &mut im, w, h);
    for r in 0..h {
        row_i.process(&mut re[r * w..(r + 1) * w], &mut im[r * w..(r + 1) * w]);
    }
    Tensor::from_vec(&[h, w], re)
}

/// Per-channel spectral filtering of a [c,h,w] feature map by a complex
/// per-frequency mask of the same shape.
pub fn apply_mask(x: &Tensor, mask: &ComplexTensor) -> Result<Tensor> {
    let [c, h, w] = x.dims3()?;
    if mask.shape() != x.shape() {
        return Err(Error::ShapeMismatch(format!(
            "mask shape {:?} vs input {:?}",
            mask.shape(),
            x.shape()
        )));
    }
    if !h.is_power_of_two() || !w.is_power_of_two() {
        return Err(Error::UnsupportedSize(format!(
            "input {h}x{w} is not power-of-two sized"
        )));
    }
    let mut out = Tensor::zeros(&[c, h, w])?;
    let plane = h * w;
    for ch in 0..c {
        let mut re = x.data()[ch * plane..(ch + 1) * plane].to_vec();
        let mut im = vec![0.0; plane];
        fft2d_planes(&mut re, &mut im, h, w, Direction::Forward)?;
        let m_re = &mask.re[ch * plane..(ch + 1) * plane];
        let m_im = &mask.im[ch * plane..(ch + 1) * plane];
        for i in 0..plane {
            let (a, b) = (re[i], im[i]);
            re[i] = a * m_re[i] - b * m_im[i];
            im[i] = a * m_im[i] + b * m_re[i];
        }
        fft2d_planes(&mut re, &mut im, h, w, Direction::Inverse)?;
        out.data_mut()[ch * plane..(ch + 1) * plane].copy_from_slice(&re);
    }
    Ok(out)
}

/// Per-channel forward spectra of a [c,h,w] feature map (saved by the
/// autodiff rule for mask application).
pub fn fft2d_channels(x: &Tensor) -> Result<ComplexTensor> {
    let [c, h, w] = x.dims3()?;
    let plane = h * w;
    let mut out = ComplexTensor::from_real(x);
    for ch in 0..c {
        let range = ch * plane..(ch + 1) * plane;
        fft2d_planes(
            &mut out.re[range.clone()],
            &mut out.im[range],
            h,
            w,
            Direction::Forward,
        )?;
    }
    Ok(out)
}
