//! Channel-wise 2D discrete Fourier transform.
//!
//! Layout is unshifted: the DC coefficient sits at index `(0, 0)` and no
//! fftshift is applied anywhere. The forward transform is unnormalised and
//! the inverse carries the `1 / (H·W)` factor.
//!
//! Power-of-two extents use an iterative radix-2 Cooley-Tukey transform;
//! other extents fall back to a direct `O(n²)` DFT along that axis. Work is
//! done in `f64` and rounded to `f32` for storage.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Largest imaginary component tolerated when inverting a spectrum.
pub const IMAG_RESIDUE_LIMIT: f32 = 1e-3;

/// Frequency-domain coefficients of one modality, `(C, H, W)` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    channels: usize,
    height: usize,
    width: usize,
    re: Vec<f32>,
    im: Vec<f32>,
}

impl Spectrum {
    pub fn new(channels: usize, height: usize, width: usize, re: Vec<f32>, im: Vec<f32>) -> Result<Self> {
        let n = channels * height * width;
        if re.len() != n || im.len() != n {
            return Err(Error::shape(format!(
                "spectrum {channels}x{height}x{width} needs {n} re/im values, got {}/{}",
                re.len(),
                im.len()
            )));
        }
        if re.iter().chain(&im).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("spectrum holds a non-finite coefficient".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            re,
            im,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        let n = channels * height * width;
        Self {
            channels,
            height,
            width,
            re: vec![0.0; n],
            im: vec![0.0; n],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn re(&self) -> &[f32] {
        &self.re
    }

    pub fn im(&self) -> &[f32] {
        &self.im
    }

    fn index(&self, c: usize, u: usize, v: usize) -> usize {
        (c * self.height + u) * self.width + v
    }

    /// Coefficient `(re, im)` at channel `c`, frequency `(u, v)`.
    pub fn coeff(&self, c: usize, u: usize, v: usize) -> (f32, f32) {
        let i = self.index(c, u, v);
        (self.re[i], self.im[i])
    }

    pub fn set_coeff(&mut self, c: usize, u: usize, v: usize, re: f32, im: f32) {
        let i = self.index(c, u, v);
        self.re[i] = re;
        self.im[i] = im;
    }

    /// Scales every channel's coefficient at each frequency by `weights[u·W + v]`.
    pub(crate) fn scale_frequencies(&self, weights: &[f32]) -> Spectrum {
        let hw = self.height * self.width;
        debug_assert_eq!(weights.len(), hw);
        let mut out = self.clone();
        for c in 0..self.channels {
            for (k, &m) in weights.iter().enumerate() {
                out.re[c * hw + k] *= m;
                out.im[c * hw + k] *= m;
            }
        }
        out
    }
}

/// Real part of an inverse transform together with the largest imaginary
/// magnitude that was discarded.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub image: Tensor4,
    pub max_imag_residue: f32,
}

fn transform_1d(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    if n <= 1 {
        return;
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    if n.is_power_of_two() {
        // Bit-reversal permutation.
        let mut j = 0usize;
        for i in 1..n {
            let mut bit = n >> 1;
            while j & bit != 0 {
                j ^= bit;
                bit >>= 1;
            }
            j |= bit;
            if i < j {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            for k in 0..half {
                let angle = sign * TAU * k as f64 / len as f64;
                let (wi, wr) = (libm::sin(angle), libm::cos(angle));
                for start in (0..n).step_by(len) {
                    let a = start + k;
                    let b = a + half;
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len <<= 1;
        }
    } else {
        let src_re = re.to_vec();
        let src_im = im.to_vec();
        for k in 0..n {
            let (mut sr, mut si) = (0.0, 0.0);
            for t in 0..n {
                // Reduce the phase index first so the angle stays small.
                let angle = sign * TAU * ((k * t) % n) as f64 / n as f64;
                let (s, c) = (libm::sin(angle), libm::cos(angle));
                sr += src_re[t] * c - src_im[t] * s;
                si += src_re[t] * s + src_im[t] * c;
            }
            re[k] = sr;
            im[k] = si;
        }
    }
}

/// In-place 2D transform of one `h×w` plane: rows, then columns.
fn transform_2d(re: &mut [f64], im: &mut [f64], h: usize, w: usize, inverse: bool) {
    for y in 0..h {
        transform_1d(&mut re[y * w..(y + 1) * w], &mut im[y * w..(y + 1) * w], inverse);
    }
    let mut col_re = vec![0f64; h];
    let mut col_im = vec![0f64; h];
    for x in 0..w {
        for y in 0..h {
            col_re[y] = re[y * w + x];
            col_im[y] = im[y * w + x];
        }
        transform_1d(&mut col_re, &mut col_im, inverse);
        for y in 0..h {
            re[y * w + x] = col_re[y];
            im[y * w + x] = col_im[y];
        }
    }
}

/// Forward transform of every channel of a single-batch tensor.
pub fn dft2(x: &Tensor4) -> Result<Spectrum> {
    let [n, c, h, w] = x.dims();
    if n != 1 {
        return Err(Error::shape(format!("dft2 expects a single batch element, got {n}")));
    }
    if h == 0 || w == 0 {
        return Err(Error::shape("dft2 needs non-empty planes"));
    }
    let hw = h * w;
    let mut out = Spectrum::zeros(c, h, w);
    let mut re = vec![0f64; hw];
    let mut im = vec![0f64; hw];
    for ch in 0..c {
        for (dst, &src) in re.iter_mut().zip(x.plane(0, ch)) {
            *dst = src as f64;
        }
        im.iter_mut().for_each(|v| *v = 0.0);
        transform_2d(&mut re, &mut im, h, w, false);
        for k in 0..hw {
            out.re[ch * hw + k] = re[k] as f32;
            out.im[ch * hw + k] = im[k] as f32;
        }
    }
    Ok(out)
}

/// Inverse transform with `1 / (H·W)` normalisation.
///
/// Fails with [`Error::SymmetryViolation`] when the discarded imaginary part
/// exceeds [`IMAG_RESIDUE_LIMIT`].
pub fn idft2(s: &Spectrum) -> Result<Reconstruction> {
    let (c, h, w) = (s.channels, s.height, s.width);
    let hw = h * w;
    let norm = 1.0 / hw as f64;
    let mut data = vec![0f32; c * hw];
    let mut residue = 0f64;
    let mut re = vec![0f64; hw];
    let mut im = vec![0f64; hw];
    for ch in 0..c {
        for k in 0..hw {
            re[k] = s.re[ch * hw + k] as f64;
            im[k] = s.im[ch * hw + k] as f64;
        }
        transform_2d(&mut re, &mut im, h, w, true);
        for k in 0..hw {
            data[ch * hw + k] = (re[k] * norm) as f32;
            residue = residue.max((im[k] * norm).abs());
        }
    }
    let residue = residue as f32;
    if residue > IMAG_RESIDUE_LIMIT {
        return Err(Error::SymmetryViolation {
            residue,
            limit: IMAG_RESIDUE_LIMIT,
        });
    }
    Ok(Reconstruction {
        image: Tensor4::new([1, c, h, w], data)?,
        max_imag_residue: residue,
    })
}

/// Per-channel magnitude `|F(u, v)|` as a `(1, C, H, W)` tensor.
pub fn amplitude(s: &Spectrum) -> Tensor4 {
    let data =
        s.re.iter()
            .zip(&s.im)
            .map(|(&r, &i)| libm::hypot(r as f64, i as f64) as f32)
            .collect();
    Tensor4::from_raw([1, s.channels, s.height, s.width], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn random(c: usize, h: usize, w: usize, seed: u64) -> Tensor4 {
        let mut rng = Rng::new(seed);
        Tensor4::from_fn([1, c, h, w], |_, _, _, _| rng.unit_f32()).unwrap()
    }

    /// Direct four-loop DFT in f64.
    fn naive_dft(x: &Tensor4, ch: usize) -> (Vec<f64>, Vec<f64>) {
        let (h, w) = (x.height(), x.width());
        let mut re = vec![0.0; h * w];
        let mut im = vec![0.0; h * w];
        for u in 0..h {
            for v in 0..w {
                for y in 0..h {
                    for xx in 0..w {
                        let phase = -TAU * ((u * y) as f64 / h as f64 + (v * xx) as f64 / w as f64);
                        let f = x.at(0, ch, y, xx) as f64;
                        re[u * w + v] += f * phase.cos();
                        im[u * w + v] += f * phase.sin();
                    }
                }
            }
        }
        (re, im)
    }

    #[test]
    fn constant_image_is_dc_only() {
        let x = Tensor4::full([1, 1, 4, 8], 0.75);
        let s = dft2(&x).unwrap();
        assert!((s.coeff(0, 0, 0).0 - 0.75 * 32.0).abs() < 1e-5);
        for k in 1..32 {
            assert!(s.re()[k].abs() < 1e-5 && s.im()[k].abs() < 1e-5);
        }
    }

    #[test]
    fn two_by_two_hand_values() {
        let x = Tensor4::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = dft2(&x).unwrap();
        assert_eq!(s.re(), &[10.0, -2.0, -4.0, 0.0]);
        assert!(s.im().iter().all(|v| v.abs() < 1e-12));
        assert_eq!(amplitude(&s).data(), &[10.0, 2.0, 4.0, 0.0]);
    }

    #[test]
    fn matches_naive_dft_including_non_power_of_two() {
        for (h, w) in [(16, 16), (6, 10), (5, 8)] {
            let x = random(2, h, w, (h * w) as u64);
            let s = dft2(&x).unwrap();
            for ch in 0..2 {
                let (re, im) = naive_dft(&x, ch);
                for k in 0..h * w {
                    assert!((s.re()[ch * h * w + k] as f64 - re[k]).abs() < 1e-4);
                    assert!((s.im()[ch * h * w + k] as f64 - im[k]).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn inverse_edge_cases() {
        let zero = idft2(&Spectrum::zeros(2, 4, 4)).unwrap();
        assert!(zero.image.data().iter().all(|&v| v == 0.0));

        let mut dc = Spectrum::zeros(1, 8, 4);
        dc.set_coeff(0, 0, 0, 32.0, 0.0);
        let ones = idft2(&dc).unwrap();
        assert!(ones.image.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn asymmetric_spectrum_is_rejected() {
        let mut s = Spectrum::zeros(1, 4, 4);
        s.set_coeff(0, 0, 1, 16.0, 0.0);
        match idft2(&s) {
            Err(Error::SymmetryViolation { residue, .. }) => assert!(residue > 0.5),
            other => panic!("expected symmetry violation, got {other:?}"),
        }
    }

    #[test]
    fn amplitude_ignores_phase() {
        let x = random(1, 4, 4, 3);
        let s = dft2(&x).unwrap();
        let theta = 0.7f32;
        let (c, si) = (theta.cos(), theta.sin());
        let rotated = Spectrum::new(
            1,
            4,
            4,
            s.re().iter().zip(s.im()).map(|(r, i)| r * c - i * si).collect(),
            s.re().iter().zip(s.im()).map(|(r, i)| r * si + i * c).collect(),
        )
        .unwrap();
        let d = amplitude(&s).max_abs_diff(&amplitude(&rotated)).unwrap();
        assert!(d < 1e-5);
    }

    #[test]
    fn batch_must_be_one() {
        assert!(matches!(dft2(&Tensor4::zeros([2, 1, 2, 2])), Err(Error::Shape(_))));
    }
}
