#![allow(dead_code)]

use fmcaf::tensor::Conv;
use fmcaf::{Rng, Tensor4};

pub fn uniform(dims: [usize; 4], lo: f32, hi: f32, seed: u64) -> Tensor4 {
    let mut rng = Rng::new(seed);
    Tensor4::from_fn(dims, |_, _, _, _| lo + (hi - lo) * rng.unit_f32()).unwrap()
}

/// `(B, Cout, H, W)` from a 1×1 convolution, in `f64`.
pub fn pointwise(x: &Tensor4, conv: &Conv) -> Vec<Vec<Vec<f64>>> {
    let [n, cin, h, w] = x.dims();
    let cout = conv.out_channels();
    let kw = conv.weight.data();
    (0..n)
        .map(|b| {
            (0..cout)
                .map(|co| {
                    (0..h * w)
                        .map(|p| {
                            let mut acc = conv.bias[co] as f64;
                            for ci in 0..cin {
                                acc += kw[co * cin + ci] as f64 * x.plane(b, ci)[p] as f64;
                            }
                            acc
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Direct `O((HW)²)` 2D DFT of one plane: `(re, im)`.
pub fn naive_dft(plane: &[f32], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut re = vec![0.0; h * w];
    let mut im = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let (mut sr, mut si) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let ang = -std::f64::consts::TAU * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                    sr += plane[y * w + x] as f64 * ang.cos();
                    si += plane[y * w + x] as f64 * ang.sin();
                }
            }
            re[u * w + v] = sr;
            im[u * w + v] = si;
        }
    }
    (re, im)
}
