mod common;

use common::{naive_dft, pointwise, softmax, uniform};
use fmcaf::fft::{amplitude, dft2};
use fmcaf::freq_filter::{amplitude_map, Modality};
use fmcaf::mcaf::{global_gate, global_gate_regions, window_cross_attention, McafConfig, McafParams};
use fmcaf::tensor::Parameters;
use fmcaf::{Rng, Tensor4};

/// Random weights and biases everywhere, so zero-bias shortcuts are not exercised.
fn randomized(cfg: &McafConfig, seed: u64) -> McafParams {
    let mut p = McafParams::init(seed, cfg);
    let mut rng = Rng::new(seed ^ 0x5eed);
    p.visit_mut("", &mut |name, _, data| {
        if name.ends_with("bias") {
            for v in data.iter_mut() {
                *v = rng.symmetric_f32(0.3);
            }
        }
    });
    p
}

/// Per-pixel windowed attention in `f64` straight from the definition.
fn naive_window_attention(f_m: &Tensor4, f_other: &Tensor4, m: Modality, p: &McafParams, cfg: &McafConfig) -> Vec<f64> {
    let [n, c, h, w] = f_m.dims();
    let (heads, win) = (cfg.heads, cfg.window);
    let d = c / heads;
    let q = pointwise(f_m, &p.cross[m.index()].query);
    let k = pointwise(f_other, &p.cross[1 - m.index()].key);
    let v = pointwise(f_other, &p.cross[1 - m.index()].value);
    let mut out: Vec<f64> = f_m.data().iter().map(|&x| x as f64).collect();
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let (y0, x0) = (y / win * win, x / win * win);
                let keys: Vec<usize> = (y0..y0 + win)
                    .flat_map(|ky| (x0..x0 + win).map(move |kx| ky * w + kx))
                    .collect();
                for hd in 0..heads {
                    let scores: Vec<f64> = keys
                        .iter()
                        .map(|&kp| {
                            (0..d)
                                .map(|j| q[b][hd * d + j][y * w + x] * k[b][hd * d + j][kp])
                                .sum::<f64>()
                                / (d as f64).sqrt()
                        })
                        .collect();
                    let probs = softmax(&scores);
                    for j in 0..d {
                        let a: f64 = probs.iter().zip(&keys).map(|(pr, &kp)| pr * v[b][hd * d + j][kp]).sum();
                        out[((b * c + hd * d + j) * h + y) * w + x] += a;
                    }
                }
            }
        }
    }
    out
}

#[test]
fn window_cross_attention_matches_naive_oracle() {
    for (c, heads, win, size, seed) in [(8, 2, 4, 8, 1), (8, 2, 4, 16, 2), (8, 4, 8, 16, 3), (4, 1, 2, 8, 4)] {
        let cfg = McafConfig {
            channels: c,
            heads,
            window: win,
            region_grid: 2,
        };
        let p = randomized(&cfg, seed);
        let a = uniform([1, c, size, size], -1.0, 1.0, seed * 10);
        let b = uniform([1, c, size, size], -1.0, 1.0, seed * 10 + 1);
        for m in [Modality::Rgb, Modality::Ir] {
            let got = window_cross_attention(&a, &b, m, &p, &cfg).unwrap();
            let want = naive_window_attention(&a, &b, m, &p, &cfg);
            let err = got
                .data()
                .iter()
                .zip(&want)
                .map(|(&g, &w)| (g as f64 - w).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-5, "c={c} h={heads} w={win} size={size}: {err}");
        }
    }
}

#[test]
fn full_window_agrees_with_tiles_on_periodic_content() {
    // When every tile holds the same content, a query sees each key pattern
    // equally often in the full window, so both forms give the same result.
    let (c, win, size) = (8, 4, 16);
    let tile = uniform([1, c, win, win], -1.0, 1.0, 9);
    let other_tile = uniform([1, c, win, win], -1.0, 1.0, 10);
    let periodic =
        |t: &Tensor4| Tensor4::from_fn([1, c, size, size], |_, ch, y, x| t.at(0, ch, y % win, x % win)).unwrap();
    let (a, b) = (periodic(&tile), periodic(&other_tile));
    let tiled = McafConfig {
        channels: c,
        heads: 2,
        window: win,
        region_grid: 1,
    };
    let full = McafConfig { window: size, ..tiled };
    let p = randomized(&tiled, 11);
    let x = window_cross_attention(&a, &b, Modality::Rgb, &p, &tiled).unwrap();
    let y = window_cross_attention(&a, &b, Modality::Rgb, &p, &full).unwrap();
    assert!(x.max_abs_diff(&y).unwrap() < 1e-5);
}

#[test]
fn global_gate_matches_four_token_oracle() {
    let c = 4;
    let cfg = McafConfig {
        channels: c,
        heads: 1,
        window: 2,
        region_grid: 2,
    };
    let p = randomized(&cfg, 21);
    let f = uniform([1, c, 4, 4], -2.0, 2.0, 22);

    // Region means over the 2×2 grid, one token per region.
    let tokens: Vec<Vec<f64>> = (0..4)
        .map(|r| {
            let (gy, gx) = (r / 2, r % 2);
            (0..c)
                .map(|ch| {
                    let mut s = 0.0;
                    for y in 0..2 {
                        for x in 0..2 {
                            s += f.at(0, ch, gy * 2 + y, gx * 2 + x) as f64;
                        }
                    }
                    s / 4.0
                })
                .collect()
        })
        .collect();
    let proj = |conv: &fmcaf::tensor::Conv, t: &[f64]| -> Vec<f64> {
        let w = conv.weight.data();
        (0..conv.out_channels())
            .map(|o| conv.bias[o] as f64 + (0..t.len()).map(|i| w[o * t.len() + i] as f64 * t[i]).sum::<f64>())
            .collect()
    };
    let q: Vec<_> = tokens.iter().map(|t| proj(&p.global.query, t)).collect();
    let k: Vec<_> = tokens.iter().map(|t| proj(&p.global.key, t)).collect();
    let v: Vec<_> = tokens.iter().map(|t| proj(&p.global.value, t)).collect();
    let gate: Vec<f64> = (0..4)
        .map(|i| {
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| q[i].iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / (c as f64).sqrt())
                .collect();
            let pr = softmax(&scores);
            let att: Vec<f64> = (0..c).map(|ch| (0..4).map(|j| pr[j] * v[j][ch]).sum()).collect();
            let logit = proj(&p.global_out, &att)[0];
            1.0 / (1.0 + (-logit).exp())
        })
        .collect();

    let regions = global_gate_regions(&f, &p, &cfg).unwrap();
    for (r, want) in gate.iter().enumerate() {
        assert!((regions.data()[r] as f64 - want).abs() < 1e-6, "region {r}");
    }
    let full = global_gate(&f, &p, &cfg).unwrap();
    assert_eq!(full.dims(), [1, 1, 4, 4]);
    for y in 0..4 {
        for x in 0..4 {
            assert_eq!(full.at(0, 0, y, x), regions.data()[(y / 2) * 2 + x / 2]);
        }
    }
}

#[test]
fn amplitude_map_matches_naive_dft() {
    let x = uniform([1, 3, 8, 8], 0.0, 1.0, 31);
    let got = amplitude_map(&x).unwrap();
    assert_eq!(got.dims(), [1, 1, 8, 8]);
    let per_channel: Vec<(Vec<f64>, Vec<f64>)> = (0..3).map(|c| naive_dft(x.plane(0, c), 8, 8)).collect();
    for i in 0..64 {
        let want = per_channel.iter().map(|(re, im)| re[i].hypot(im[i])).sum::<f64>() / 3.0;
        assert!((got.data()[i] as f64 - want).abs() < 1e-4, "position {i}");
    }
    // Per-channel magnitudes also agree.
    let amp = amplitude(&dft2(&x).unwrap());
    for (c, (re, im)) in per_channel.iter().enumerate() {
        for i in 0..64 {
            assert!((amp.plane(0, c)[i] as f64 - re[i].hypot(im[i])).abs() < 1e-4);
        }
    }
}
