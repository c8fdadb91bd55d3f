//! Built-in invariant suite. Every check compares the library against a
//! direct computation written here, not against another library routine.

use fmcaf::fft::{dft2, idft2};
use fmcaf::freq_filter::{filter_batch, topk_mask, FilterConfig, FilterParams, Modality};
use fmcaf::gradcheck::numeric_grad;
use fmcaf::mcaf::{
    global_gate, modality_softmax, residual_apply, window_cross_attention, McafConfig, McafParams, QkvProj,
};
use fmcaf::tensor::{conv2d, matmul_batched, softmax, Conv, MatBatch};
use fmcaf::weights::{decode, encode};
use fmcaf::{Error, FusionConfig, FusionParams, Pipeline, Rng, Tensor4};

type Check = fn() -> Result<(), String>;

const CHECKS: &[(&str, Check)] = &[
    ("fft_round_trip", fft_round_trip),
    ("fft_matches_direct_dft", fft_matches_direct_dft),
    ("fft_parseval", fft_parseval),
    ("fft_conjugate_symmetry", fft_conjugate_symmetry),
    ("conv2d_matches_nested_loops", conv2d_matches_nested_loops),
    ("matmul_matches_triple_loop", matmul_matches_triple_loop),
    ("softmax_normalization", softmax_normalization),
    ("mask_contracts", mask_contracts),
    ("filter_identity_alpha_zero", filter_identity_alpha_zero),
    ("filter_identity_full_ratio", filter_identity_full_ratio),
    ("filter_energy_non_increase", filter_energy_non_increase),
    ("window_attention_matches_direct", window_attention_matches_direct),
    ("modality_weights_sum_to_one", modality_weights_sum_to_one),
    ("gate_open_interval", gate_open_interval),
    ("zero_projection_gate_residual", zero_projection_gate_residual),
    ("end_to_end_contract", end_to_end_contract),
    ("weights_round_trip", weights_round_trip),
    ("numeric_grad_polynomial", numeric_grad_polynomial),
];

fn random(dims: [usize; 4], seed: u64) -> Tensor4 {
    let mut rng = Rng::new(seed);
    Tensor4::from_fn(dims, |_, _, _, _| rng.unit_f32()).expect("finite")
}

fn ensure(ok: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

fn err(e: Error) -> String {
    e.to_string()
}

fn fft_round_trip() -> Result<(), String> {
    for (i, size) in [8usize, 16, 32, 64].into_iter().enumerate() {
        let x = random([1, 2, size, size], i as u64);
        let rec = idft2(&dft2(&x).map_err(err)?).map_err(err)?;
        let diff = rec.image.max_abs_diff(&x).map_err(err)?;
        ensure(diff < 1e-5, || format!("{size}x{size}: {diff}"))?;
    }
    Ok(())
}

fn fft_matches_direct_dft() -> Result<(), String> {
    for (h, w) in [(8usize, 8usize), (6, 10), (16, 4)] {
        let x = random([1, 1, h, w], (h * w) as u64);
        let s = dft2(&x).map_err(err)?;
        for u in 0..h {
            for v in 0..w {
                let (mut re, mut im) = (0f64, 0f64);
                for y in 0..h {
                    for xx in 0..w {
                        let ang = -std::f64::consts::TAU * ((u * y) as f64 / h as f64 + (v * xx) as f64 / w as f64);
                        re += x.at(0, 0, y, xx) as f64 * ang.cos();
                        im += x.at(0, 0, y, xx) as f64 * ang.sin();
                    }
                }
                let (gr, gi) = s.coeff(0, u, v);
                ensure((gr as f64 - re).abs() < 1e-4 && (gi as f64 - im).abs() < 1e-4, || {
                    format!("{h}x{w} at ({u},{v})")
                })?;
            }
        }
    }
    Ok(())
}

fn fft_parseval() -> Result<(), String> {
    let x = random([1, 1, 32, 32], 7);
    let s = dft2(&x).map_err(err)?;
    let spatial: f64 = x.data().iter().map(|&v| (v as f64).powi(2)).sum();
    let spectral: f64 = s
        .re()
        .iter()
        .zip(s.im())
        .map(|(&r, &i)| (r as f64).powi(2) + (i as f64).powi(2))
        .sum();
    let rel = (spatial - spectral / 1024.0).abs() / spatial;
    ensure(rel < 1e-3, || format!("relative gap {rel}"))
}

fn fft_conjugate_symmetry() -> Result<(), String> {
    let x = random([1, 1, 16, 16], 8);
    let s = dft2(&x).map_err(err)?;
    for u in 0..16 {
        for v in 0..16 {
            let (a, b) = (s.coeff(0, u, v), s.coeff(0, (16 - u) % 16, (16 - v) % 16));
            ensure((a.0 - b.0).abs() < 1e-4 && (a.1 + b.1).abs() < 1e-4, || {
                format!("({u},{v})")
            })?;
        }
    }
    Ok(())
}

#[allow(clippy::needless_range_loop)]
fn conv2d_matches_nested_loops() -> Result<(), String> {
    let x = random([2, 3, 9, 7], 11);
    let k = random([4, 3, 3, 3], 12);
    let bias = [0.1, -0.2, 0.3, 0.0];
    for stride in [1usize, 2] {
        let out = conv2d(&x, &k, &bias, stride, 1).map_err(err)?;
        let [_, _, oh, ow] = out.dims();
        for b in 0..2 {
            for co in 0..4 {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias[co] as f64;
                        for ci in 0..3 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let (iy, ix) = ((oy * stride + ky) as isize - 1, (ox * stride + kx) as isize - 1);
                                    if (0..9).contains(&iy) && (0..7).contains(&ix) {
                                        acc +=
                                            k.at(co, ci, ky, kx) as f64 * x.at(b, ci, iy as usize, ix as usize) as f64;
                                    }
                                }
                            }
                        }
                        ensure((out.at(b, co, oy, ox) as f64 - acc).abs() < 1e-5, || {
                            format!("stride {stride} at ({b},{co},{oy},{ox})")
                        })?;
                    }
                }
            }
        }
    }
    Ok(())
}

fn matmul_matches_triple_loop() -> Result<(), String> {
    let mut rng = Rng::new(13);
    let a: Vec<f32> = (0..2 * 5 * 4).map(|_| rng.symmetric_f32(1.0)).collect();
    let b: Vec<f32> = (0..2 * 4 * 3).map(|_| rng.symmetric_f32(1.0)).collect();
    let c = matmul_batched(
        &MatBatch::new(2, 5, 4, a.clone()).map_err(err)?,
        &MatBatch::new(2, 4, 3, b.clone()).map_err(err)?,
    )
    .map_err(err)?;
    for bt in 0..2 {
        for i in 0..5 {
            for j in 0..3 {
                let want: f64 = (0..4)
                    .map(|k| a[bt * 20 + i * 4 + k] as f64 * b[bt * 12 + k * 3 + j] as f64)
                    .sum();
                ensure((c.get(bt, i, j) as f64 - want).abs() < 1e-5, || {
                    format!("({bt},{i},{j})")
                })?;
            }
        }
    }
    Ok(())
}

fn softmax_normalization() -> Result<(), String> {
    let mut rng = Rng::new(14);
    let x = Tensor4::from_fn([2, 3, 4, 5], |_, _, _, _| rng.symmetric_f32(1e4)).map_err(err)?;
    for axis in 0..4 {
        let s = softmax(&x, axis).map_err(err)?;
        let d = s.dims();
        let inner: usize = d[axis + 1..].iter().product();
        let outer: usize = d[..axis].iter().product();
        for o in 0..outer {
            for i in 0..inner {
                let sum: f64 = (0..d[axis])
                    .map(|a| s.data()[(o * d[axis] + a) * inner + i] as f64)
                    .sum();
                ensure((sum - 1.0).abs() < 1e-6, || format!("axis {axis}: sum {sum}"))?;
            }
        }
    }
    Ok(())
}

fn mask_contracts() -> Result<(), String> {
    for seed in 0..100u64 {
        let act = random([1, 1, 16, 16], 1000 + seed);
        let ratio = 0.05 + 0.9 * (seed as f64 / 100.0);
        let m = topk_mask(&act, ratio).map_err(err)?;
        let floor = ((ratio * 256.0).floor() as usize).max(1);
        ensure(m.count() >= floor, || format!("seed {seed}: {} < {floor}", m.count()))?;
        ensure(m.get(0, 0), || format!("seed {seed}: DC dropped"))?;
        for u in 0..16 {
            for v in 0..16 {
                ensure(m.get(u, v) == m.get((16 - u) % 16, (16 - v) % 16), || {
                    format!("seed {seed}: asymmetric")
                })?;
            }
        }
    }
    Ok(())
}

fn filter_identity_alpha_zero() -> Result<(), String> {
    let x = random([1, 4, 16, 16], 15);
    let batch = filter_batch(&x, &FilterParams::init(1, 0.0), &FilterConfig::default()).map_err(err)?;
    let diff = batch.blend([0.0, 0.0]).map_err(err)?.max_abs_diff(&x).map_err(err)?;
    ensure(diff < 1e-6, || format!("diff {diff}"))
}

fn filter_identity_full_ratio() -> Result<(), String> {
    let x = random([1, 4, 16, 16], 16);
    let cfg = FilterConfig {
        topk_ratio: 1.0,
        alpha_init: 0.7,
    };
    let batch = filter_batch(&x, &FilterParams::init(1, 0.7), &cfg).map_err(err)?;
    let diff = batch.blend([0.7, 1.0]).map_err(err)?.max_abs_diff(&x).map_err(err)?;
    ensure(diff < 1e-4, || format!("diff {diff}"))
}

fn filter_energy_non_increase() -> Result<(), String> {
    let x = random([1, 4, 32, 32], 17);
    let batch = filter_batch(&x, &FilterParams::init(2, 0.2), &FilterConfig::default()).map_err(err)?;
    for c in 0..4 {
        let before: f64 = x.plane(0, c).iter().map(|&v| (v as f64).powi(2)).sum();
        let after: f64 = batch.filtered.plane(0, c).iter().map(|&v| (v as f64).powi(2)).sum();
        ensure(after <= before + 1e-3, || format!("channel {c}: {after} > {before}"))?;
    }
    Ok(())
}

fn project(conv: &Conv, x: &Tensor4, co: usize, y: usize, xx: usize) -> f64 {
    let cin = conv.in_channels();
    conv.bias[co] as f64
        + (0..cin)
            .map(|ci| conv.weight.data()[co * cin + ci] as f64 * x.at(0, ci, y, xx) as f64)
            .sum::<f64>()
}

fn window_attention_matches_direct() -> Result<(), String> {
    let cfg = McafConfig {
        channels: 8,
        heads: 2,
        window: 4,
        region_grid: 2,
    };
    let mut params = McafParams::init(18, &cfg);
    params.cross[1] = QkvProj::init(19, "selftest.other", 8);
    let (a, b) = (random([1, 8, 8, 8], 20), random([1, 8, 8, 8], 21));
    let got = window_cross_attention(&a, &b, Modality::Rgb, &params, &cfg).map_err(err)?;
    let (own, other) = (&params.cross[0], &params.cross[1]);
    let d = 4;
    for y in 0..8 {
        for x in 0..8 {
            let (y0, x0) = (y / 4 * 4, x / 4 * 4);
            for hd in 0..2 {
                let q: Vec<f64> = (0..d).map(|j| project(&own.query, &a, hd * d + j, y, x)).collect();
                let mut scores = Vec::new();
                let mut values = Vec::new();
                for ky in y0..y0 + 4 {
                    for kx in x0..x0 + 4 {
                        let k: f64 = (0..d).map(|j| q[j] * project(&other.key, &b, hd * d + j, ky, kx)).sum();
                        scores.push(k / (d as f64).sqrt());
                        values.push(
                            (0..d)
                                .map(|j| project(&other.value, &b, hd * d + j, ky, kx))
                                .collect::<Vec<_>>(),
                        );
                    }
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let total: f64 = e.iter().sum();
                for j in 0..d {
                    let want = a.at(0, hd * d + j, y, x) as f64
                        + e.iter().zip(&values).map(|(w, v)| w / total * v[j]).sum::<f64>();
                    let have = got.at(0, hd * d + j, y, x) as f64;
                    ensure((have - want).abs() < 1e-5, || {
                        format!("({y},{x}) head {hd}: {have} vs {want}")
                    })?;
                }
            }
        }
    }
    Ok(())
}

fn modality_weights_sum_to_one() -> Result<(), String> {
    for seed in 0..50u64 {
        let mut rng = Rng::new(seed);
        let a = Tensor4::from_fn([1, 1, 8, 8], |_, _, _, _| rng.symmetric_f32(50.0)).map_err(err)?;
        let b = Tensor4::from_fn([1, 1, 8, 8], |_, _, _, _| rng.symmetric_f32(50.0)).map_err(err)?;
        let (wa, wb) = modality_softmax(&a, &b);
        for (x, y) in wa.data().iter().zip(wb.data()) {
            ensure((*x as f64 + *y as f64 - 1.0).abs() < 1e-6, || format!("seed {seed}"))?;
        }
    }
    Ok(())
}

fn gate_open_interval() -> Result<(), String> {
    let cfg = McafConfig {
        channels: 8,
        heads: 2,
        window: 4,
        region_grid: 4,
    };
    let params = McafParams::init(22, &cfg);
    for scale in [1.0f32, 1e3] {
        let mut rng = Rng::new(23);
        let f = Tensor4::from_fn([1, 8, 16, 16], |_, _, _, _| rng.symmetric_f32(scale)).map_err(err)?;
        let g = global_gate(&f, &params, &cfg).map_err(err)?;
        ensure(g.data().iter().all(|&v| v > 0.0 && v < 1.0), || {
            format!("scale {scale}: gate left (0, 1)")
        })?;
        let out = residual_apply(&f, &g).map_err(err)?;
        for c in 0..8 {
            for i in 0..256 {
                let want = f.plane(0, c)[i] * (1.0 + g.data()[i]);
                ensure(out.plane(0, c)[i] == want, || {
                    format!("residual mismatch at channel {c}")
                })?;
            }
        }
    }
    Ok(())
}

fn zero_projection_gate_residual() -> Result<(), String> {
    let cfg = McafConfig {
        channels: 8,
        heads: 2,
        window: 4,
        region_grid: 4,
    };
    let mut params = McafParams::init(24, &cfg);
    params.global = QkvProj::zeros(8);
    params.global_out = Conv::zeros(1, 8, 1);
    let f = random([1, 8, 16, 16], 25);
    let out = residual_apply(&f, &global_gate(&f, &params, &cfg).map_err(err)?).map_err(err)?;
    for (o, v) in out.data().iter().zip(f.data()) {
        ensure((o - 1.5 * v).abs() < 1e-6, || format!("{o} vs 1.5 x {v}"))?;
    }
    Ok(())
}

fn end_to_end_contract() -> Result<(), String> {
    let cfg = FusionConfig {
        seed: 26,
        image_size: 64,
        ..FusionConfig::default()
    };
    let pipeline = Pipeline::new(cfg).map_err(err)?;
    let x = random([1, 4, 64, 64], 27);
    let a = pipeline.forward(&x).map_err(err)?.image;
    let b = pipeline.forward(&x).map_err(err)?.image;
    ensure(a.dims() == [1, 3, 64, 64], || format!("dims {:?}", a.dims()))?;
    ensure(a.data().iter().all(|v| (0.0..=1.0).contains(v)), || {
        "value outside [0, 1]".into()
    })?;
    ensure(a == b, || "two runs differ".into())
}

fn weights_round_trip() -> Result<(), String> {
    let cfg = FusionConfig {
        seed: 28,
        channels: 8,
        heads: 2,
        image_size: 32,
        ..FusionConfig::default()
    };
    let params = FusionParams::init(&cfg);
    let back = decode(&encode(&params), &cfg).map_err(err)?;
    ensure(back == params, || "decoded parameters differ".into())
}

fn numeric_grad_polynomial() -> Result<(), String> {
    let p = [0.5, -1.5, 2.0];
    let g = numeric_grad(|q| Ok(q[0].powi(3) + 2.0 * q[1] * q[1] - q[2]), &p, 1e-3).map_err(err)?;
    let want = [3.0 * p[0] * p[0], 4.0 * p[1], -1.0];
    for (a, b) in g.iter().zip(want) {
        ensure((a - b).abs() <= 1e-4 * b.abs().max(1.0), || format!("{a} vs {b}"))?;
    }
    Ok(())
}

pub fn run() -> fmcaf::Result<()> {
    let mut failed = 0;
    for (name, check) in CHECKS {
        match check() {
            Ok(()) => println!("PASS {name}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL {name}");
                eprintln!("{name}: {reason}");
            }
        }
    }
    if failed > 0 {
        return Err(Error::Numeric(format!(
            "{failed} of {} self-test properties failed",
            CHECKS.len()
        )));
    }
    Ok(())
}
