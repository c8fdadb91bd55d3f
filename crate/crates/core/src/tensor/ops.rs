use super::{Rng, Tensor4};
use crate::error::{Error, Result};

/// Largest `f32` strictly below one.
const ONE_MINUS_ULP: f32 = 1.0 - f32::EPSILON / 2.0;

const BLOCK_FLOATS: usize = 8192;

/// 2D cross-correlation with zero padding.
///
/// `kernel` is `(Cout, Cin, kh, kw)` with odd spatial extents; `bias` holds
/// `Cout` values.
pub fn conv2d(x: &Tensor4, kernel: &Tensor4, bias: &[f32], stride: usize, pad: usize) -> Result<Tensor4> {
    let [n, cin, h, w] = x.dims();
    let [cout, kcin, kh, kw] = kernel.dims();
    if kcin != cin {
        return Err(Error::shape(format!(
            "conv2d: input has {cin} channels, kernel expects {kcin}"
        )));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::shape(format!("conv2d: kernel {kh}x{kw} is not odd")));
    }
    if bias.len() != cout {
        return Err(Error::shape(format!(
            "conv2d: {} bias values for {cout} output channels",
            bias.len()
        )));
    }
    if stride == 0 {
        return Err(Error::shape("conv2d: stride must be at least 1"));
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::shape(format!(
            "conv2d: {h}x{w} input with pad {pad} is smaller than the {kh}x{kw} kernel"
        )));
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor4::zeros([n, cout, oh, ow]);
    let kdata = kernel.data();

    // Output rows are processed in cache-sized blocks; each output value
    // still accumulates taps in (ci, ky, kx) order.
    let block = (BLOCK_FLOATS / ow.max(1)).max(1);
    for b in 0..n {
        for co in 0..cout {
            let plane = out.plane_mut(b, co);
            plane.fill(bias[co]);
            for oy0 in (0..oh).step_by(block) {
                for ci in 0..cin {
                    let input = x.plane(b, ci);
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wv = kdata[((co * cin + ci) * kh + ky) * kw + kx];
                            // Output columns whose tap lands inside the input row.
                            let ox_lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(stride) };
                            let ox_hi = if w + pad > kx {
                                ((w - 1 + pad - kx) / stride + 1).min(ow)
                            } else {
                                0
                            };
                            if ox_lo >= ox_hi {
                                continue;
                            }
                            for oy in oy0..(oy0 + block).min(oh) {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let in_row = &input[iy as usize * w..(iy as usize + 1) * w];
                                let out_row = &mut plane[oy * ow..(oy + 1) * ow];
                                if stride == 1 {
                                    let ix0 = ox_lo + kx - pad;
                                    let src = &in_row[ix0..ix0 + (ox_hi - ox_lo)];
                                    for (o, &v) in out_row[ox_lo..ox_hi].iter_mut().zip(src) {
                                        *o += wv * v;
                                    }
                                } else {
                                    for (ox, o) in out_row.iter_mut().enumerate().take(ox_hi).skip(ox_lo) {
                                        *o += wv * in_row[ox * stride + kx - pad];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Numerically stable softmax of a contiguous slice, in place.
pub(crate) fn softmax_slice(values: &mut [f32]) {
    let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f64;
    for v in values.iter_mut() {
        let e = libm::expf(*v - max);
        sum += e as f64;
        *v = e;
    }
    for v in values.iter_mut() {
        *v = (*v as f64 / sum) as f32;
    }
}

/// Softmax along `axis`, computed with max subtraction.
pub fn softmax(x: &Tensor4, axis: usize) -> Result<Tensor4> {
    if axis >= 4 {
        return Err(Error::shape(format!("softmax: axis {axis} out of range")));
    }
    let dims = x.dims();
    let len = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let mut out = x.clone();
    let data = out.data_mut();
    let mut lane = vec![0f32; len];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            for (k, slot) in lane.iter_mut().enumerate() {
                *slot = data[base + k * inner];
            }
            softmax_slice(&mut lane);
            for (k, v) in lane.iter().enumerate() {
                data[base + k * inner] = *v;
            }
        }
    }
    Ok(out)
}

pub(crate) fn sigmoid_scalar(v: f32) -> f32 {
    let s = 1.0 / (1.0 + libm::exp(-(v as f64)));
    (s as f32).clamp(f32::MIN_POSITIVE, ONE_MINUS_ULP)
}

/// Logistic function; results are kept strictly inside `(0, 1)` even where
/// `f32` rounding would saturate.
pub fn sigmoid(x: &Tensor4) -> Tensor4 {
    x.map(sigmoid_scalar)
}

pub fn relu(x: &Tensor4) -> Tensor4 {
    x.map(|v| v.max(0.0))
}

/// Square average pooling; padded positions count as zeros in the mean.
pub fn avg_pool2d(x: &Tensor4, kernel: usize, stride: usize, pad: usize) -> Result<Tensor4> {
    let [n, c, h, w] = x.dims();
    if kernel == 0 || stride == 0 || h + 2 * pad < kernel || w + 2 * pad < kernel {
        return Err(Error::shape(format!(
            "avg_pool2d: kernel {kernel}, stride {stride}, pad {pad} invalid for {h}x{w}"
        )));
    }
    let oh = (h + 2 * pad - kernel) / stride + 1;
    let ow = (w + 2 * pad - kernel) / stride + 1;
    let area = (kernel * kernel) as f64;
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0f64;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += src[iy as usize * w + ix as usize] as f64;
                        }
                    }
                    dst[oy * ow + ox] = (acc / area) as f32;
                }
            }
        }
    }
    Ok(out)
}

/// Concatenation along `axis`; all other extents must agree.
pub fn concat(parts: &[&Tensor4], axis: usize) -> Result<Tensor4> {
    let first = parts.first().ok_or_else(|| Error::shape("concat: no tensors given"))?;
    if axis >= 4 {
        return Err(Error::shape(format!("concat: axis {axis} out of range")));
    }
    let base = first.dims();
    for p in parts {
        let d = p.dims();
        if (0..4).any(|i| i != axis && d[i] != base[i]) {
            return Err(Error::shape(format!(
                "concat: {d:?} does not match {base:?} outside axis {axis}"
            )));
        }
    }
    let mut dims = base;
    dims[axis] = parts.iter().map(|p| p.dims()[axis]).sum();
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(dims.iter().product());
    for o in 0..outer {
        for p in parts {
            let chunk = p.dims()[axis] * inner;
            data.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Ok(Tensor4::from_raw(dims, data))
}

fn broadcast_zip(a: &Tensor4, b: &Tensor4, op: impl Fn(f32, f32) -> f32, name: &str) -> Result<Tensor4> {
    let ad = a.dims();
    let bd = b.dims();
    if (0..4).any(|i| bd[i] != ad[i] && bd[i] != 1) {
        return Err(Error::shape(format!("{name}: {bd:?} does not broadcast to {ad:?}")));
    }
    if ad == bd {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| op(x, y)).collect();
        return Ok(Tensor4::from_raw(ad, data));
    }
    let pick = |i: usize, v: usize| if bd[i] == 1 { 0 } else { v };
    let mut data = Vec::with_capacity(a.len());
    for n in 0..ad[0] {
        for c in 0..ad[1] {
            for y in 0..ad[2] {
                for x in 0..ad[3] {
                    let bv = b.at(pick(0, n), pick(1, c), pick(2, y), pick(3, x));
                    data.push(op(a.at(n, c, y, x), bv));
                }
            }
        }
    }
    Ok(Tensor4::from_raw(ad, data))
}

/// `a + b`, with `b` broadcast over any of its unit axes.
pub fn add(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    broadcast_zip(a, b, |x, y| x + y, "add")
}

/// `a ⊙ b`, with `b` broadcast over any of its unit axes.
pub fn mul(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    broadcast_zip(a, b, |x, y| x * y, "mul")
}

pub fn scale(a: &Tensor4, factor: f32) -> Tensor4 {
    a.map(|v| v * factor)
}

/// Mean over `axis`, keeping it as a unit dimension.
pub fn mean_axis(x: &Tensor4, axis: usize) -> Result<Tensor4> {
    if axis >= 4 {
        return Err(Error::shape(format!("mean_axis: axis {axis} out of range")));
    }
    let dims = x.dims();
    let len = dims[axis];
    if len == 0 {
        return Err(Error::shape("mean_axis: empty axis"));
    }
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let mut out_dims = dims;
    out_dims[axis] = 1;
    let mut data = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let sum: f64 = (0..len).map(|k| x.data()[o * len * inner + k * inner + i] as f64).sum();
            data.push((sum / len as f64) as f32);
        }
    }
    Ok(Tensor4::from_raw(out_dims, data))
}

/// Nearest-neighbour upsampling by integer factors.
pub fn upsample_nearest(x: &Tensor4, fy: usize, fx: usize) -> Result<Tensor4> {
    if fy == 0 || fx == 0 {
        return Err(Error::shape("upsample_nearest: factors must be at least 1"));
    }
    let [n, c, h, w] = x.dims();
    let (oh, ow) = (h * fy, w * fx);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch).to_vec();
            let dst = out.plane_mut(b, ch);
            for oy in 0..oh {
                for ox in 0..ow {
                    dst[oy * ow + ox] = src[(oy / fy) * w + ox / fx];
                }
            }
        }
    }
    Ok(out)
}

/// Uniform `(-s, s)` initialisation with `s = sqrt(6 / fan_in)`.
pub fn init_params(rng: &mut Rng, dims: [usize; 4], fan_in: usize) -> Result<Tensor4> {
    if fan_in == 0 {
        return Err(Error::shape("init_params: fan_in must be at least 1"));
    }
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    let data = (0..dims.iter().product::<usize>())
        .map(|_| rng.symmetric_f32(bound))
        .collect();
    Ok(Tensor4::from_raw(dims, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(dims: [usize; 4], seed: u64) -> Tensor4 {
        let mut rng = Rng::new(seed);
        Tensor4::from_fn(dims, |_, _, _, _| rng.symmetric_f32(1.0)).unwrap()
    }

    /// Direct six-loop convolution, independent of the row-slice kernel.
    #[allow(clippy::needless_range_loop)]
    fn conv_oracle(x: &Tensor4, k: &Tensor4, bias: &[f32], stride: usize, pad: usize) -> Vec<f64> {
        let [n, cin, h, w] = x.dims();
        let [cout, _, kh, kw] = k.dims();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let mut out = Vec::new();
        for b in 0..n {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = bias[co] as f64;
                        for ci in 0..cin {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        s += x.at(b, ci, iy as usize, ix as usize) as f64 * k.at(co, ci, ky, kx) as f64;
                                    }
                                }
                            }
                        }
                        out.push(s);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_box_sum() {
        let x = Tensor4::full([1, 1, 3, 3], 1.0);
        let k = Tensor4::full([1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, &[0.0], 1, 1).unwrap();
        assert_eq!(y.dims(), [1, 1, 3, 3]);
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
        assert_eq!(y.at(0, 0, 2, 2), 4.0);
        assert_eq!(y.at(0, 0, 0, 1), 6.0);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = random([2, 1, 5, 4], 1);
        let k = Tensor4::full([1, 1, 1, 1], 1.0);
        assert_eq!(conv2d(&x, &k, &[0.0], 1, 0).unwrap(), x);
    }

    #[test]
    fn conv_matches_oracle() {
        let x = random([2, 3, 8, 8], 10);
        let k = random([4, 3, 3, 3], 11);
        let bias = [0.1, -0.2, 0.3, 0.0];
        for (stride, pad) in [(1, 1), (1, 0), (2, 1), (3, 2)] {
            let got = conv2d(&x, &k, &bias, stride, pad).unwrap();
            let want = conv_oracle(&x, &k, &bias, stride, pad);
            assert_eq!(got.len(), want.len());
            for (g, w) in got.data().iter().zip(&want) {
                assert!((*g as f64 - w).abs() < 1e-5, "stride {stride} pad {pad}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn conv_shape_errors() {
        let x = random([1, 2, 4, 4], 2);
        assert!(matches!(
            conv2d(&x, &random([1, 3, 3, 3], 3), &[0.0], 1, 1),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            conv2d(&x, &random([1, 2, 2, 2], 3), &[0.0], 1, 1),
            Err(Error::Shape(_))
        ));
        assert!(conv2d(&x, &random([1, 2, 3, 3], 3), &[0.0], 0, 1).is_err());
    }

    #[test]
    fn softmax_examples() {
        let t = Tensor4::new([1, 1, 1, 2], vec![0.0, 0.0]).unwrap();
        assert_eq!(softmax(&t, 3).unwrap().data(), &[0.5, 0.5]);

        let t = Tensor4::new([1, 1, 1, 3], vec![1000.0; 3]).unwrap();
        for v in softmax(&t, 3).unwrap().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }

        let t = Tensor4::new([1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let s = softmax(&t, 3).unwrap();
        let denom: f64 = (1..=3).map(|i| (i as f64).exp()).sum();
        for (i, v) in s.data().iter().enumerate() {
            let want = ((i + 1) as f64).exp() / denom;
            assert!((*v as f64 - want).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_along_channel_axis() {
        let x = random([2, 5, 3, 3], 4);
        let s = softmax(&x, 1).unwrap();
        for b in 0..2 {
            for y in 0..3 {
                for xx in 0..3 {
                    let sum: f64 = (0..5).map(|c| s.at(b, c, y, xx) as f64).sum();
                    assert!((sum - 1.0).abs() < 1e-6);
                }
            }
        }
        assert!(softmax(&x, 4).is_err());
    }

    #[test]
    fn sigmoid_examples() {
        let t = Tensor4::new([1, 1, 1, 4], vec![0.0, 2.0, -2.0, 80.0]).unwrap();
        let s = sigmoid(&t);
        assert_eq!(s.data()[0], 0.5);
        assert!((s.data()[1] - 0.880797).abs() < 1e-5);
        assert!((s.data()[1] + s.data()[2] - 1.0).abs() < 1e-6);
        assert!(s.data()[3] < 1.0);
        let tiny = sigmoid(&Tensor4::full([1, 1, 1, 1], -500.0));
        assert!(tiny.data()[0] > 0.0);
    }

    #[test]
    fn avg_pool_counts_padding() {
        let x = Tensor4::full([1, 1, 3, 3], 9.0);
        let p = avg_pool2d(&x, 3, 1, 1).unwrap();
        assert_eq!(p.at(0, 0, 1, 1), 9.0);
        assert_eq!(p.at(0, 0, 0, 0), 4.0);
    }

    #[test]
    fn concat_and_split_channel_axis() {
        let a = random([2, 3, 2, 2], 5);
        let b = random([2, 1, 2, 2], 6);
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.dims(), [2, 4, 2, 2]);
        assert_eq!(c.channel_range(0..3).unwrap(), a);
        assert_eq!(c.channel_range(3..4).unwrap(), b);
        assert!(concat(&[&a, &random([1, 1, 2, 2], 7)], 1).is_err());
        let w = concat(&[&a, &a], 3).unwrap();
        assert_eq!(w.at(1, 2, 1, 3), a.at(1, 2, 1, 1));
    }

    #[test]
    fn broadcast_mul_over_channels() {
        let a = random([1, 3, 2, 2], 8);
        let m = Tensor4::new([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let p = mul(&a, &m).unwrap();
        assert_eq!(p.at(0, 2, 1, 1), a.at(0, 2, 1, 1) * 3.0);
        assert!(mul(&m, &a).is_err());
        let s = add(&a, &Tensor4::full([1, 1, 1, 1], 1.0)).unwrap();
        assert_eq!(s.at(0, 1, 0, 1), a.at(0, 1, 0, 1) + 1.0);
    }

    #[test]
    fn mean_and_upsample() {
        let x = Tensor4::new([1, 2, 1, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        assert_eq!(mean_axis(&x, 1).unwrap().data(), &[2.0, 4.0]);
        let u = upsample_nearest(&Tensor4::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), 2, 2).unwrap();
        assert_eq!(u.dims(), [1, 1, 4, 4]);
        assert_eq!(u.plane(0, 0)[..8], [1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn init_params_bounds_determinism_and_mean() {
        let a = init_params(&mut Rng::new(9), [4, 6, 3, 3], 6).unwrap();
        assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let b = init_params(&mut Rng::new(9), [4, 6, 3, 3], 6).unwrap();
        assert_eq!(a, b);
        let big = init_params(&mut Rng::new(10), [1, 1, 1, 100_000], 6).unwrap();
        let mean: f64 = big.data().iter().map(|&v| v as f64).sum::<f64>() / 1e5;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!(init_params(&mut Rng::new(1), [1, 1, 1, 1], 0).is_err());
    }
}
