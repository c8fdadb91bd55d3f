//! Multimodal cross-attention fusion.
//!
//! Dataflow for a blended `(B, 4, H, W)` input:
//!
//! 1. Split into RGB and IR, extract `C` Inception features per modality.
//! 2. Windowed cross-attention in both directions: queries from one
//!    modality, keys and values from the other, over non-overlapping `w×w`
//!    windows, with a residual connection.
//! 3. A 1×1 logit per modality, normalised by a two-way softmax at every
//!    pixel, weights each modality's features.
//! 4. The weighted maps are concatenated and fused by a second Inception
//!    block.
//! 5. Region descriptors on a `g×g` grid go through single-head
//!    self-attention and a sigmoid, giving a gate `G` that is upsampled and
//!    applied residually: `F_final = F_fused ⊙ (1 + G)`.
//! 6. `F_final` is weighted by each modality's local attention map, the two
//!    branches are concatenated, projected to 3 channels and clamped to
//!    `[0, 1]`.

use crate::error::{Error, Result};
use crate::freq_filter::{split_modalities, Modality};
use crate::tensor::{
    avg_pool2d, concat, join, matmul_batched, mul, relu, sigmoid, softmax_slice, upsample_nearest, Conv, MatBatch,
    Parameters, Tensor4,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct McafConfig {
    pub channels: usize,
    pub heads: usize,
    pub window: usize,
    pub region_grid: usize,
}

impl Default for McafConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            heads: 4,
            window: 8,
            region_grid: 8,
        }
    }
}

impl McafConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || !self.channels.is_multiple_of(4) {
            return Err(Error::config(format!(
                "channels must be a positive multiple of 4 (Inception branches), got {}",
                self.channels
            )));
        }
        if self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "channels {} not divisible by heads {}",
                self.channels, self.heads
            )));
        }
        if self.window == 0 || self.region_grid == 0 {
            return Err(Error::config("window and region_grid must be at least 1"));
        }
        Ok(())
    }

    /// Checks the spatial divisibility constraints for an `h×w` map.
    pub fn validate_spatial(&self, h: usize, w: usize) -> Result<()> {
        self.validate()?;
        if !h.is_multiple_of(self.window) || !w.is_multiple_of(self.window) {
            return Err(Error::config(format!(
                "{h}x{w} is not divisible by window {}",
                self.window
            )));
        }
        if !h.is_multiple_of(self.region_grid) || !w.is_multiple_of(self.region_grid) {
            return Err(Error::config(format!(
                "{h}x{w} is not divisible by region grid {}",
                self.region_grid
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }
}

/// Four-branch Inception block producing `out` channels, `out / 4` each.
#[derive(Clone, Debug, PartialEq)]
pub struct Inception {
    pub branch1: Conv,
    pub branch3_reduce: Conv,
    pub branch3: Conv,
    pub branch5_reduce: Conv,
    pub branch5a: Conv,
    pub branch5b: Conv,
    pub pool_proj: Conv,
}

impl Inception {
    pub fn init(seed: u64, prefix: &str, cin: usize, out: usize) -> Self {
        let q = out / 4;
        let name = |n: &str| join(prefix, n);
        Self {
            branch1: Conv::init(seed, &name("branch1"), q, cin, 1),
            branch3_reduce: Conv::init(seed, &name("branch3_reduce"), q, cin, 1),
            branch3: Conv::init(seed, &name("branch3"), q, q, 3),
            branch5_reduce: Conv::init(seed, &name("branch5_reduce"), q, cin, 1),
            branch5a: Conv::init(seed, &name("branch5a"), q, q, 3),
            branch5b: Conv::init(seed, &name("branch5b"), q, q, 3),
            pool_proj: Conv::init(seed, &name("pool_proj"), q, cin, 1),
        }
    }

    pub fn zeros(cin: usize, out: usize) -> Self {
        let q = out / 4;
        Self {
            branch1: Conv::zeros(q, cin, 1),
            branch3_reduce: Conv::zeros(q, cin, 1),
            branch3: Conv::zeros(q, q, 3),
            branch5_reduce: Conv::zeros(q, cin, 1),
            branch5a: Conv::zeros(q, q, 3),
            branch5b: Conv::zeros(q, q, 3),
            pool_proj: Conv::zeros(q, cin, 1),
        }
    }

    pub fn out_channels(&self) -> usize {
        4 * self.branch1.out_channels()
    }
}

impl Parameters for Inception {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, Vec<usize>, &[f32])) {
        self.branch1.visit(&join(prefix, "branch1"), f);
        self.branch3_reduce.visit(&join(prefix, "branch3_reduce"), f);
        self.branch3.visit(&join(prefix, "branch3"), f);
        self.branch5_reduce.visit(&join(prefix, "branch5_reduce"), f);
        self.branch5a.visit(&join(prefix, "branch5a"), f);
        self.branch5b.visit(&join(prefix, "branch5b"), f);
        self.pool_proj.visit(&join(prefix, "pool_proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, Vec<usize>, &mut [f32])) {
        self.branch1.visit_mut(&join(prefix, "branch1"), f);
        self.branch3_reduce.visit_mut(&join(prefix, "branch3_reduce"), f);
        self.branch3.visit_mut(&join(prefix, "branch3"), f);
        self.branch5_reduce.visit_mut(&join(prefix, "branch5_reduce"), f);
        self.branch5a.visit_mut(&join(prefix, "branch5a"), f);
        self.branch5b.visit_mut(&join(prefix, "branch5b"), f);
        self.pool_proj.visit_mut(&join(prefix, "pool_proj"), f);
    }
}

/// Query/key/value 1×1 projections of one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct QkvProj {
    pub query: Conv,
    pub key: Conv,
    pub value: Conv,
}

impl QkvProj {
    pub fn init(seed: u64, prefix: &str, c: usize) -> Self {
        Self {
            query: Conv::init(seed, &join(prefix, "query"), c, c, 1),
            key: Conv::init(seed, &join(prefix, "key"), c, c, 1),
            value: Conv::init(seed, &join(prefix, "value"), c, c, 1),
        }
    }

    pub fn zeros(c: usize) -> Self {
        Self {
            query: Conv::zeros(c, c, 1),
            key: Conv::zeros(c, c, 1),
            value: Conv::zeros(c, c, 1),
        }
    }
}

impl Parameters for QkvProj {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, Vec<usize>, &[f32])) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, Vec<usize>, &mut [f32])) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
    }
}

/// All MCAF weights. Per-modality arrays are indexed by [`Modality::index`].
#[derive(Clone, Debug, PartialEq)]
pub struct McafParams {
    pub inception: [Inception; 2],
    pub inception_fused: Inception,
    pub cross: [QkvProj; 2],
    pub local_logit: [Conv; 2],
    pub global: QkvProj,
    pub global_out: Conv,
    pub final_proj: Conv,
}

/// Bias of the 3-channel projection; centres the output in `[0, 1]`.
pub const FINAL_BIAS_INIT: f32 = 0.5;

impl McafParams {
    pub fn init(seed: u64, cfg: &McafConfig) -> Self {
        let c = cfg.channels;
        let mut final_proj = Conv::init(seed, "mcaf.final_proj", 3, 2 * c, 1);
        final_proj.bias = vec![FINAL_BIAS_INIT; 3];
        Self {
            inception: [
                Inception::init(seed, "mcaf.inception.rgb", 3, c),
                Inception::init(seed, "mcaf.inception.ir", 1, c),
            ],
            inception_fused: Inception::init(seed, "mcaf.inception_fused", 2 * c, c),
            cross: [
                QkvProj::init(seed, "mcaf.cross.rgb", c),
                QkvProj::init(seed, "mcaf.cross.ir", c),
            ],
            local_logit: [
                Conv::init(seed, "mcaf.local_logit.rgb", 1, c, 1),
                Conv::init(seed, "mcaf.local_logit.ir", 1, c, 1),
            ],
            global: QkvProj::init(seed, "mcaf.global", c),
            global_out: Conv::init(seed, "mcaf.global_out", 1, c, 1),
            final_proj,
        }
    }
}

impl Parameters for McafParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, Vec<usize>, &[f32])) {
        for m in Modality::ALL {
            self.inception[m.index()].visit(&join(prefix, &format!("inception.{}", m.name())), f);
        }
        self.inception_fused.visit(&join(prefix, "inception_fused"), f);
        for m in Modality::ALL {
            self.cross[m.index()].visit(&join(prefix, &format!("cross.{}", m.name())), f);
        }
        for m in Modality::ALL {
            self.local_logit[m.index()].visit(&join(prefix, &format!("local_logit.{}", m.name())), f);
        }
        self.global.visit(&join(prefix, "global"), f);
        self.global_out.visit(&join(prefix, "global_out"), f);
        self.final_proj.visit(&join(prefix, "final_proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, Vec<usize>, &mut [f32])) {
        for m in Modality::ALL {
            self.inception[m.index()].visit_mut(&join(prefix, &format!("inception.{}", m.name())), f);
        }
        self.inception_fused.visit_mut(&join(prefix, "inception_fused"), f);
        for m in Modality::ALL {
            self.cross[m.index()].visit_mut(&join(prefix, &format!("cross.{}", m.name())), f);
        }
        for m in Modality::ALL {
            self.local_logit[m.index()].visit_mut(&join(prefix, &format!("local_logit.{}", m.name())), f);
        }
        self.global.visit_mut(&join(prefix, "global"), f);
        self.global_out.visit_mut(&join(prefix, "global_out"), f);
        self.final_proj.visit_mut(&join(prefix, "final_proj"), f);
    }
}

/// Inception features: `[1×1 | 1×1→3×3 | 1×1→3×3→3×3 | avgpool→1×1]`, ReLU
/// after every convolution, branches concatenated on channels.
pub fn inception_extract(x: &Tensor4, block: &Inception) -> Result<Tensor4> {
    let out = block.out_channels();
    if out == 0 || !out.is_multiple_of(4) {
        return Err(Error::config(format!(
            "Inception output width {out} must be a positive multiple of 4"
        )));
    }
    let b1 = relu(&block.branch1.forward(x)?);
    let b3 = relu(&block.branch3_reduce.forward(x)?);
    let b3 = relu(&block.branch3.forward(&b3)?);
    let b5 = relu(&block.branch5_reduce.forward(x)?);
    let b5 = relu(&block.branch5a.forward(&b5)?);
    let b5 = relu(&block.branch5b.forward(&b5)?);
    let pooled = avg_pool2d(x, 3, 1, 1)?;
    let b4 = relu(&block.pool_proj.forward(&pooled)?);
    concat(&[&b1, &b3, &b5, &b4], 1)
}

/// `softmax(q kᵀ · scale)` per batch matrix; rows index queries.
pub fn attention_probs(q: &MatBatch, k: &MatBatch, scale: f32) -> Result<MatBatch> {
    let scores = matmul_batched(q, &k.transpose())?;
    let mut data = scores.data().to_vec();
    for row in data.chunks_mut(scores.cols().max(1)) {
        for v in row.iter_mut() {
            *v *= scale;
        }
        softmax_slice(row);
    }
    MatBatch::new(scores.batch(), scores.rows(), scores.cols(), data)
}

/// Scaled dot-product attention `softmax(q kᵀ · scale) v`.
pub fn scaled_dot_attention(q: &MatBatch, k: &MatBatch, v: &MatBatch, scale: f32) -> Result<MatBatch> {
    matmul_batched(&attention_probs(q, k, scale)?, v)
}

/// Copies window `(wy, wx)` of batch `b` into `buf`, per head either
/// token-major (`w² × d`) or channel-major (`d × w²`).
#[allow(clippy::too_many_arguments)]
fn gather_window_into(
    t: &Tensor4,
    b: usize,
    wy: usize,
    wx: usize,
    win: usize,
    d: usize,
    channel_major: bool,
    buf: &mut [f32],
) {
    let (tokens, w) = (win * win, t.width());
    for ch in 0..t.channels() {
        let (hd, j) = (ch / d, ch % d);
        let plane = t.plane(b, ch);
        for ty in 0..win {
            let row = &plane[(wy * win + ty) * w + wx * win..][..win];
            for (tx, &v) in row.iter().enumerate() {
                let tok = ty * win + tx;
                let at = if channel_major {
                    (hd * d + j) * tokens + tok
                } else {
                    (hd * tokens + tok) * d + j
                };
                buf[at] = v;
            }
        }
    }
}

/// Windowed cross-attention of modality `m` onto the other modality, plus a
/// residual: `F_m + softmax(Q_m K_{m'}ᵀ / √d) V_{m'}` per window and head.
pub fn window_cross_attention(
    f_m: &Tensor4,
    f_other: &Tensor4,
    m: Modality,
    params: &McafParams,
    cfg: &McafConfig,
) -> Result<Tensor4> {
    if f_m.dims() != f_other.dims() {
        return Err(Error::shape(format!(
            "cross-attention inputs differ: {:?} vs {:?}",
            f_m.dims(),
            f_other.dims()
        )));
    }
    let [n, c, h, w] = f_m.dims();
    if c != cfg.channels {
        return Err(Error::shape(format!(
            "expected {} feature channels, got {c}",
            cfg.channels
        )));
    }
    cfg.validate()?;
    let win = cfg.window;
    if h % win != 0 || w % win != 0 {
        return Err(Error::shape(format!("{h}x{w} is not divisible by window {win}")));
    }
    let own = &params.cross[m.index()];
    let other = &params.cross[1 - m.index()];
    let q = own.query.forward(f_m)?;
    let k = other.key.forward(f_other)?;
    let v = other.value.forward(f_other)?;

    let heads = cfg.heads;
    let d = cfg.head_dim();
    let scale = 1.0 / (d as f32).sqrt();
    let tokens = win * win;
    // Per window: queries and values token-major, keys channel-major so that
    // both products run as contiguous multiply-adds.
    let mut qw = vec![0f32; heads * tokens * d];
    let mut kt = vec![0f32; heads * d * tokens];
    let mut vw = vec![0f32; heads * tokens * d];
    let mut scores = vec![0f32; tokens * tokens];
    let mut att = vec![0f32; tokens * d];
    let mut out = f_m.clone();
    for b in 0..n {
        for wy in 0..h / win {
            for wx in 0..w / win {
                gather_window_into(&q, b, wy, wx, win, d, false, &mut qw);
                gather_window_into(&k, b, wy, wx, win, d, true, &mut kt);
                gather_window_into(&v, b, wy, wx, win, d, false, &mut vw);
                for hd in 0..heads {
                    let base = hd * tokens * d;
                    let (qh, kh, vh) = (
                        &qw[base..][..tokens * d],
                        &kt[base..][..tokens * d],
                        &vw[base..][..tokens * d],
                    );
                    for (row, qrow) in scores.chunks_exact_mut(tokens).zip(qh.chunks_exact(d)) {
                        row.fill(0.0);
                        for (&qv, krow) in qrow.iter().zip(kh.chunks_exact(tokens)) {
                            for (s, &kv) in row.iter_mut().zip(krow) {
                                *s += qv * kv;
                            }
                        }
                        for s in row.iter_mut() {
                            *s *= scale;
                        }
                        softmax_slice(row);
                    }
                    att.fill(0.0);
                    for (orow, prow) in att.chunks_exact_mut(d).zip(scores.chunks_exact(tokens)) {
                        for (&p, vrow) in prow.iter().zip(vh.chunks_exact(d)) {
                            for (o, &x) in orow.iter_mut().zip(vrow) {
                                *o += p * x;
                            }
                        }
                    }
                    for j in 0..d {
                        let plane = out.plane_mut(b, hd * d + j);
                        for t in 0..tokens {
                            plane[(wy * win + t / win) * w + wx * win + t % win] += att[t * d + j];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Output of the jointly normalised local attention stage.
#[derive(Clone, Debug)]
pub struct LocalAttention {
    /// `F̃_m = F'_m ⊙ A_m`, indexed by modality.
    pub features: [Tensor4; 2],
    /// `A_m`, `(B, 1, H, W)`, with `A_rgb + A_ir = 1` at every pixel.
    pub weights: [Tensor4; 2],
}

/// Per-pixel two-way softmax over modality logits, applied to the features.
pub fn joint_local_attention(fp_rgb: &Tensor4, fp_ir: &Tensor4, params: &McafParams) -> Result<LocalAttention> {
    if fp_rgb.dims() != fp_ir.dims() {
        return Err(Error::shape(format!(
            "local attention inputs differ: {:?} vs {:?}",
            fp_rgb.dims(),
            fp_ir.dims()
        )));
    }
    let l_rgb = params.local_logit[0].forward(fp_rgb)?;
    let l_ir = params.local_logit[1].forward(fp_ir)?;
    let (a_rgb, a_ir) = modality_softmax(&l_rgb, &l_ir);
    Ok(LocalAttention {
        features: [mul(fp_rgb, &a_rgb)?, mul(fp_ir, &a_ir)?],
        weights: [a_rgb, a_ir],
    })
}

/// Two-way softmax of equally shaped logit maps.
pub fn modality_softmax(l_rgb: &Tensor4, l_ir: &Tensor4) -> (Tensor4, Tensor4) {
    let mut a = Vec::with_capacity(l_rgb.len());
    let mut b = Vec::with_capacity(l_rgb.len());
    for (&x, &y) in l_rgb.data().iter().zip(l_ir.data()) {
        let mut pair = [x, y];
        softmax_slice(&mut pair);
        a.push(pair[0]);
        b.push(pair[1]);
    }
    (Tensor4::from_raw(l_rgb.dims(), a), Tensor4::from_raw(l_ir.dims(), b))
}

/// `Inception_fused(concat(F̃_rgb, F̃_ir))`.
pub fn fuse(ft_rgb: &Tensor4, ft_ir: &Tensor4, params: &McafParams) -> Result<Tensor4> {
    if ft_rgb.channels() != ft_ir.channels() {
        return Err(Error::shape(format!(
            "fuse: {} vs {} channels",
            ft_rgb.channels(),
            ft_ir.channels()
        )));
    }
    inception_extract(&concat(&[ft_rgb, ft_ir], 1)?, &params.inception_fused)
}

/// Mean of each cell of a `g×g` partition, `(B, C, g, g)`.
pub fn region_descriptors(x: &Tensor4, g: usize) -> Result<Tensor4> {
    let [n, c, h, w] = x.dims();
    if g == 0 || h % g != 0 || w % g != 0 {
        return Err(Error::shape(format!("{h}x{w} is not divisible by region grid {g}")));
    }
    if h == w {
        return avg_pool2d(x, h / g, h / g, 0);
    }
    let (rh, rw) = (h / g, w / g);
    let area = (rh * rw) as f64;
    let mut data = Vec::with_capacity(n * c * g * g);
    for b in 0..n {
        for ch in 0..c {
            let plane = x.plane(b, ch);
            for gy in 0..g {
                for gx in 0..g {
                    let mut acc = 0f64;
                    for y in gy * rh..(gy + 1) * rh {
                        acc += plane[y * w + gx * rw..y * w + (gx + 1) * rw]
                            .iter()
                            .map(|&v| v as f64)
                            .sum::<f64>();
                    }
                    data.push((acc / area) as f32);
                }
            }
        }
    }
    Tensor4::new([n, c, g, g], data)
}

/// Reshapes `(1, C, g, g)` channels-first maps of batch `b` to `1 × g² × C` tokens.
fn tokens_of(t: &Tensor4, b: usize) -> MatBatch {
    let [_, c, gh, gw] = t.dims();
    let mut data = Vec::with_capacity(gh * gw * c);
    for y in 0..gh {
        for x in 0..gw {
            for ch in 0..c {
                data.push(t.at(b, ch, y, x));
            }
        }
    }
    MatBatch::new(1, gh * gw, c, data).expect("token reshape has consistent size")
}

const GATE_MIN: f32 = f32::EPSILON;
const GATE_MAX: f32 = 1.0 - f32::EPSILON;

/// Region-level gate `σ(GlobalAttn(F_fused))` at grid resolution, `(B, 1, g, g)`.
pub fn global_gate_regions(f_fused: &Tensor4, params: &McafParams, cfg: &McafConfig) -> Result<Tensor4> {
    let g = cfg.region_grid;
    let desc = region_descriptors(f_fused, g)?;
    let [n, c, _, _] = desc.dims();
    let q = params.global.query.forward(&desc)?;
    let k = params.global.key.forward(&desc)?;
    let v = params.global.value.forward(&desc)?;
    let scale = 1.0 / (c as f32).sqrt();
    let mut attended = Vec::with_capacity(n * c * g * g);
    for b in 0..n {
        let out = scaled_dot_attention(&tokens_of(&q, b), &tokens_of(&k, b), &tokens_of(&v, b), scale)?;
        // Back to channels-first.
        for ch in 0..c {
            for t in 0..g * g {
                attended.push(out.get(0, t, ch));
            }
        }
    }
    let attended = Tensor4::from_raw([n, c, g, g], attended);
    // Saturated gates are kept one `f32` step inside (0, 1) so that `1 + G`
    // stays strictly between 1 and 2.
    Ok(sigmoid(&params.global_out.forward(&attended)?).map(|g| g.clamp(GATE_MIN, GATE_MAX)))
}

/// Gate `G ∈ (0, 1)` upsampled to `(B, 1, H, W)`.
pub fn global_gate(f_fused: &Tensor4, params: &McafParams, cfg: &McafConfig) -> Result<Tensor4> {
    let g = cfg.region_grid;
    let [_, _, h, w] = f_fused.dims();
    if g == 0 || h % g != 0 || w % g != 0 {
        return Err(Error::shape(format!("{h}x{w} is not divisible by region grid {g}")));
    }
    upsample_nearest(&global_gate_regions(f_fused, params, cfg)?, h / g, w / g)
}

/// `F_fused ⊙ (1 + G)` with `G` broadcast over channels.
pub fn residual_apply(f_fused: &Tensor4, gate: &Tensor4) -> Result<Tensor4> {
    let one_plus = gate.map(|g| 1.0 + g);
    mul(f_fused, &one_plus)
}

/// Concatenates the two branch maps, projects to 3 channels, clamps to `[0, 1]`.
pub fn project3(branch_rgb: &Tensor4, branch_ir: &Tensor4, params: &McafParams) -> Result<Tensor4> {
    let projected = params.final_proj.forward(&concat(&[branch_rgb, branch_ir], 1)?)?;
    Ok(projected.map(|v| v.clamp(0.0, 1.0)))
}

/// Stage switches for structural ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct McafSwitches {
    pub cross_attention: bool,
    pub global_gate: bool,
}

impl Default for McafSwitches {
    fn default() -> Self {
        Self {
            cross_attention: true,
            global_gate: true,
        }
    }
}

/// Intermediate maps of one forward pass.
#[derive(Clone, Debug)]
pub struct McafOutput {
    pub image: Tensor4,
    pub fused: Tensor4,
    pub gate: Tensor4,
    pub local: LocalAttention,
}

pub fn mcaf_forward_traced(
    x_blend: &Tensor4,
    params: &McafParams,
    cfg: &McafConfig,
    switches: McafSwitches,
) -> Result<McafOutput> {
    cfg.validate_spatial(x_blend.height(), x_blend.width())?;
    let (rgb, ir) = split_modalities(x_blend)?;
    let f_rgb = inception_extract(&rgb, &params.inception[0])?;
    let f_ir = inception_extract(&ir, &params.inception[1])?;
    let (fp_rgb, fp_ir) = if switches.cross_attention {
        (
            window_cross_attention(&f_rgb, &f_ir, Modality::Rgb, params, cfg)?,
            window_cross_attention(&f_ir, &f_rgb, Modality::Ir, params, cfg)?,
        )
    } else {
        (f_rgb, f_ir)
    };
    let local = joint_local_attention(&fp_rgb, &fp_ir, params)?;
    let fused = fuse(&local.features[0], &local.features[1], params)?;
    let gate = if switches.global_gate {
        global_gate(&fused, params, cfg)?
    } else {
        Tensor4::zeros([fused.batch(), 1, fused.height(), fused.width()])
    };
    let f_final = residual_apply(&fused, &gate)?;
    let branch_rgb = mul(&f_final, &local.weights[0])?;
    let branch_ir = mul(&f_final, &local.weights[1])?;
    let image = project3(&branch_rgb, &branch_ir, params)?;
    Ok(McafOutput {
        image,
        fused,
        gate,
        local,
    })
}

/// `(B, 4, H, W)` blended input → `(B, 3, H, W)` fused image in `[0, 1]`.
pub fn mcaf_forward(x_blend: &Tensor4, params: &McafParams, cfg: &McafConfig) -> Result<Tensor4> {
    Ok(mcaf_forward_traced(x_blend, params, cfg, McafSwitches::default())?.image)
}
