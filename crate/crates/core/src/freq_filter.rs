//! Per-modality spectral filtering with an encoder-ranked top-k% mask and
//! learnable raw/filtered blending.
//!
//! For each modality the channels are transformed, their amplitude spectra
//! averaged, and the log-amplitude map scored by a small convolutional
//! encoder. The highest-scoring fraction of frequency positions is kept,
//! the mask is made conjugate symmetric so the inverse stays real, and the
//! reconstruction is blended with the raw input:
//!
//! ```text
//! x_blend = α · x_filtered + (1 − α) · x
//! ```
//!
//! `α` is stored unconstrained and clamped to `[0, 1]` wherever it is used.

use crate::error::{Error, Result};
use crate::fft::{amplitude, dft2, idft2, Spectrum};
use crate::tensor::{concat, join, mean_axis, relu, Conv, Parameters, Tensor4};

/// Hidden width of the mask encoder.
pub const ENCODER_WIDTH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Rgb,
    Ir,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Rgb, Modality::Ir];

    pub fn index(self) -> usize {
        match self {
            Modality::Rgb => 0,
            Modality::Ir => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Ir => "ir",
        }
    }

    /// Channels of the stacked `[R, G, B, IR]` input owned by this modality.
    pub fn channel_range(self) -> std::ops::Range<usize> {
        match self {
            Modality::Rgb => 0..3,
            Modality::Ir => 3..4,
        }
    }
}

/// Binary retention map over an `H×W` frequency grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpectralMask {
    height: usize,
    width: usize,
    keep: Vec<bool>,
    ranked: usize,
}

impl SpectralMask {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        self.keep[u * self.width + v]
    }

    /// Number of retained positions after symmetrisation.
    pub fn count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    /// Number of positions picked by ranking, before symmetrisation.
    pub fn ranked(&self) -> usize {
        self.ranked
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.height).all(|u| {
            (0..self.width).all(|v| {
                let (mu, mv) = mirror(u, v, self.height, self.width);
                self.get(u, v) == self.get(mu, mv)
            })
        })
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.keep
    }

    pub fn weights(&self) -> Vec<f32> {
        self.keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect()
    }

    /// Builds a mask from explicit values, symmetrising and keeping DC.
    pub fn from_selection(height: usize, width: usize, selected: &[bool]) -> Result<Self> {
        if selected.len() != height * width {
            return Err(Error::shape(format!(
                "selection of {} entries for a {height}x{width} mask",
                selected.len()
            )));
        }
        let ranked = selected.iter().filter(|&&k| k).count();
        let mut keep: Vec<bool> = (0..height * width)
            .map(|i| {
                let (mu, mv) = mirror(i / width, i % width, height, width);
                selected[i] || selected[mu * width + mv]
            })
            .collect();
        if let Some(dc) = keep.first_mut() {
            *dc = true;
        }
        Ok(Self {
            height,
            width,
            keep,
            ranked,
        })
    }
}

fn mirror(u: usize, v: usize, h: usize, w: usize) -> (usize, usize) {
    ((h - u) % h, (w - v) % w)
}

/// Mask encoder weights and the per-modality blend coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterParams {
    pub encoder1: Conv,
    pub encoder2: Conv,
    /// Unconstrained `α` for `[Rgb, Ir]`.
    pub alpha_raw: [f32; 2],
}

impl FilterParams {
    pub fn init(seed: u64, alpha_init: f32) -> Self {
        Self {
            encoder1: Conv::init(seed, "filter.encoder1", ENCODER_WIDTH, 1, 3),
            encoder2: Conv::init(seed, "filter.encoder2", 1, ENCODER_WIDTH, 3),
            alpha_raw: [alpha_init; 2],
        }
    }

    /// Effective blend coefficient, clamped to `[0, 1]`.
    pub fn alpha(&self, m: Modality) -> f32 {
        self.alpha_raw[m.index()].clamp(0.0, 1.0)
    }
}

impl Parameters for FilterParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, Vec<usize>, &[f32])) {
        self.encoder1.visit(&join(prefix, "encoder1"), f);
        self.encoder2.visit(&join(prefix, "encoder2"), f);
        f(join(prefix, "alpha_raw"), vec![2], &self.alpha_raw);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, Vec<usize>, &mut [f32])) {
        self.encoder1.visit_mut(&join(prefix, "encoder1"), f);
        self.encoder2.visit_mut(&join(prefix, "encoder2"), f);
        f(join(prefix, "alpha_raw"), vec![2], &mut self.alpha_raw);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterConfig {
    /// Fraction of frequency positions retained, in `(0, 1]`.
    pub topk_ratio: f64,
    pub alpha_init: f32,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            topk_ratio: 0.25,
            alpha_init: 0.2,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.topk_ratio > 0.0 && self.topk_ratio <= 1.0) {
            return Err(Error::config(format!(
                "topk_ratio must lie in (0, 1], got {}",
                self.topk_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha_init) {
            return Err(Error::config(format!(
                "alpha_init must lie in [0, 1], got {}",
                self.alpha_init
            )));
        }
        Ok(())
    }
}

/// Splits `(B, 4, H, W)` into RGB `(B, 3, H, W)` and IR `(B, 1, H, W)`.
pub fn split_modalities(x: &Tensor4) -> Result<(Tensor4, Tensor4)> {
    if x.channels() != 4 {
        return Err(Error::shape(format!(
            "expected 4 input channels [R, G, B, IR], got {}",
            x.channels()
        )));
    }
    Ok((
        x.channel_range(Modality::Rgb.channel_range())?,
        x.channel_range(Modality::Ir.channel_range())?,
    ))
}

fn mean_amplitude(s: &Spectrum) -> Result<Tensor4> {
    mean_axis(&amplitude(s), 1)
}

/// Channel-averaged amplitude spectrum of one single-batch modality.
pub fn amplitude_map(x_m: &Tensor4) -> Result<Tensor4> {
    mean_amplitude(&dft2(x_m)?)
}

/// Scores every frequency position: `log(1 + A)` → conv 3×3 → ReLU → conv 3×3.
pub fn encode_activations(amp: &Tensor4, p: &FilterParams) -> Result<Tensor4> {
    let logged = amp.map(|a| libm::log1pf(a.max(0.0)));
    let hidden = relu(&p.encoder1.forward(&logged)?);
    p.encoder2.forward(&hidden)
}

/// Positions of the `max(1, ⌊ratio·H·W⌋)` largest activations; ties go to
/// the smaller flat index.
pub fn topk_select(act: &Tensor4, ratio: f64) -> Result<Vec<bool>> {
    let [n, c, h, w] = act.dims();
    if n != 1 || c != 1 {
        return Err(Error::shape(format!(
            "activation map must be (1, 1, H, W), got {:?}",
            act.dims()
        )));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::config(format!("top-k ratio must lie in (0, 1], got {ratio}")));
    }
    let total = h * w;
    let keep = ((ratio * total as f64).floor() as usize).clamp(1, total.max(1));
    let values = act.data();
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut selected = vec![false; total];
    for &i in &order[..keep.min(total)] {
        selected[i] = true;
    }
    Ok(selected)
}

/// Top-k selection, OR-symmetrised under `(u, v) ↦ (−u, −v)`, with DC kept.
pub fn topk_mask(act: &Tensor4, ratio: f64) -> Result<SpectralMask> {
    let selected = topk_select(act, ratio)?;
    SpectralMask::from_selection(act.height(), act.width(), &selected)
}

/// Multiplies every channel's coefficients by the mask; phase is untouched.
pub fn apply_spectral_mask(s: &Spectrum, m: &SpectralMask) -> Result<Spectrum> {
    if s.height() != m.height || s.width() != m.width {
        return Err(Error::shape(format!(
            "mask {}x{} does not match spectrum {}x{}",
            m.height,
            m.width,
            s.height(),
            s.width()
        )));
    }
    Ok(s.scale_frequencies(&m.weights()))
}

/// Result of filtering one modality of one batch element.
#[derive(Clone, Debug)]
pub struct FilteredModality {
    pub image: Tensor4,
    pub mask: SpectralMask,
    /// Channel-averaged amplitude spectrum of the unfiltered input.
    pub amplitude: Tensor4,
    pub max_imag_residue: f32,
}

/// Full filter chain with a caller-supplied scorer in place of the encoder.
pub fn filter_modality_with(
    x_m: &Tensor4,
    ratio: f64,
    score: impl FnOnce(&Tensor4) -> Result<Tensor4>,
) -> Result<FilteredModality> {
    let spectrum = dft2(x_m)?;
    let amp = mean_amplitude(&spectrum)?;
    let act = score(&amp)?;
    let mask = topk_mask(&act, ratio)?;
    let rec = idft2(&apply_spectral_mask(&spectrum, &mask)?)?;
    Ok(FilteredModality {
        image: rec.image,
        mask,
        amplitude: amp,
        max_imag_residue: rec.max_imag_residue,
    })
}

pub fn filter_modality(x_m: &Tensor4, p: &FilterParams, cfg: &FilterConfig) -> Result<FilteredModality> {
    filter_modality_with(x_m, cfg.topk_ratio, |amp| encode_activations(amp, p))
}

/// `alpha · filtered + (1 − alpha) · raw`, elementwise.
pub fn blend(raw: &Tensor4, filtered: &Tensor4, alpha: f32) -> Result<Tensor4> {
    if raw.dims() != filtered.dims() {
        return Err(Error::shape(format!(
            "blend: raw {:?} vs filtered {:?}",
            raw.dims(),
            filtered.dims()
        )));
    }
    let data = raw
        .data()
        .iter()
        .zip(filtered.data())
        .map(|(&x, &f)| alpha * f + (1.0 - alpha) * x)
        .collect();
    Ok(Tensor4::from_raw(raw.dims(), data))
}

/// The α-independent part of the filter stage: raw input, its filtered
/// counterpart and per-modality diagnostics.
#[derive(Clone, Debug)]
pub struct FilteredBatch {
    pub raw: Tensor4,
    pub filtered: Tensor4,
    /// `reports[b][m]` for batch element `b` and modality index `m`.
    pub reports: Vec<[FilteredModality; 2]>,
}

impl FilteredBatch {
    /// Blends raw and filtered channels with one coefficient per modality.
    pub fn blend(&self, alphas: [f32; 2]) -> Result<Tensor4> {
        let mut parts = Vec::with_capacity(2);
        for m in Modality::ALL {
            let range = m.channel_range();
            let raw = self.raw.channel_range(range.clone())?;
            let filtered = self.filtered.channel_range(range)?;
            parts.push(blend(&raw, &filtered, alphas[m.index()].clamp(0.0, 1.0))?);
        }
        concat(&[&parts[0], &parts[1]], 1)
    }
}

/// Filters every modality of every batch element.
pub fn filter_batch(x: &Tensor4, p: &FilterParams, cfg: &FilterConfig) -> Result<FilteredBatch> {
    cfg.validate()?;
    split_modalities(x)?;
    let mut items = Vec::with_capacity(x.batch());
    let mut reports = Vec::with_capacity(x.batch());
    for b in 0..x.batch() {
        let item = x.batch_item(b)?;
        let rgb = filter_modality(&item.channel_range(Modality::Rgb.channel_range())?, p, cfg)?;
        let ir = filter_modality(&item.channel_range(Modality::Ir.channel_range())?, p, cfg)?;
        items.push(concat(&[&rgb.image, &ir.image], 1)?);
        reports.push([rgb, ir]);
    }
    let refs: Vec<&Tensor4> = items.iter().collect();
    Ok(FilteredBatch {
        raw: x.clone(),
        filtered: concat(&refs, 0)?,
        reports,
    })
}

/// Filter stage output with the diagnostics used by the CLI.
#[derive(Clone, Debug)]
pub struct FreqFilterOutput {
    pub output: Tensor4,
    pub batch: FilteredBatch,
}

/// Spectrally refined `(B, 4, H, W)` input, blended per modality with the
/// clamped `α`.
pub fn freq_filter_forward(x: &Tensor4, p: &FilterParams, cfg: &FilterConfig) -> Result<FreqFilterOutput> {
    let batch = filter_batch(x, p, cfg)?;
    let output = batch.blend([p.alpha(Modality::Rgb), p.alpha(Modality::Ir)])?;
    Ok(FreqFilterOutput { output, batch })
}
