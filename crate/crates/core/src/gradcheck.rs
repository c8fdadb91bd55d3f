//! Finite-difference gradients and a toy descent loop over the two blend
//! coefficients.
//!
//! Only `α_rgb` and `α_ir` are trained; every other weight stays at its
//! seeded value. The loss is the MSE between the pipeline output and a
//! fixed target, so the synthetic tasks below decide which direction `α`
//! should move.

use crate::config::FusionConfig;
use crate::error::{Error, Result};
use crate::pipeline::{Pipeline, Prepared};
use crate::tensor::{Rng, Tensor4};

/// Central-difference step for `α`.
pub const ALPHA_EPS: f64 = 1e-3;

/// Descent step for the synthetic tasks. Loss gradients in `α` are small
/// (around 1e-4), so the step is large.
pub const DEFAULT_LR: f64 = 10.0;
/// Samples per synthetic task.
pub const TASK_SAMPLES: usize = 2;
/// Noise level of the endpoint tasks.
pub const TASK_NOISE: f32 = 0.1;
/// Sweep noise at 32×32.
pub const SWEEP_BASE_NOISE: f32 = 0.05;

/// Noise level growing linearly with resolution, [`SWEEP_BASE_NOISE`] at 32.
pub fn sweep_noise(resolution: usize) -> f32 {
    SWEEP_BASE_NOISE * resolution as f32 / 32.0
}

/// Central differences `(f(p + eps·e_i) − f(p − eps·e_i)) / (2·eps)`.
pub fn numeric_grad(mut f: impl FnMut(&[f64]) -> Result<f64>, params: &[f64], eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::config(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    let mut probe = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        probe[i] = params[i] + eps;
        let plus = f(&probe)?;
        probe[i] = params[i] - eps;
        let minus = f(&probe)?;
        probe[i] = params[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "objective is not finite around coordinate {i} ({plus}, {minus})"
            )));
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Mse,
}

/// Regression target for the pipeline output.
#[derive(Clone, Debug)]
pub struct ProbeLoss {
    pub target: Tensor4,
    pub kind: LossKind,
}

impl ProbeLoss {
    pub fn mse(target: Tensor4) -> Self {
        Self {
            target,
            kind: LossKind::Mse,
        }
    }
}

/// Mean squared error over all elements, accumulated in `f64`.
pub fn probe_loss(output: &Tensor4, loss: &ProbeLoss) -> Result<f64> {
    if output.dims() != loss.target.dims() {
        return Err(Error::shape(format!(
            "loss: output {:?} vs target {:?}",
            output.dims(),
            loss.target.dims()
        )));
    }
    if output.is_empty() {
        return Err(Error::shape("loss over an empty tensor"));
    }
    match loss.kind {
        LossKind::Mse => {
            let sum: f64 = output
                .data()
                .iter()
                .zip(loss.target.data())
                .map(|(&a, &b)| {
                    let d = a as f64 - b as f64;
                    d * d
                })
                .sum();
            Ok(sum / output.len() as f64)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaStep {
    pub step: usize,
    pub alpha_rgb: f64,
    pub alpha_ir: f64,
    pub loss: f64,
}

/// `α` and loss per step; entry 0 is the starting point.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AlphaTrajectory {
    pub steps: Vec<AlphaStep>,
}

impl AlphaTrajectory {
    pub fn first(&self) -> Option<&AlphaStep> {
        self.steps.first()
    }

    pub fn last(&self) -> Option<&AlphaStep> {
        self.steps.last()
    }

    /// `step,alpha_rgb,alpha_ir,loss` with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,alpha_rgb,alpha_ir,loss\n");
        for p in &self.steps {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.9e}\n",
                p.step, p.alpha_rgb, p.alpha_ir, p.loss
            ));
        }
        s
    }
}

/// Training stopped early; `trajectory` holds the steps completed so far.
#[derive(Debug, thiserror::Error)]
#[error("alpha training stopped after {} recorded steps: {cause}", trajectory.steps.len())]
pub struct TrainError {
    pub trajectory: AlphaTrajectory,
    #[source]
    pub cause: Error,
}

/// Mean probe loss over a prepared dataset at the given blend coefficients.
fn dataset_loss(pipeline: &Pipeline, data: &[(Prepared, ProbeLoss)], alphas: &[f64]) -> Result<f64> {
    let a = [alphas[0].clamp(0.0, 1.0) as f32, alphas[1].clamp(0.0, 1.0) as f32];
    let mut total = 0.0;
    for (prepared, loss) in data {
        let out = pipeline.forward_prepared(prepared, a)?;
        total += probe_loss(&out.image, loss)?;
    }
    let mean = total / data.len() as f64;
    if !mean.is_finite() {
        return Err(Error::Numeric(format!("loss became {mean}")));
    }
    Ok(mean)
}

/// Gradient descent on `(α_rgb, α_ir)` with numeric gradients, clamping to
/// `[0, 1]` after each step.
pub fn train_alpha(
    pipeline: &Pipeline,
    dataset: &[(Tensor4, Tensor4)],
    steps: usize,
    lr: f64,
) -> std::result::Result<AlphaTrajectory, TrainError> {
    let mut trajectory = AlphaTrajectory::default();
    let fail = |trajectory: AlphaTrajectory, cause: Error| TrainError { trajectory, cause };
    if steps == 0 || !(lr >= 0.0 && lr.is_finite()) || dataset.is_empty() {
        return Err(fail(
            trajectory,
            Error::config(format!(
                "train_alpha needs steps >= 1, finite lr >= 0 and data (steps {steps}, lr {lr}, {} samples)",
                dataset.len()
            )),
        ));
    }
    let mut prepared = Vec::with_capacity(dataset.len());
    for (input, target) in dataset {
        match pipeline.prepare(input) {
            Ok(p) => prepared.push((p, ProbeLoss::mse(target.clone()))),
            Err(e) => return Err(fail(trajectory, e)),
        }
    }
    let start = pipeline.params().alphas();
    let mut alpha = [start[0] as f64, start[1] as f64];
    let loss = |a: &[f64]| dataset_loss(pipeline, &prepared, a);

    match loss(&alpha) {
        Ok(l) => trajectory.steps.push(AlphaStep {
            step: 0,
            alpha_rgb: alpha[0],
            alpha_ir: alpha[1],
            loss: l,
        }),
        Err(e) => return Err(fail(trajectory, e)),
    }
    for step in 1..=steps {
        let grad = match numeric_grad(loss, &alpha, ALPHA_EPS) {
            Ok(g) => g,
            Err(e) => return Err(fail(trajectory, e)),
        };
        for (a, g) in alpha.iter_mut().zip(&grad) {
            *a = (*a - lr * g).clamp(0.0, 1.0);
        }
        match loss(&alpha) {
            Ok(l) => trajectory.steps.push(AlphaStep {
                step,
                alpha_rgb: alpha[0],
                alpha_ir: alpha[1],
                loss: l,
            }),
            Err(e) => return Err(fail(trajectory, e)),
        }
    }
    Ok(trajectory)
}

/// Lightweight pipeline settings for the synthetic tasks.
pub fn probe_config(seed: u64, size: usize) -> Result<FusionConfig> {
    FusionConfig {
        seed,
        channels: 8,
        heads: 2,
        ..FusionConfig::default()
    }
    .with_image_size(size)
}

/// A smooth scene and the same scene with additive white Gaussian noise,
/// both `(1, 4, size, size)`. The scene is defined on normalised
/// coordinates, so its content does not depend on `size`.
pub fn noisy_scene(size: usize, noise_sigma: f32, seed: u64, index: u64) -> Result<(Tensor4, Tensor4)> {
    let mut rng = Rng::stream(seed, &format!("scene.{index}"));
    let phases: Vec<f64> = (0..8).map(|_| rng.unit_f32() as f64 * std::f64::consts::TAU).collect();
    let tau = std::f64::consts::TAU;
    let clean = Tensor4::from_fn([1, 4, size, size], |_, c, y, x| {
        let u = (x as f64 + 0.5) / size as f64;
        let v = (y as f64 + 0.5) / size as f64;
        let p = &phases[2 * c..2 * c + 2];
        (0.5 + 0.2 * libm::sin(tau * u + p[0]) + 0.15 * libm::cos(tau * (u + v) + p[1])) as f32
    })?;
    let mut noise_rng = Rng::stream(seed, &format!("noise.{index}.{size}"));
    let noisy = Tensor4::new(
        clean.dims(),
        clean
            .data()
            .iter()
            .map(|&v| v + noise_sigma * noise_rng.normal_f32())
            .collect(),
    )?;
    Ok((clean, noisy))
}

/// Direction a constructed task pulls `α`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    /// Targets are the fully filtered (`α = 1`) outputs of the noisy inputs.
    TowardFiltered,
    /// Targets are the unfiltered (`α = 0`) outputs of the noisy inputs.
    TowardRaw,
}

/// Noisy inputs paired with targets produced by the same pipeline at a fixed `α`.
pub fn endpoint_task(
    pipeline: &Pipeline,
    kind: TaskKind,
    samples: usize,
    noise_sigma: f32,
) -> Result<Vec<(Tensor4, Tensor4)>> {
    let target_alpha = match kind {
        TaskKind::TowardFiltered => [1.0, 1.0],
        TaskKind::TowardRaw => [0.0, 0.0],
    };
    let cfg = pipeline.config();
    (0..samples as u64)
        .map(|i| {
            let (_, noisy) = noisy_scene(cfg.image_size, noise_sigma, cfg.seed, i)?;
            let target = pipeline
                .forward_prepared(&pipeline.prepare(&noisy)?, target_alpha)?
                .image;
            Ok((noisy, target))
        })
        .collect()
}

/// Noisy inputs paired with the unfiltered pipeline output of the clean scene.
pub fn denoise_task(pipeline: &Pipeline, samples: usize, noise_sigma: f32) -> Result<Vec<(Tensor4, Tensor4)>> {
    let cfg = pipeline.config();
    (0..samples as u64)
        .map(|i| {
            let (clean, noisy) = noisy_scene(cfg.image_size, noise_sigma, cfg.seed, i)?;
            let target = pipeline.forward_prepared(&pipeline.prepare(&clean)?, [0.0, 0.0])?.image;
            Ok((noisy, target))
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub resolution: usize,
    pub noise_sigma: f32,
    /// Mean of the final `α_rgb` and `α_ir`.
    pub final_alpha: f64,
    pub trajectory: AlphaTrajectory,
}

/// Runs [`denoise_task`] + [`train_alpha`] at each resolution with noise
/// level `noise_for(resolution)`.
pub fn resolution_sweep(
    base: &FusionConfig,
    resolutions: &[usize],
    noise_for: impl Fn(usize) -> f32,
    samples: usize,
    steps: usize,
    lr: f64,
) -> std::result::Result<Vec<SweepPoint>, TrainError> {
    let wrap = |cause: Error| TrainError {
        trajectory: AlphaTrajectory::default(),
        cause,
    };
    let mut points = Vec::with_capacity(resolutions.len());
    for &resolution in resolutions {
        let pipeline = Pipeline::new(base.with_image_size(resolution).map_err(wrap)?).map_err(wrap)?;
        let sigma = noise_for(resolution);
        let data = denoise_task(&pipeline, samples, sigma).map_err(wrap)?;
        let trajectory = train_alpha(&pipeline, &data, steps, lr)?;
        let last = trajectory.last().expect("training records at least one step");
        points.push(SweepPoint {
            resolution,
            noise_sigma: sigma,
            final_alpha: 0.5 * (last.alpha_rgb + last.alpha_ir),
            trajectory,
        });
    }
    Ok(points)
}
