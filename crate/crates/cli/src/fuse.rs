use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use fmcaf::freq_filter::{amplitude_map, Modality};
use fmcaf::imageio::{load_pair, save_fused, save_gray};
use fmcaf::weights::load_weights;
use fmcaf::{Error, FusionConfig, Pipeline, Tensor4};
use serde_json::json;

/// Largest change the filter stage may make for the run to count as an identity.
const IDENTITY_TOLERANCE: f32 = 1e-4;

#[derive(Args, Debug)]
pub struct FuseArgs {
    #[arg(long)]
    pub rgb: PathBuf,
    #[arg(long)]
    pub ir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Parameter file; defaults to the seeded initialisation.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Directory for per-modality spectral masks.
    #[arg(long)]
    pub emit_mask: Option<PathBuf>,
    /// Directory for per-modality log-amplitude spectra.
    #[arg(long)]
    pub emit_spectrum: Option<PathBuf>,
}

fn ensure_dir(dir: &Path) -> fmcaf::Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Shortest decimal that round-trips the `f32`, as a JSON number.
pub fn f32_json(v: f32) -> serde_json::Value {
    serde_json::from_str(&v.to_string()).unwrap_or(serde_json::Value::Null)
}

/// `log(1 + A)` scaled to `[0, 1]` by its maximum.
fn log_amplitude_image(amp: &Tensor4) -> Vec<f32> {
    let logged: Vec<f32> = amp.data().iter().map(|a| a.max(0.0).ln_1p()).collect();
    let max = logged.iter().copied().fold(0.0f32, f32::max);
    if max > 0.0 {
        logged.iter().map(|v| v / max).collect()
    } else {
        logged
    }
}

pub fn run(cfg: &FusionConfig, args: &FuseArgs) -> fmcaf::Result<()> {
    let start = Instant::now();
    let x = load_pair(&args.rgb, &args.ir, cfg.image_size)?;
    let pipeline = match &args.weights {
        Some(path) => Pipeline::with_params(*cfg, load_weights(path, cfg)?)?,
        None => Pipeline::new(*cfg)?,
    };
    let out = pipeline.forward(&x)?;
    save_fused(&out.image, &args.out)?;

    let reports = out.filter.as_ref().map(|f| &f.reports[0]);
    let size = cfg.image_size;
    if let Some(dir) = &args.emit_mask {
        let reports = reports.ok_or_else(|| Error::Config("--emit-mask needs the filter stage enabled".into()))?;
        ensure_dir(dir)?;
        for m in Modality::ALL {
            let mask = &reports[m.index()].mask;
            save_gray(&mask.weights(), size, size, &dir.join(format!("mask_{}.png", m.name())))?;
        }
    }
    if let Some(dir) = &args.emit_spectrum {
        ensure_dir(dir)?;
        for m in Modality::ALL {
            let amp = match reports {
                Some(r) => r[m.index()].amplitude.clone(),
                None => amplitude_map(&x.channel_range(m.channel_range())?)?,
            };
            save_gray(
                &log_amplitude_image(&amp),
                size,
                size,
                &dir.join(format!("spectrum_{}.png", m.name())),
            )?;
        }
    }

    let (out_min, out_max) = out.image.min_max().unwrap_or((0.0, 0.0));
    let filter_delta = out.blended.max_abs_diff(&x)?;
    let alphas = pipeline.params().alphas();
    let cardinality = |m: Modality| reports.map(|r| r[m.index()].mask.count());
    let metrics = json!({
        "alpha_rgb": f32_json(alphas[0]),
        "alpha_ir": f32_json(alphas[1]),
        "mask_rgb": cardinality(Modality::Rgb),
        "mask_ir": cardinality(Modality::Ir),
        "out_min": f32_json(out_min),
        "out_max": f32_json(out_max),
        "filter_max_delta": f32_json(filter_delta),
        "filter_identity": filter_delta <= IDENTITY_TOLERANCE,
        "wall_ms": start.elapsed().as_secs_f64() * 1e3,
    });
    println!("{metrics}");
    eprintln!("wrote {}", args.out.display());
    Ok(())
}
