use std::time::Instant;

use clap::Args;
use fmcaf::{Error, FusionConfig, Pipeline, Rng, Tensor4};
use serde_json::json;

const WARMUP: usize = 3;

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Square input resolution; defaults to the configured image size.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
}

/// Mean, population standard deviation and minimum.
pub fn summarize(samples: &[f64]) -> (f64, f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    (mean, var.sqrt(), min)
}

pub fn run(cfg: &FusionConfig, args: &BenchArgs) -> fmcaf::Result<()> {
    if args.iters == 0 {
        return Err(Error::Config("--iters must be at least 1".into()));
    }
    let size = args.size.unwrap_or(cfg.image_size);
    let pipeline = Pipeline::new(cfg.with_image_size(size)?)?;
    let mut rng = Rng::stream(cfg.seed, "bench.input");
    let x = Tensor4::from_fn([1, 4, size, size], |_, _, _, _| rng.unit_f32())?;

    for _ in 0..WARMUP {
        pipeline.forward(&x)?;
    }
    let mut samples = Vec::with_capacity(args.iters);
    for i in 0..args.iters {
        let t = Instant::now();
        pipeline.forward(&x)?;
        samples.push(t.elapsed().as_secs_f64() * 1e3);
        eprintln!("iter {}/{}: {:.1} ms", i + 1, args.iters, samples[i]);
    }
    let (mean, std, min) = summarize(&samples);
    let report = json!({
        "size": size,
        "iters": args.iters,
        "mean_ms": mean,
        "std_ms": std,
        "min_ms": min,
        "fps": 1e3 / mean,
    });
    println!("{report}");
    Ok(())
}
