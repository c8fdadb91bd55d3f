use std::fmt::Write as _;

use clap::{Args, ValueEnum};
use fmcaf::gradcheck::{
    endpoint_task, probe_config, resolution_sweep, sweep_noise, train_alpha, AlphaTrajectory, TaskKind, TrainError,
    DEFAULT_LR, TASK_NOISE, TASK_SAMPLES,
};
use fmcaf::{FusionConfig, Pipeline};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    TowardFiltered,
    TowardRaw,
    ResolutionSweep,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = DEFAULT_LR)]
    pub lr: f64,
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Resolution of the endpoint tasks.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Resolutions for the sweep, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [32, 64, 128])]
    pub resolutions: Vec<usize>,
}

fn fail(partial: &str, err: TrainError) -> fmcaf::Error {
    print!("{partial}");
    eprintln!("training stopped after {} recorded steps", err.trajectory.steps.len());
    err.cause
}

fn endpoint(cfg: &FusionConfig, args: &GradcheckArgs, kind: TaskKind) -> fmcaf::Result<()> {
    let pipeline = Pipeline::new(probe_config(cfg.seed, args.size)?)?;
    let data = endpoint_task(&pipeline, kind, TASK_SAMPLES, TASK_NOISE)?;
    let traj = train_alpha(&pipeline, &data, args.steps, args.lr).map_err(|e| {
        let partial = e.trajectory.to_csv();
        fail(&partial, e)
    })?;
    print!("{}", traj.to_csv());
    println!("{}", verdict(&traj, kind));
    Ok(())
}

fn verdict(traj: &AlphaTrajectory, kind: TaskKind) -> String {
    let (first, last) = (traj.first().expect("non-empty"), traj.last().expect("non-empty"));
    match kind {
        TaskKind::TowardFiltered => format!("alpha increased: {}", last.alpha_rgb > first.alpha_rgb),
        TaskKind::TowardRaw => format!("alpha decreased: {}", last.alpha_rgb < first.alpha_rgb),
    }
}

fn sweep(cfg: &FusionConfig, args: &GradcheckArgs) -> fmcaf::Result<()> {
    let base = probe_config(cfg.seed, args.resolutions.first().copied().unwrap_or(32))?;
    let points =
        resolution_sweep(&base, &args.resolutions, sweep_noise, TASK_SAMPLES, args.steps, args.lr).map_err(|e| {
            let partial = e.trajectory.to_csv();
            fail(&partial, e)
        })?;
    let mut csv = String::from("resolution,step,alpha_rgb,alpha_ir,loss\n");
    for p in &points {
        for s in &p.trajectory.steps {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                p.resolution, s.step, s.alpha_rgb, s.alpha_ir, s.loss
            );
        }
    }
    print!("{csv}");
    for p in &points {
        println!(
            "# resolution {} noise {} final alpha {}",
            p.resolution, p.noise_sigma, p.final_alpha
        );
    }
    let monotone = points.windows(2).all(|w| w[1].final_alpha >= w[0].final_alpha);
    println!("alpha non-decreasing: {monotone}");
    Ok(())
}

pub fn run(cfg: &FusionConfig, args: &GradcheckArgs) -> fmcaf::Result<()> {
    match args.mode {
        Mode::TowardFiltered => endpoint(cfg, args, TaskKind::TowardFiltered),
        Mode::TowardRaw => endpoint(cfg, args, TaskKind::TowardRaw),
        Mode::ResolutionSweep => sweep(cfg, args),
    }
}
