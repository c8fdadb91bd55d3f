use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fmcaf::{Error, FusionConfig};

mod bench;
mod fuse;
mod gradcheck;
mod selftest;
mod weights;

#[derive(Parser, Debug)]
#[command(
    name = "fmcaf",
    version,
    about = "Frequency-filtered RGB/IR fusion with cross-attention"
)]
struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for weight initialisation; overrides FMCAF_SEED and the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fuse a registered RGB/IR pair into one 3-channel PNG.
    Fuse(fuse::FuseArgs),
    /// Run the built-in invariant checks.
    Selftest,
    /// Time the forward pass on a fixed random input.
    Bench(bench::BenchArgs),
    /// Train the blend coefficients on a synthetic task.
    Gradcheck(gradcheck::GradcheckArgs),
    /// Write or validate parameter files.
    #[command(subcommand)]
    Weights(weights::WeightsCommand),
}

fn resolve_config(cli: &Cli) -> fmcaf::Result<FusionConfig> {
    let mut cfg = match &cli.config {
        Some(path) => FusionConfig::from_file(path)?,
        None => FusionConfig::default(),
    };
    if let Ok(raw) = std::env::var("FMCAF_SEED") {
        cfg.seed = raw
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("FMCAF_SEED must be an unsigned integer, got {raw:?}")))?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> fmcaf::Result<()> {
    let cfg = resolve_config(&cli)?;
    if cli.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    match cli.command {
        None => Err(Error::Config("no command given; see --help".into())),
        Some(Command::Fuse(args)) => fuse::run(&cfg, &args),
        Some(Command::Selftest) => selftest::run(),
        Some(Command::Bench(args)) => bench::run(&cfg, &args),
        Some(Command::Gradcheck(args)) => gradcheck::run(&cfg, &args),
        Some(Command::Weights(cmd)) => weights::run(&cfg, &cmd),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
