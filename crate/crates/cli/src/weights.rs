use std::path::PathBuf;

use clap::Subcommand;
use fmcaf::tensor::Parameters;
use fmcaf::weights::{load_weights, save_weights};
use fmcaf::{FusionConfig, FusionParams};
use serde_json::json;

use crate::fuse::f32_json;

#[derive(Subcommand, Debug)]
pub enum WeightsCommand {
    /// Write the seeded initial parameters.
    Export {
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a parameter file against the configuration.
    Import {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn summary(params: &FusionParams) -> serde_json::Value {
    let (mut tensors, mut values) = (0usize, 0usize);
    params.visit("", &mut |_, _, data| {
        tensors += 1;
        values += data.len();
    });
    let alphas = params.alphas();
    json!({ "tensors": tensors, "values": values, "alpha_rgb": f32_json(alphas[0]), "alpha_ir": f32_json(alphas[1]) })
}

pub fn run(cfg: &FusionConfig, cmd: &WeightsCommand) -> fmcaf::Result<()> {
    match cmd {
        WeightsCommand::Export { out } => {
            let params = FusionParams::init(cfg);
            save_weights(&params, out)?;
            println!("{}", summary(&params));
        }
        WeightsCommand::Import { input } => {
            let params = load_weights(input, cfg)?;
            println!("{}", summary(&params));
        }
    }
    Ok(())
}
