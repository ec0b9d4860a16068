//! Command-line pipeline.
//!
//! The subcommands chain through plain directories: `synth` writes a
//! synthetic record, `targets` derives learning targets from it, `train`
//! fits the corrector, `rollout` produces forecasts, and `uq`, `verify`
//! and `spectra` score them. `sample`, `regrid` and `mosaic` are the
//! supporting data-management steps. Every command takes the same config
//! file and leaves a manifest next to its outputs.

mod commands;
mod config;
mod files;
mod manifest;

pub use config::RunConfig;
pub use manifest::RunManifest;

use crate::error::Result;
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "rescast", version, about = "Residual-correction forecasting pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic truth record with paired forecast cycles.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Resample one grid file onto the pixel counts set in the config.
    Regrid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Select and rebalance training tiles from the truth record.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write each kept tile as its own grid file.
        #[arg(long)]
        write_tiles: bool,
    },
    /// Build residual learning targets and standardisation moments.
    Targets {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the residual corrector and save a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an autoregressive forecast from one initialisation time.
    Rollout {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// `zero` for the no-correction baseline, or a checkpoint path.
        #[arg(long)]
        denoiser: String,
        /// Moments file, needed when the denoiser does not carry its own.
        #[arg(long)]
        norms: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score scenario-bound coverage of each rollout step.
    Uq {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against truth grids.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predictions and truth in the frequency and intensity domains.
    Spectra {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reassemble tile rasters onto a reference grid.
    Mosaic {
        #[arg(long)]
        config: PathBuf,
        /// Tile manifest CSV written by `sample`.
        #[arg(long)]
        tiles: PathBuf,
        /// Directory holding the tile rasters the manifest refers to.
        #[arg(long)]
        tile_dir: PathBuf,
        /// Grid whose geometry the mosaic is placed on.
        #[arg(long)]
        like: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Timestep to assemble; defaults to the manifest's first.
        #[arg(long)]
        timestep: Option<String>,
    },
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, out } => {
            commands::cmd_synth(&RunConfig::load(&config)?, &out)
        }
        Command::Regrid { config, input, output } => {
            commands::cmd_regrid(&RunConfig::load(&config)?, &input, &output)
        }
        Command::Sample { config, data, out, write_tiles } => {
            commands::cmd_sample(&RunConfig::load(&config)?, &data, &out, write_tiles)
        }
        Command::Targets { config, data, out } => {
            commands::cmd_targets(&RunConfig::load(&config)?, &data, &out)
        }
        Command::Train { config, data, targets, out } => {
            commands::cmd_train(&RunConfig::load(&config)?, &data, &targets, &out)
        }
        Command::Rollout { config, data, denoiser, norms, out } => commands::cmd_rollout(
            &RunConfig::load(&config)?,
            &data,
            &denoiser,
            norms.as_deref(),
            &out,
        ),
        Command::Uq { config, data, preds, out } => {
            commands::cmd_uq(&RunConfig::load(&config)?, &data, &preds, &out)
        }
        Command::Verify { config, preds, truth, out } => {
            commands::cmd_verify(&RunConfig::load(&config)?, &preds, &truth, &out)
        }
        Command::Spectra { config, preds, truth, out } => {
            commands::cmd_spectra(&RunConfig::load(&config)?, &preds, &truth, &out)
        }
        Command::Mosaic { config, tiles, tile_dir, like, output, timestep } => {
            commands::cmd_mosaic(
                &RunConfig::load(&config)?,
                &tiles,
                &tile_dir,
                &like,
                &output,
                timestep.as_deref(),
            )
        }
    }
}

/// Entry point for the binary: parse, dispatch, map failures to exit
/// codes (2 usage, 3 data, 4 numeric).
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
