mod backend;
mod commands;
mod error;
mod io;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::*;
use error::CliResult;
use manifest::{config_section, layered};

/// Tiled DDIM inversion and noise-damped guided editing beyond the
/// denoiser's training resolution.
#[derive(Parser)]
#[command(name = "tiledit", version)]
struct Cli {
    /// TOML file with one `[command]` table of defaults per subcommand.
    /// Flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tiled, null-conditioned DDIM inversion of a PNG.
    Invert(InvertArgs),
    /// Guided reverse diffusion from an inverted latent.
    Edit(EditArgs),
    /// Unconditional reverse from an inverted latent.
    Reconstruct(ReconstructArgs),
    /// Write procedural demo images.
    Demo(DemoArgs),
    /// Train the toy texture denoiser.
    TrainToy(TrainArgs),
    /// Render a recorded trajectory to an image grid.
    Plot(PlotArgs),
    /// Edit at several guidance scales and report source/target distances.
    SweepLambda(SweepArgs),
    /// Repeat a run from its manifest.
    Rerun(RerunArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Invert(a) => layered(&a, config_section(cfg, "invert")?.as_ref())?
            .resolve()?
            .execute(),
        Command::Edit(a) => layered(&a, config_section(cfg, "edit")?.as_ref())?.resolve()?.execute(),
        Command::Reconstruct(a) => layered(&a, config_section(cfg, "reconstruct")?.as_ref())?
            .resolve()?
            .execute(),
        Command::Demo(a) => layered(&a, config_section(cfg, "demo")?.as_ref())?.resolve()?.execute(),
        Command::TrainToy(a) => layered(&a, config_section(cfg, "train-toy")?.as_ref())?
            .resolve()?
            .execute(),
        Command::Plot(a) => layered(&a, config_section(cfg, "plot")?.as_ref())?.resolve()?.execute(),
        Command::SweepLambda(a) => layered(&a, config_section(cfg, "sweep-lambda")?.as_ref())?
            .resolve()?
            .execute(),
        Command::Rerun(a) => a.execute(),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
