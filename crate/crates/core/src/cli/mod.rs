//! Command-line front end.

mod args;
mod commands;
mod fitdir;
mod manifest;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use ppf::PpfError;

pub use args::*;

#[derive(Parser, Debug)]
#[command(name = "ppf", version, about = "Poisson process factorization of binned mutation catalogs")]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Record that ordered reductions were requested. Reductions are
    /// always chunked in a fixed order, so results never depend on the
    /// thread count.
    #[arg(long)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic data set with its generating parameters.
    Simulate(SimulateArgs),
    /// Maximum a posteriori fit from several random starts.
    FitMap(FitMapArgs),
    /// Gibbs sampler, optionally warm-started from a fit directory.
    FitMcmc(FitMcmcArgs),
    /// Gibbs sampler with signatures fixed to a reference matrix.
    Refit(RefitArgs),
    /// Compressive Poisson NMF of the aggregated count matrix.
    Compnmf(CompnmfArgs),
    /// Most probable signature for every observed mutation.
    Attribute(AttributeArgs),
    /// Prune a fit and score it against a known truth.
    Postprocess(PostprocessArgs),
    /// Windowed predicted and observed mutation totals.
    PredictTrack(PredictTrackArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::FitMap(_) => "fit-map",
            Command::FitMcmc(_) => "fit-mcmc",
            Command::Refit(_) => "refit",
            Command::Compnmf(_) => "compnmf",
            Command::Attribute(_) => "attribute",
            Command::Postprocess(_) => "postprocess",
            Command::PredictTrack(_) => "predict-track",
            Command::Replay(_) => "replay",
        }
    }
}

pub fn run(cli: Cli, argv: &[String]) -> Result<()> {
    let threads = cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    ppf::par::set_threads(threads);
    let ctx = manifest::RunContext {
        command: cli.command.name().to_string(),
        args: manifest::command_args(argv, cli.command.name()),
        threads,
        deterministic: cli.deterministic,
    };
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a, &ctx),
        Command::FitMap(a) => commands::fit_map(&a, &ctx),
        Command::FitMcmc(a) => commands::fit_mcmc(&a, &ctx),
        Command::Refit(a) => commands::refit(&a, &ctx),
        Command::Compnmf(a) => commands::compnmf(&a, &ctx),
        Command::Attribute(a) => commands::attribute(&a, &ctx),
        Command::Postprocess(a) => commands::postprocess(&a, &ctx),
        Command::PredictTrack(a) => commands::predict_track(&a, &ctx),
        Command::Replay(a) => replay(&a.manifest, &a.out),
    }
}

fn replay(manifest: &PathBuf, out: &PathBuf) -> Result<()> {
    let argv = manifest::replay_argv(manifest, out)?;
    let cli = Cli::try_parse_from(&argv).map_err(|e| PpfError::Config(format!("manifest arguments do not parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(PpfError::Config("a manifest cannot replay another replay".into()).into());
    }
    run(cli, &argv)
}

/// Exit status for an error: library errors map to their category,
/// anything else counts as a data error.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    e.chain()
        .find_map(|c| c.downcast_ref::<PpfError>())
        .map_or(3, |p| p.exit_code() as u8)
}
