//! `seqfill` command-line front end.

mod commands;
mod plot;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Reconstruct vector sequences with missing values.
#[derive(Debug, Parser)]
#[command(name = "seqfill", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a density model to a CSV of training points.
    Train(TrainArgs),
    /// Fill the missing cells of a sequence.
    Reconstruct(ReconstructArgs),
    /// Score reconstructions against the true sequence.
    Evaluate(EvaluateArgs),
    /// Write experiment data sets, trajectories and masks.
    Generate(GenerateArgs),
    /// List the modes of a model, optionally conditioned on some coordinates.
    Modes(ModesArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelKind {
    Gm,
    Gtm,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    model: ModelKind,
    /// Mixture components (gm) or latent grid points (gtm).
    #[arg(long)]
    k: usize,
    /// Number of GTM basis functions (a perfect power of the latent dimension).
    #[arg(long, default_value_t = 9)]
    gtm_basis: usize,
    /// GTM basis width in units of the basis centre spacing.
    #[arg(long, default_value_t = 1.0)]
    gtm_width_factor: f64,
    #[arg(long, default_value_t = 1)]
    latent_dim: usize,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Training CSV, one point per row.
    data: PathBuf,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    /// Mixture or GTM JSON.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(seqfill::reconstruct::Method::NAMES))]
    method: String,
    /// Complete sequence; required by cmode, reported against otherwise.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Constraint as inline JSON or a path to a JSON file.
    #[arg(long)]
    constraint: Option<String>,
    #[arg(long, default_value_t = seqfill::reconstruct::DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Offer every component centroid at steps with nothing observed.
    #[arg(long)]
    all_centroids_when_all_missing: bool,
    #[arg(long)]
    out: PathBuf,
    /// Write a JSON run report here.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Write CSV and SVG plot data into this directory.
    #[arg(long)]
    emit_plot_data: Option<PathBuf>,
    /// Sequence CSV with empty cells for missing values.
    input: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    truth: PathBuf,
    /// `[MASK:]METHOD=FILE`, repeatable.
    #[arg(long = "recon", required = true)]
    recons: Vec<String>,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Write the text table here instead of standard output.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(subcommand)]
    what: GenerateKind,
}

#[derive(Debug, Subcommand)]
enum GenerateKind {
    /// Noisy samples of the curve t₂ = t₁ + 3 sin t₁.
    ToyTrain(SampleArgs),
    /// Equispaced toy trajectory.
    ToyTraj(SampleArgs),
    /// Noisy samples of (θ, x) for the two-link arm.
    ArmTrain(SampleArgs),
    /// The default arm trajectory.
    ArmTraj(SampleArgs),
    /// A missing-data mask, optionally applied to a CSV.
    Mask(MaskArgs),
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MaskKindArg {
    Random,
    Fwd,
    Inv,
}

#[derive(Debug, Args)]
struct MaskArgs {
    #[arg(long, value_enum)]
    kind: MaskKindArg,
    /// Probability that a cell is missing (random masks).
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    /// Columns that are missing, comma separated (fwd/inv masks).
    #[arg(long, value_delimiter = ',')]
    missing_cols: Vec<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Also write this complete CSV with the masked cells emptied.
    #[arg(long)]
    apply: Option<PathBuf>,
    /// Destination of the masked copy.
    #[arg(long, requires = "apply")]
    apply_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ModesArgs {
    #[arg(long)]
    model: PathBuf,
    /// Observed coordinates, e.g. `1=-3.8` or `0=0.5,2=1`.
    #[arg(long)]
    condition: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn configure_threads() -> Result<(), commands::CliError> {
    let Ok(raw) = std::env::var("SEQFILL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| commands::CliError::usage(format!("SEQFILL_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| commands::CliError::usage(format!("cannot size thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Generate(a) => commands::generate(a),
        Command::Modes(a) => commands::modes(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("seqfill: {e}");
            ExitCode::from(e.code)
        }
    }
}
