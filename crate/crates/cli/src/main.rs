//! `smoothgauge` command-line driver.

mod commands;
mod failure;
mod hyper;
mod io;
mod manifest;
mod map;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use failure::Failure;
use manifest::RunManifest;

#[derive(Parser, Debug)]
#[command(name = "smoothgauge", version, about = "Measure the smoothing induced by spatial priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Adjacency input shared by several commands.
#[derive(Args, Debug, Clone)]
pub struct GraphArgs {
    /// Edge list (`idA,idB` per line) or GeoJSON polygons (`.geojson`/`.json`, queen contiguity).
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Rook lattice `ROWSxCOLS` with ids `r{row}c{col}`.
    #[arg(long)]
    pub lattice: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Total conditional variance of a prior, optionally over a parameter sweep.
    Tcv(TcvArgs),
    /// Fit the Poisson-logit-normal model to one count dataset.
    Fit(FitArgs),
    /// Simulate replicate count sets from a scenario.
    Simulate(SimulateArgs),
    /// Run a replicate study and tabulate expected smoothing metrics.
    Study(StudyArgs),
    /// Poisson-Gamma smoothing curves over a (mu, sigma2) grid.
    PgCurve(PgCurveArgs),
    /// Render a choropleth SVG of area rates.
    Map(MapArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Tcv(_) => "tcv",
            Command::Fit(_) => "fit",
            Command::Simulate(_) => "simulate",
            Command::Study(_) => "study",
            Command::PgCurve(_) => "pg-curve",
            Command::Map(_) => "map",
        }
    }
}

#[derive(Args, Debug)]
pub struct TcvArgs {
    /// iid, gp, icar, bym, pcar, lcar or bym2.
    #[arg(long)]
    pub prior: String,
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Number of areas, for the iid prior without a graph.
    #[arg(long = "A", value_name = "AREAS")]
    pub areas: Option<usize>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub psi: Option<f64>,
    /// `param=lo:hi:n`, evenly spaced and inclusive.
    #[arg(long)]
    pub sweep: Option<String>,
    /// CSV file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SpCenterArg {
    Unweighted,
    Population,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// CSV `area_id,count`.
    #[arg(long)]
    pub counts: PathBuf,
    /// CSV `area_id,population`.
    #[arg(long = "pop")]
    pub pop: PathBuf,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[arg(long)]
    pub prior: String,
    /// Hyperprior, repeatable: `sigma2=U(0,0.01)`, `sigma=U(0,10)`, `lambda=0.5`, ...
    #[arg(long)]
    pub hyper: Vec<String>,
    /// JSON chain protocol; individual flags override it.
    #[arg(long)]
    pub mcmc: Option<PathBuf>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub target_accept: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rates are reported per this many people.
    #[arg(long, default_value_t = 1e5)]
    pub rate_scale: f64,
    #[arg(long, value_enum, default_value_t = SpCenterArg::Unweighted)]
    pub sp_center: SpCenterArg,
    /// Exit 0 even when max R-hat exceeds 1.1.
    #[arg(long)]
    pub allow_nonconverged: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario JSON.
    #[arg(long, conflicts_with = "preset")]
    pub scenario: Option<PathBuf>,
    /// scenario1 .. scenario6.
    #[arg(long)]
    pub preset: Option<String>,
    /// Study region as GeoJSON polygons.
    #[arg(long)]
    pub polygons: Option<PathBuf>,
    /// Unit-square lattice `ROWSxCOLS` as the study region.
    #[arg(long, conflicts_with = "polygons")]
    pub lattice: Option<String>,
    /// CSV `area_id,population` for presets.
    #[arg(long = "pop")]
    pub pop: Option<PathBuf>,
    /// Common population for presets without `--pop`.
    #[arg(long, default_value_t = 1e5)]
    pub population: f64,
    /// Replicate count sets (B).
    #[arg(long = "B", value_name = "REPLICATES")]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StudyArgs {
    /// Study plan JSON.
    #[arg(long, conflicts_with = "preset")]
    pub plan: Option<PathBuf>,
    /// desk-within-icar, desk-within-lcar, desk-across-{small,medium,large,uniform}.
    #[arg(long)]
    pub preset: Option<String>,
    /// `replicates.json` written by `simulate`.
    #[arg(long)]
    pub replicates: PathBuf,
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Use only the first B replicate sets.
    #[arg(long = "B", value_name = "REPLICATES")]
    pub b: Option<usize>,
    /// Overrides the plan's chain seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Refit every job instead of reusing `<out>/cache`.
    #[arg(long)]
    pub no_cache: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PgCurveArgs {
    /// CSV `area_id,expected`; needs `--rbar`.
    #[arg(long, conflicts_with = "pop")]
    pub expected: Option<PathBuf>,
    #[arg(long)]
    pub rbar: Option<f64>,
    /// CSV `area_id,population`; needs `--total-cases`.
    #[arg(long = "pop")]
    pub pop: Option<PathBuf>,
    #[arg(long)]
    pub total_cases: Option<f64>,
    /// Comma-separated prior means of the relative risk.
    #[arg(long, default_value = "1")]
    pub mu: String,
    /// Comma-separated prior variances of the relative risk.
    #[arg(long)]
    pub sigma2: String,
    #[arg(long = "B", value_name = "REPLICATES", default_value_t = 200)]
    pub b: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1e5)]
    pub rate_scale: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MapArgs {
    /// CSV with `area_id` first.
    #[arg(long)]
    pub rates: PathBuf,
    /// Value column; defaults to the second column.
    #[arg(long)]
    pub column: Option<String>,
    #[arg(long)]
    pub polygons: PathBuf,
    /// Multiplier to the display scale (1e5 turns per-person rates into per 100,000).
    #[arg(long, default_value_t = 1e5)]
    pub scale: f64,
    #[arg(long, default_value_t = map::DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long, default_value = "rate per 100,000")]
    pub title: String,
    /// SVG output file.
    #[arg(long)]
    pub out: PathBuf,
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("SMOOTHGAUGE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::usage(format!("SMOOTHGAUGE_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::usage(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(f) = configure_threads() {
        eprintln!("error: {f}");
        return ExitCode::from(f.code());
    }
    let mut manifest = RunManifest::new(cli.command.name(), std::env::args().collect());
    let outcome = match &cli.command {
        Command::Tcv(a) => commands::tcv(a, &mut manifest),
        Command::Fit(a) => commands::fit(a, &mut manifest),
        Command::Simulate(a) => commands::simulate(a, &mut manifest),
        Command::Study(a) => commands::study(a, &mut manifest),
        Command::PgCurve(a) => commands::pg_curve(a, &mut manifest),
        Command::Map(a) => commands::map(a, &mut manifest),
    };
    let written = manifest.finish(&outcome);
    match (outcome, written) {
        (Err(f), _) | (Ok(()), Err(f)) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
        (Ok(()), Ok(())) => ExitCode::SUCCESS,
    }
}
