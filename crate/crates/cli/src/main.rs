//! `backtrack`: fit, cross-validate, simulate and check the theory of Lasso
//! paths with hierarchically added interactions.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::FileConfig;

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "BACKTRACK_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "backtrack", version, about = "Lasso paths with hierarchically discovered interactions")]
struct Cli {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (1 runs fully serially). [default: $BACKTRACK_WORKERS, else all cores]
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the engine on a CSV and write tree.json, paths.csv and model.json.
    Fit(FitArgs),
    /// Cross-validate over (λ, path) and write the selected model.
    Cv(CvArgs),
    /// Run the method comparison on simulated data.
    Simulate(SimulateArgs),
    /// Check the entry lemma and the sandwich/recovery guarantees.
    VerifyTheory(TheoryArgs),
    /// Convert a tree.json into a coefficient table.
    ExportPaths(ExportArgs),
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct Target {
    /// Numeric response column (least-squares Lasso).
    #[arg(long)]
    response: Option<String>,
    /// Class label column (multinomial group Lasso).
    #[arg(long)]
    labels: Option<String>,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    target: Target,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RestartArg {
    Naive,
    Linear,
    Bisection,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RefitArg {
    OlsHybrid,
    Lasso,
}

#[derive(Args, Debug, Default)]
pub struct EngineArgs {
    /// Largest interaction order; 1 disables interactions. [default: 2]
    #[arg(long)]
    pub max_order: Option<usize>,
    /// Number of λ values. [default: 100]
    #[arg(long)]
    pub grid_len: Option<usize>,
    /// λ_L / λ_1. [default: 0.001]
    #[arg(long)]
    pub grid_ratio: Option<f64>,
    /// A solution with more active variables ends its path. [default: 50]
    #[arg(long)]
    pub max_active: Option<usize>,
    /// Candidate-set cap. [default: p + 1225]
    #[arg(long)]
    pub max_candidates: Option<usize>,
    /// Restart rule for enlarged paths. [default: bisection]
    #[arg(long, value_enum)]
    pub restart: Option<RestartArg>,
    /// Scale columns to unit variance (centering always happens). [default: true]
    #[arg(long)]
    pub standardize: Option<bool>,
}

#[derive(Args, Debug, Default)]
pub struct CvFlags {
    /// Folds per split. [default: 5]
    #[arg(long)]
    pub folds: Option<usize>,
    /// Independent splits averaged. [default: 5]
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Coefficients scored on validation folds. [default: ols-hybrid]
    #[arg(long, value_enum)]
    pub refit: Option<RefitArg>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    engine: EngineArgs,
    /// Path rank k of the reported model. [default: last path]
    #[arg(long)]
    rank: Option<usize>,
    /// 0-based grid index l of the reported model. [default: last stored point]
    #[arg(long)]
    index: Option<usize>,
    /// Coefficients of the reported model. [default: lasso]
    #[arg(long, value_enum)]
    refit: Option<RefitArg>,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    cv: CvFlags,
    /// Fold-assignment seed (required here or in the config file).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Simulation setting 1–5. [default: 1]
    #[arg(long)]
    scenario: Option<u8>,
    /// Signal-to-noise ratio. [default: 3]
    #[arg(long)]
    snr: Option<f64>,
    /// Replications. [default: 20]
    #[arg(long)]
    replications: Option<usize>,
    /// Rows per data set. [default: 250]
    #[arg(long)]
    n: Option<usize>,
    /// Main effects. [default: 1000]
    #[arg(long)]
    p: Option<usize>,
    /// Fresh rows for the prediction error. [default: 10000]
    #[arg(long)]
    test_rows: Option<usize>,
    /// Comma-separated methods. [default: main,iterate,backtracking,oracle]
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Master seed (required here or in the config file).
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    cv: CvFlags,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TheoryArgs {
    /// Theory spec JSON (truth, n, population, design seed, t, draws).
    /// [default: the shipped p = 20 reference]
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Noise seed (required here or in the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Constructed entry-lemma instances. [default: 100]
    #[arg(long)]
    lemma_trials: Option<usize>,
    /// Ratio of |β^S_v| to its entry threshold in those instances. [default: 1.25]
    #[arg(long)]
    lemma_margin: Option<f64>,
    /// Noise draws for the sandwich frequency. [default: from the spec]
    #[arg(long)]
    draws: Option<usize>,
    /// Confidence parameter t. [default: from the spec]
    #[arg(long)]
    t: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ExportFormat {
    /// rank,l,lambda,variable,coefficient (class too for multinomial trees).
    Long,
    /// One row per (rank, l), one column per candidate.
    Wide,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// tree.json written by `fit` or `cv`.
    #[arg(long)]
    tree: PathBuf,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
    /// Table layout. [default: wide]
    #[arg(long, value_enum)]
    format: Option<ExportFormat>,
}

/// Exit status of a failed command.
#[derive(Debug)]
pub enum Failure {
    /// Bad input, configuration or I/O (exit 2).
    Input(anyhow::Error),
    /// A solver did not converge or hit a degenerate system (exit 3).
    Solver(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let solver = e.chain().any(|c| {
            matches!(
                c.downcast_ref::<backtrack::Error>(),
                Some(
                    backtrack::Error::NoConvergence { .. }
                        | backtrack::Error::RankDeficient { .. }
                        | backtrack::Error::EventNotSatisfied(_)
                )
            )
        });
        if solver {
            Failure::Solver(e)
        } else {
            Failure::Input(e)
        }
    }
}

fn workers(cli: &Cli, file: &FileConfig) -> Result<usize> {
    if let Some(w) = cli.workers.or(file.workers) {
        anyhow::ensure!(w >= 1, "workers must be at least 1");
        return Ok(w);
    }
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let w: usize = v
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("{WORKERS_ENV} must be a positive integer, got {v:?}"))?;
        anyhow::ensure!(w >= 1, "{WORKERS_ENV} must be at least 1");
        return Ok(w);
    }
    Ok(std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn run(cli: Cli) -> std::result::Result<(), Failure> {
    let file = FileConfig::load(cli.config.as_deref()).map_err(Failure::Input)?;
    let threads = workers(&cli, &file).map_err(Failure::Input)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Input(e.into()))?;
    pool.install(|| match cli.command {
        Command::Fit(a) => commands::fit(&a, &file),
        Command::Cv(a) => commands::cv(&a, &file),
        Command::Simulate(a) => commands::simulate(&a, &file),
        Command::VerifyTheory(a) => commands::verify_theory(&a, &file),
        Command::ExportPaths(a) => commands::export_paths(&a),
    })
    .map_err(Failure::from)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(e)) => {
            eprintln!("solver failure: {e:#}");
            ExitCode::from(3)
        }
    }
}
