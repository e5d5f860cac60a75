//! Command-line front end: subcommands, config resolution and run output.

pub mod commands;
pub mod config;
pub mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::bench::Method;
use crate::error::Error;
use config::{
    load_config, DiagnoseConfig, FeatureKind, ImageDiffConfig, RocBenchConfig, SolveConfig,
    SynthDemoConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mn-delta", version, about = "Detect sparse changes between two pairwise Markov networks")]
pub struct Cli {
    /// TOML config (flat keys mirroring the flags) or a previous run's manifest.json
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root directory for run output
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Worker threads
    #[arg(long, global = true, env = "MN_DELTA_JOBS", value_parser = clap::value_parser!(u32).range(1..))]
    pub jobs: Option<u32>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Recover a planted change on a random Gaussian network pair
    SynthDemo(SynthDemoArgs),
    /// ROC/AUC benchmark on lattice change pairs
    RocBench(RocBenchArgs),
    /// Find changed window pairs between two aligned P6 images
    ImageDiff(ImageDiffArgs),
    /// Fisher-information assumption diagnostics at the true change
    Diagnose(DiagnoseArgs),
    /// Fit one estimator to two CSV datasets
    Solve(SolveArgs),
}

#[derive(Debug, Args)]
pub struct SynthDemoArgs {
    #[arg(long)]
    pub m: Option<usize>,
    /// Edges removed from P to form Q
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub density: Option<f64>,
    /// Comma-separated; lambda = alpha * ln(m) / n
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub tau: Option<Vec<f64>>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RocBenchArgs {
    /// Comma-separated subset of kliep,cp
    #[arg(long, value_delimiter = ',')]
    pub method: Option<Vec<Method>>,
    /// Comma-separated perfect squares
    #[arg(long, value_delimiter = ',')]
    pub m: Option<Vec<usize>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub lambda_points: Option<usize>,
    #[arg(long)]
    pub lambda_ratio: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub tau_points: Option<usize>,
    /// Count variance terms (u == v) in the ROC
    #[arg(long)]
    pub score_diagonal: Option<bool>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ImageDiffArgs {
    pub image_p: Option<String>,
    pub image_q: Option<String>,
    /// Use a generated scene pair instead of image files
    #[arg(long)]
    pub demo_seed: Option<u64>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Stop once more than this many edges are active
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Largest Fisher-information block evaluated densely
    #[arg(long)]
    pub cap: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Headerless CSV, one sample per row
    #[arg(long)]
    pub xp: Option<String>,
    #[arg(long)]
    pub xq: Option<String>,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lambda_fraction: Option<f64>,
    #[arg(long, value_enum)]
    pub feature: Option<FeatureKind>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

macro_rules! overlay {
    ($cfg:ident, $args:ident, $($field:ident),+ $(,)?) => {
        $( if let Some(v) = $args.$field { $cfg.$field = v; } )+
    };
}

macro_rules! overlay_opt {
    ($cfg:ident, $args:ident, $($field:ident),+ $(,)?) => {
        $( if $args.$field.is_some() { $cfg.$field = $args.$field; } )+
    };
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Argument(_) => EXIT_USAGE,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

fn jobs(cli_jobs: Option<u32>) -> usize {
    cli_jobs
        .map(|j| j as usize)
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1)
}

/// Resolves configuration and runs the subcommand on a pool of `--jobs` workers.
pub fn dispatch(cli: Cli) -> crate::Result<PathBuf> {
    let jobs = jobs(cli.jobs);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Argument(format!("cannot start {jobs} workers: {e}")))?;
    let config = cli.config.as_deref();
    let out = cli.out.as_path();
    match cli.command {
        Command::SynthDemo(a) => {
            let mut c: SynthDemoConfig = load_config(config)?;
            overlay!(c, a, m, d, n, density, alpha, seed, epsilon, tau, max_iterations, tolerance);
            pool.install(|| commands::synth_demo(out, &c, jobs))
        }
        Command::RocBench(a) => {
            let mut c: RocBenchConfig = load_config(config)?;
            overlay!(
                c, a, method, m, trials, seed, n, lambda_points, lambda_ratio, epsilon, tau_points,
                score_diagonal, max_iterations, tolerance
            );
            pool.install(|| commands::roc_bench(out, &c, jobs))
        }
        Command::ImageDiff(a) => {
            let mut c: ImageDiffConfig = load_config(config)?;
            overlay_opt!(c, a, image_p, image_q, demo_seed);
            overlay!(c, a, window, stride, bandwidth, target, max_iterations, tolerance);
            pool.install(|| commands::image_diff(out, &c, jobs))
        }
        Command::Diagnose(a) => {
            let mut c: DiagnoseConfig = load_config(config)?;
            overlay!(c, a, m, d, n, density, seed, cap);
            pool.install(|| commands::diagnose(out, &c, jobs))
        }
        Command::Solve(a) => {
            let mut c: SolveConfig = load_config(config)?;
            overlay_opt!(c, a, xp, xq, lambda);
            overlay!(c, a, method, lambda_fraction, feature, bandwidth, epsilon, tau, max_iterations, tolerance);
            pool.install(|| commands::solve(out, &c, jobs))
        }
    }
}
