//! `edpgp` — joint cost/survival mixture modeling from the command line.
//!
//! Subcommands cover the full workflow: `simulate` synthetic datasets,
//! `fit` the model by MCMC into a JSON-lines draw store, `estimate`
//! cost-effectiveness quantities from a store, `subgroups` for co-clustering
//! summaries, `evaluate` for the repeated-simulation frequentist harness,
//! `summarize` to describe any artifact, and `plot-data` to emit tidy CSVs
//! for external plotting.
//!
//! Exit codes: 0 success, 1 invalid input/config/io, 2 numeric failure
//! inside a sampler or integrator, 64 command-line usage error.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use edpgp::Error;
use std::path::PathBuf;
use std::process::ExitCode;

mod commands;
mod eval;
mod report;

#[derive(Parser)]
#[command(name = "edpgp", version, about = "Joint Bayesian cost/survival modeling and cost-effectiveness evaluation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset (plus a latent-truth sidecar).
    Simulate(SimulateArgs),
    /// Fit the model by MCMC, writing a JSON-lines draw store.
    Fit(FitArgs),
    /// Compute net-benefit, CEAC, ICER, subject-effect, and hazard summaries from a draw store.
    Estimate(EstimateArgs),
    /// Co-clustering, representative partition, and heterogeneity summaries from a draw store.
    Subgroups(SubgroupsArgs),
    /// Repeated-simulation evaluation: bias, coverage, and interval width against oracle truth.
    Evaluate(EvaluateArgs),
    /// Describe any artifact produced by the other subcommands.
    Summarize(SummarizeArgs),
    /// Emit plot-ready CSVs (DSI posterior, prior hazard paths, subject effects, posterior predictive times).
    PlotData(PlotDataArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of subjects.
    #[arg(long)]
    n: usize,
    /// Latent-class probability: 0 gives one mode, 0.5 the two-mode mixture.
    #[arg(long, default_value_t = 0.0)]
    pc: f64,
    /// Censoring thinning probability (censored fraction is half of this).
    #[arg(long, default_value_t = 0.1)]
    pdelta: f64,
    /// Willingness-to-pay recorded with the dataset for downstream defaults.
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    /// Output dataset CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Latent-truth sidecar path (default: `<out>` with a `.truth.csv` suffix).
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Input dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Flat key=value config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key (repeatable), e.g. --set burnin=500.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Independent chains; chain c runs with seed+c and draws are pooled in chain order.
    #[arg(long, default_value_t = 1)]
    chains: usize,
    /// Output draw-store path (JSON lines).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// Input draw store.
    #[arg(long)]
    draws: PathBuf,
    /// Willingness-to-pay; defaults to the store's fitted value.
    #[arg(long)]
    kappa: Option<f64>,
    /// Directory for the output CSVs (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SubgroupsArgs {
    /// Input draw store.
    #[arg(long)]
    draws: PathBuf,
    /// Willingness-to-pay for subject effects; defaults to the store's value.
    #[arg(long)]
    kappa: Option<f64>,
    /// Co-clustering probability above which a graph edge is kept (in [0,1)).
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Directory for the output CSVs (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Replicate datasets per setting.
    #[arg(long, default_value_t = 50)]
    replicates: usize,
    /// Subjects per replicate.
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Comma-separated settings among parametric-low, parametric-high, bimodal-low, bimodal-high.
    #[arg(long, default_value = "parametric-low,parametric-high,bimodal-low,bimodal-high")]
    settings: String,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    /// Monte-Carlo replications for the ground-truth oracle (at least 1e6).
    #[arg(long, default_value_t = 1_000_000)]
    oracle_reps: usize,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[arg(long, default_value_t = 1000)]
    burnin: usize,
    #[arg(long, default_value_t = 2)]
    thin: usize,
    /// Override any fit-config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Directory for replicates.csv and report.csv (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Artifact to describe: dataset, truth sidecar, draw store, or any emitted CSV.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct PlotDataArgs {
    /// What to emit: dsi | prior-hazard | ite | predictive.
    #[arg(long)]
    kind: String,
    /// Input draw store.
    #[arg(long)]
    draws: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Willingness-to-pay for dsi/ite (default: the store's value).
    #[arg(long)]
    kappa: Option<f64>,
    /// Number of prior hazard paths.
    #[arg(long, default_value_t = 20)]
    paths: usize,
    /// RNG seed for sampled kinds (default: derived from the store seed).
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Simulate(args) => commands::simulate(args),
        Cmd::Fit(args) => commands::fit(args),
        Cmd::Estimate(args) => commands::estimate(args),
        Cmd::Subgroups(args) => commands::subgroups(args),
        Cmd::Evaluate(args) => eval::evaluate(args),
        Cmd::Summarize(args) => report::summarize(args),
        Cmd::PlotData(args) => report::plot_data(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Numeric { .. } => 2,
                _ => 1,
            })
        }
    }
}
