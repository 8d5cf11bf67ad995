use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{ProblemKind, Size, SolveConfig};

#[derive(Debug, Parser)]
#[command(name = "bdc", version, about = "Sparse recovery with inexact Bregman proximal DC methods")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random instance file.
    Gen(GenArgs),
    /// Solve one instance and write a JSON report.
    Solve(SolveArgs),
    /// Run a benchmark grid and write a summary CSV.
    Bench(BenchArgs),
    /// Plot normalized objective curves from solve reports.
    Plot(PlotArgs),
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_parser = positive)]
    pub m: usize,
    #[arg(long, value_parser = positive)]
    pub n: usize,
    /// Number of nonzeros in the planted signal.
    #[arg(long, value_parser = positive)]
    pub s: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Instance file written by `bdc gen`.
    #[arg(long, conflicts_with_all = ["a_csv", "b_csv"], required_unless_present = "a_csv")]
    pub instance: Option<PathBuf>,
    /// Matrix as CSV (one row per line); requires --b-csv.
    #[arg(long, requires = "b_csv")]
    pub a_csv: Option<PathBuf>,
    #[arg(long, requires = "a_csv")]
    pub b_csv: Option<PathBuf>,
    /// JSON file with solve settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub problem: Option<ProblemKind>,
    /// ibpdca-sc1, ibpdca-sc2 or pdcae.
    #[arg(long, conflicts_with = "criterion")]
    pub method: Option<String>,
    /// Shorthand for --method ibpdca-<criterion>.
    #[arg(long, value_parser = ["sc1", "sc2"])]
    pub criterion: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lambda_c: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub nf: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub kappa_c: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, value_parser = positive)]
    pub max_iter: Option<usize>,
    /// Report path.
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
    /// Also write the per-iteration trajectory as CSV.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
}

impl SolveArgs {
    pub fn flag_config(&self) -> SolveConfig {
        SolveConfig {
            problem: self.problem,
            method: self
                .method
                .clone()
                .or_else(|| self.criterion.as_ref().map(|c| format!("ibpdca-{c}"))),
            lambda: self.lambda,
            lambda_c: self.lambda_c,
            mu: self.mu,
            nf: self.nf,
            kappa: self.kappa,
            kappa_c: self.kappa_c,
            sigma: self.sigma,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// JSON grid description; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub problem: Option<ProblemKind>,
    /// Comma-separated sizes such as 200x2000x40,400x4000x80.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<Size>,
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Vec<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub nfs: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    #[arg(long, value_parser = positive)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub base_seed: Option<u64>,
    #[arg(long, value_parser = positive)]
    pub max_iter: Option<usize>,
    /// Directory for the summary CSV and per-run reports.
    #[arg(long, default_value = "bench")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotAxis {
    Time,
    Iter,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Solve reports (JSON) to compare.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long, default_value = "plot.svg")]
    pub out: PathBuf,
    /// Normalized data as CSV; defaults to the SVG path with a .csv extension.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "time")]
    pub x_axis: PlotAxis,
}
