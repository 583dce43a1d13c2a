use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "tfm", version, about = "Two-regime threshold factor models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the threshold, loading spaces and factor count.
    Fit(FitArgs),
    /// Rank candidate threshold variables, optionally with held-out comparison.
    Screen(ScreenArgs),
    /// Generate one panel from a simulation design.
    Simulate(SimulateArgs),
    /// Run a simulation study and write its summary tables.
    Replicate(ReplicateArgs),
}

/// The observed panel: one row per time point, one column per series.
#[derive(Debug, Args)]
pub struct InputArgs {
    /// Delimited text file.
    pub panel: PathBuf,
    /// First row holds column labels (otherwise columns are `col1`, `col2`, ...).
    #[arg(long)]
    pub header: bool,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
}

/// Estimation settings shared by `fit` and `screen`.
#[derive(Debug, Args)]
pub struct TuningArgs {
    /// Number of leads in the moment aggregates.
    #[arg(long)]
    pub h0: Option<usize>,
    /// Quantile levels of z bounding the threshold search.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub eta: Option<Vec<f64>>,
    /// Number of factors; estimated when absent.
    #[arg(long)]
    pub k: Option<usize>,
    /// Largest factor count considered by the eigenvalue-ratio estimate.
    #[arg(long = "R", value_name = "R")]
    pub r_max: Option<usize>,
    /// Tail partitions smaller than this produce a warning.
    #[arg(long)]
    pub min_tail: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML file with default settings; flags take precedence.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Threshold variable: a column label, `col:NAME`, `lag:NAME:L`,
    /// `csd:L`, `sq:L` or `file:PATH[#COLUMN]`.
    #[arg(long, value_name = "SPEC")]
    pub z: String,
    #[command(flatten)]
    pub tuning: TuningArgs,
    /// Also write the recovered signal, factor and regime series.
    #[arg(long)]
    pub signals: bool,
}

#[derive(Debug, Args)]
pub struct ScreenArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Comma-separated candidates; `csd`, `sq` and `lag` accept ranges such as
    /// `csd:1..8`.
    #[arg(long, value_name = "LIST")]
    pub candidates: String,
    #[command(flatten)]
    pub tuning: TuningArgs,
    /// Quantile band of z searched by the CUSUM statistic.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub band: Option<Vec<f64>>,
    /// Candidates kept for comparison.
    #[arg(long)]
    pub top_m: Option<usize>,
    /// Fit each retained candidate on a training window and report the
    /// held-out criterion.
    #[arg(long)]
    pub compare: bool,
    /// Training length for `--compare`; half the sample by default.
    #[arg(long)]
    pub t0: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Design file (JSON when the extension is `.json`, TOML otherwise).
    #[arg(long, value_name = "FILE", conflicts_with = "example")]
    pub spec: Option<PathBuf>,
    /// Built-in design, 1 to 4.
    #[arg(long)]
    pub example: Option<u8>,
    /// Setting within the design (examples 1 to 3).
    #[arg(long)]
    pub setting: Option<u8>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    /// Loading-space separation for example 4.
    #[arg(long)]
    pub d: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    /// Design, 1 to 4.
    pub example: u8,
    /// Smallest cell of each table with 20 replications.
    #[arg(long)]
    pub quick: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replications per cell.
    #[arg(long)]
    pub reps: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}
