use std::path::PathBuf;

use brw_core::forward_sim::DEFAULT_BUDGET_NODES;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "brw", version, about = "Branching random walk experiments in the boundary case")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Master seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// CSV destination; the manifest goes to `<out>.manifest.json`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Node budget per forward tree search.
    #[arg(long, global = true, default_value_t = DEFAULT_BUDGET_NODES)]
    pub budget_nodes: u64,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Reproduction laws.
    #[command(subcommand)]
    Laws(LawsCmd),
    /// Forward simulation.
    #[command(subcommand)]
    Simulate(SimulateCmd),
    /// Spine and many-to-one checks.
    #[command(subcommand)]
    Spine(SpineCmd),
    /// Corridor probabilities for enriched random walks.
    #[command(subcommand)]
    Corridor(CorridorCmd),
    /// Left tail of the consistent maximal displacement.
    #[command(subcommand)]
    Tail(TailCmd),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Laws(LawsCmd::Check(_)) => "laws check",
            Command::Simulate(SimulateCmd::Cmd(_)) => "simulate cmd",
            Command::Spine(SpineCmd::Check(_)) => "spine check",
            Command::Spine(SpineCmd::Zmean(_)) => "spine zmean",
            Command::Corridor(CorridorCmd::Dp(_)) => "corridor dp",
            Command::Corridor(CorridorCmd::Mc(_)) => "corridor mc",
            Command::Corridor(CorridorCmd::Fit(_)) => "corridor fit",
            Command::Corridor(CorridorCmd::Gap(_)) => "corridor gap",
            Command::Tail(TailCmd::Curve(_)) => "tail curve",
            Command::Tail(TailCmd::Contrast(_)) => "tail contrast",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LawArg {
    /// Law config file (TOML).
    #[arg(long = "law", visible_alias = "config", value_name = "PATH")]
    pub law: PathBuf,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum LawsCmd {
    /// Boundary residuals, σ², λ* and the integrability functional.
    Check(LawsCheck),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LawsCheck {
    /// Law config file (TOML); `--law` also works.
    #[arg(value_name = "CONFIG", required_unless_present = "law")]
    pub config: Option<PathBuf>,
    #[arg(long = "law", visible_alias = "config", value_name = "PATH", conflicts_with = "config")]
    pub law: Option<PathBuf>,
    /// Points at which `x² P̂(ξ ≥ x)` is tabulated.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0])]
    pub x: Vec<f64>,
    /// Monte Carlo draws for the moment cross-check (0 skips it).
    #[arg(long, default_value_t = 0)]
    pub draws: usize,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum SimulateCmd {
    /// Consistent maximal displacement `L_n` per replicate.
    Cmd(SimulateArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub law: LawArg,
    #[arg(long)]
    pub n: usize,
    /// Search cap; values above it are reported censored.
    #[arg(long, default_value_t = f64::INFINITY)]
    pub cap: f64,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum SpineCmd {
    /// Forward sum against spine-weighted estimate of one functional.
    Check(SpineCheck),
    /// First moment of the corridor count `Z_n`.
    Zmean(SpineZmean),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SpineCheck {
    #[command(flatten)]
    pub law: LawArg,
    #[arg(long)]
    pub n: usize,
    /// `constant`, `max-penalty` or `corridor:lo:hi`.
    #[arg(long, default_value = "constant")]
    pub functional: String,
    #[arg(long, default_value_t = 10_000)]
    pub replicates: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SpineZmean {
    #[command(flatten)]
    pub law: LawArg,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long)]
    pub n: usize,
    /// `dp` (lattice laws) or `mc`.
    #[arg(long, default_value = "dp")]
    pub method: String,
    #[arg(long, default_value_t = 10_000)]
    pub replicates: usize,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum CorridorCmd {
    /// Exact transfer-matrix probabilities.
    Dp(CorridorArgs),
    /// Monte Carlo probabilities.
    Mc(CorridorMc),
    /// Exponent extrapolation over the n grid.
    Fit(CorridorArgs),
    /// Fit with and without the mark law.
    Gap(CorridorArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CorridorArgs {
    /// `s:lo:hi,...` knots in `a_n` units, or `profile:lambda:lambda_star:delta`.
    #[arg(long, default_value = "0:-1:1,1:-1:1")]
    pub band: String,
    /// `lattice:h`, `gaussian:sigma2` or `table:x=p;x=p;...`.
    #[arg(long, default_value = "lattice:1")]
    pub walk: String,
    /// `none`, `bounded:max`, `pareto:c` or `two-point:c`.
    #[arg(long, default_value = "none")]
    pub mark: String,
    /// `const:t`, `scaled:A` (τ_n = A a_n) or `linear` (τ_n = n).
    #[arg(long, default_value = "scaled:10")]
    pub threshold: String,
    /// `cube-root`, `fourth-root`, `fixed:a` or `table:n=a;n=a;...`.
    #[arg(long, default_value = "fixed:1")]
    pub an_rule: String,
    /// Start offset in `a_n` units.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub start: f64,
    #[arg(long, value_delimiter = ',', required = true)]
    pub n_grid: Vec<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CorridorMc {
    #[command(flatten)]
    pub corridor: CorridorArgs,
    #[arg(long, default_value_t = 100_000)]
    pub replicates: usize,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum TailCmd {
    /// `P(L_n ≤ λ n^{1/3})` on a λ grid, directly or through moment proxies.
    Curve(TailCurveArgs),
    /// Spine corridor survival with the ξ constraint, integrable vs heavy law.
    Contrast(TailContrastArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TailCurveArgs {
    #[command(flatten)]
    pub law: LawArg,
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambdas: Vec<f64>,
    /// `direct` or `moment_dp`.
    #[arg(long, default_value = "moment_dp")]
    pub mode: String,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, default_value_t = 1000)]
    pub replicates: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TailContrastArgs {
    #[arg(long, value_name = "PATH")]
    pub nice: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub heavy: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub n_grid: Vec<usize>,
    /// ξ threshold factor: `ξ ≤ A n^{1/3}`.
    #[arg(long = "a", default_value_t = 10.0)]
    pub a: f64,
    /// Spine band `[-w n^{1/3}, w n^{1/3}]`.
    #[arg(long, default_value_t = 3.0)]
    pub band_width: f64,
    #[arg(long, default_value_t = 10_000)]
    pub replicates: usize,
}
