use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Optimal rebalancing under proportional costs and price impact.
#[derive(Debug, Parser)]
#[command(name = "rebal", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the free-boundary problem exactly.
    Solve(SolveArgs),
    /// Small-cost expansion of the policy.
    Asymptotic(AsymptoticArgs),
    /// Optimal turnover on a grid or at given weights.
    Policy(PolicyArgs),
    /// Monte Carlo estimate of the equivalent safe rate of the optimal policy.
    Simulate(SimulateArgs),
    /// Solve over a grid of spreads and impacts.
    Sweep(SweepArgs),
    /// Exact versus asymptotic turnover.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct MarketArgs {
    /// JSON file with mu, sigma, gamma, epsilon, lambda; flags override its entries.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Expected excess return per year, as a decimal.
    #[arg(long, allow_negative_numbers = true)]
    pub mu: Option<f64>,
    /// Volatility per square-root year.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Relative risk aversion.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Relative half-spread, as a decimal (0.001 for ten basis points).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Price-impact coefficient.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Write to this file instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub market: MarketArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Evenly spaced weights in the output grid.
    #[arg(long, default_value_t = 201)]
    pub grid_points: usize,
}

#[derive(Debug, Clone, Args)]
pub struct AsymptoticArgs {
    #[command(flatten)]
    pub market: MarketArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, default_value_t = 201)]
    pub grid_points: usize,
    /// Coupling K in lambda = K epsilon^(4/3); defaults to the one implied by the market.
    #[arg(long)]
    pub k: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct PolicyArgs {
    #[command(flatten)]
    pub market: MarketArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, default_value_t = 201)]
    pub grid_points: usize,
    /// Evaluate only at these weights (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub at: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub market: MarketArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    /// Final horizon in years.
    #[arg(long, default_value_t = 5.0)]
    pub horizon: f64,
    /// Burn-in horizon in years.
    #[arg(long, default_value_t = 1.0)]
    pub burn_in: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Initial risky weight; defaults to the frictionless target.
    #[arg(long)]
    pub y0: Option<f64>,
    /// Multiply the optimal turnover by this factor.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Simulate independent paths instead of antithetic pairs.
    #[arg(long)]
    pub no_antithetic: bool,
    /// Also write per-path summaries as CSV to this file.
    #[arg(long)]
    pub paths_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub market: MarketArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, default_value_t = 201)]
    pub grid_points: usize,
    /// Spreads to sweep (comma separated); defaults to --epsilon.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub epsilon_grid: Option<Vec<f64>>,
    /// Impacts to sweep (comma separated); defaults to --lambda.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub lambda_grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub market: MarketArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, default_value_t = 201)]
    pub grid_points: usize,
    #[arg(long)]
    pub k: Option<f64>,
}
