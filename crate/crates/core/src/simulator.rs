//! Monte Carlo estimation of the equivalent safe rate of a turnover policy.
//!
//! Paths follow a log-wealth Euler scheme driven by the same Brownian
//! increment as the risky weight. Each path draws from its own ChaCha stream,
//! so results are reproducible for a given seed regardless of thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::MarketParams;
use crate::par::{map_range, pairwise_sum, Execution};

/// Bootstrap resample `b` draws from stream `BOOTSTRAP_STREAM - b`, far above the path streams.
const BOOTSTRAP_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("policy returned a non-finite turnover at y = {y}")]
    PolicyNotFinite { y: f64 },
    #[error("degenerate ensemble: {0}")]
    Degenerate(String),
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Final horizon in years.
    pub horizon: f64,
    /// Euler step in years.
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Initial risky weight.
    pub y0: f64,
    /// Earlier horizon differenced out by the estimator.
    pub burn_in: f64,
    /// Pair path `2j` with the mirrored increments of path `2j + 1`.
    pub antithetic: bool,
    /// Normal draws summed into each increment, so a run at `n dt` with `n`
    /// substeps follows the same Brownian path as a run at `dt` with one.
    #[serde(default = "one")]
    pub brownian_substeps: u32,
    pub bootstrap_resamples: usize,
    pub execution: Execution,
}

impl SimConfig {
    /// Default settings started at weight `y0`.
    pub fn starting_at(y0: f64) -> Self {
        Self {
            horizon: 5.0,
            dt: 1e-3,
            n_paths: 100_000,
            seed: 0,
            y0,
            burn_in: 1.0,
            antithetic: true,
            brownian_substeps: 1,
            bootstrap_resamples: 200,
            execution: Execution::Parallel,
        }
    }

    /// Default settings started at the frictionless target weight.
    pub fn for_market(params: &MarketParams) -> Self {
        Self::starting_at(params.merton_weight().clamp(0.0, 1.0))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.burn_in > 0.0 && self.horizon > self.burn_in && self.horizon.is_finite()) {
            return bad("need horizon > burn_in > 0");
        }
        if self.n_paths < 2 {
            return bad("need at least two paths");
        }
        if !(self.y0 >= 0.0 && self.y0 <= 1.0) {
            return bad("y0 must lie in [0, 1]");
        }
        if self.brownian_substeps == 0 {
            return bad("brownian_substeps must be at least one");
        }
        if self.bootstrap_resamples < 2 {
            return bad("need at least two bootstrap resamples");
        }
        if self.steps(self.burn_in) == 0 || self.steps(self.burn_in) >= self.steps(self.horizon) {
            return bad("dt too coarse for the horizons");
        }
        Ok(())
    }

    fn steps(&self, t: f64) -> usize {
        (t / self.dt).round() as usize
    }
}

/// Per-path summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub path_id: u64,
    /// Log wealth at the burn-in horizon.
    pub log_wealth_burn_in: f64,
    /// Log wealth at the final horizon.
    pub log_wealth: f64,
    /// Fraction of steps with zero turnover.
    pub time_in_no_trade: f64,
    /// Time average of `|u|`.
    pub turnover_avg: f64,
    /// Steps where the weight left `[0, 1]` before clamping.
    pub violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub paths: Vec<PathSummary>,
    /// Burn-in and final time actually reached on the step grid.
    pub burn_in_time: f64,
    pub horizon_time: f64,
    pub steps_per_path: usize,
    pub antithetic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub esr_estimate: f64,
    pub esr_stderr: f64,
    pub mean_turnover: f64,
    pub fraction_time_in_nt: f64,
    pub y_range_violations: u64,
    pub total_steps: u64,
    pub n_paths: usize,
}

struct PathState {
    log_wealth: f64,
    y: f64,
    log_wealth_burn_in: f64,
    no_trade_steps: u64,
    turnover_sum: f64,
    violations: u64,
}

impl PathState {
    fn new(y0: f64) -> Self {
        Self {
            log_wealth: 0.0,
            y: y0,
            log_wealth_burn_in: 0.0,
            no_trade_steps: 0,
            turnover_sum: 0.0,
            violations: 0,
        }
    }

    fn step<P: Fn(f64) -> f64>(&mut self, p: &MarketParams, policy: &P, dt: f64, dw: f64) -> Result<(), SimError> {
        let y = self.y;
        let u = policy(y);
        if !u.is_finite() {
            return Err(SimError::PolicyNotFinite { y });
        }
        let cost = p.epsilon * u.abs() + p.lambda * u * u;
        let s2 = p.variance();
        self.log_wealth += (y * p.mu - 0.5 * y * y * s2 - cost) * dt + y * p.sigma * dw;
        let drift = y * (1.0 - y) * (p.mu - y * s2) + u + p.epsilon * u.abs() * y + p.lambda * y * u * u;
        let next = y + drift * dt + y * (1.0 - y) * p.sigma * dw;
        if !(0.0..=1.0).contains(&next) {
            self.violations += 1;
        }
        self.y = next.clamp(0.0, 1.0);
        if u == 0.0 {
            self.no_trade_steps += 1;
        }
        self.turnover_sum += u.abs();
        Ok(())
    }

    fn summary(&self, path_id: u64, steps: usize) -> PathSummary {
        PathSummary {
            path_id,
            log_wealth_burn_in: self.log_wealth_burn_in,
            log_wealth: self.log_wealth,
            time_in_no_trade: self.no_trade_steps as f64 / steps as f64,
            turnover_avg: self.turnover_sum / steps as f64,
            violations: self.violations,
        }
    }
}

/// Simulates `cfg.n_paths` controlled paths under `policy: y -> u`.
pub fn simulate_paths<P>(params: &MarketParams, policy: &P, cfg: &SimConfig) -> Result<PathEnsemble, SimError>
where
    P: Fn(f64) -> f64 + Sync,
{
    cfg.validate()?;
    let steps = cfg.steps(cfg.horizon);
    let burn = cfg.steps(cfg.burn_in);
    let width = if cfg.antithetic { 2 } else { 1 };
    let units = cfg.n_paths.div_ceil(width);
    let sub = cfg.brownian_substeps;
    let sqrt_sub_dt = (cfg.dt / sub as f64).sqrt();

    let blocks = map_range(cfg.execution, units, |unit| -> Result<Vec<PathSummary>, SimError> {
        let first = unit * width;
        let count = width.min(cfg.n_paths - first);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(unit as u64);
        let mut states: Vec<PathState> = (0..count).map(|_| PathState::new(cfg.y0)).collect();
        for n in 0..steps {
            let z: f64 = (0..sub).map(|_| rng.sample::<f64, _>(StandardNormal)).sum();
            let dw = z * sqrt_sub_dt;
            for (j, s) in states.iter_mut().enumerate() {
                s.step(params, policy, cfg.dt, if j == 0 { dw } else { -dw })?;
                if n + 1 == burn {
                    s.log_wealth_burn_in = s.log_wealth;
                }
            }
        }
        Ok(states
            .iter()
            .enumerate()
            .map(|(j, s)| s.summary((first + j) as u64, steps))
            .collect())
    });

    let mut paths = Vec::with_capacity(cfg.n_paths);
    for block in blocks {
        paths.extend(block?);
    }
    Ok(PathEnsemble {
        paths,
        burn_in_time: burn as f64 * cfg.dt,
        horizon_time: steps as f64 * cfg.dt,
        steps_per_path: steps,
        antithetic: cfg.antithetic,
    })
}

/// `log(mean(exp(v)))` with a max shift.
fn log_mean_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let shifted: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    max + (pairwise_sum(&shifted) / values.len() as f64).ln()
}

/// Certainty-equivalent growth `L(t) / t` differenced between the two horizons.
fn two_horizon<'a, I>(paths: I, gamma: f64, t1: f64, t: f64) -> f64
where
    I: Iterator<Item = &'a PathSummary> + Clone,
{
    let e = 1.0 - gamma;
    let early: Vec<f64> = paths.clone().map(|p| e * p.log_wealth_burn_in).collect();
    let late: Vec<f64> = paths.map(|p| e * p.log_wealth).collect();
    (log_mean_exp(&late) - log_mean_exp(&early)) / e / (t - t1)
}

/// Two-horizon equivalent-safe-rate estimate with a path-level bootstrap.
pub fn estimate_esr(ensemble: &PathEnsemble, gamma: f64, cfg: &SimConfig) -> Result<SimulationReport, SimError> {
    let paths = &ensemble.paths;
    if paths.len() < 2 {
        return Err(SimError::Degenerate("fewer than two paths".into()));
    }
    if !(gamma > 0.0 && gamma != 1.0) {
        return Err(SimError::InvalidConfig(format!("gamma must be positive and not one, got {gamma}")));
    }
    if let Some(p) = paths.iter().find(|p| !(p.log_wealth.is_finite() && p.log_wealth_burn_in.is_finite())) {
        return Err(SimError::Degenerate(format!("non-finite log wealth on path {}", p.path_id)));
    }
    let (t1, t) = (ensemble.burn_in_time, ensemble.horizon_time);
    let estimate = two_horizon(paths.iter(), gamma, t1, t);
    if !estimate.is_finite() {
        return Err(SimError::Degenerate("estimate is not finite".into()));
    }

    // resample antithetic pairs as units so the pairing survives
    let width = if ensemble.antithetic { 2 } else { 1 };
    let units: Vec<&[PathSummary]> = paths.chunks(width).collect();
    let draws = map_range(cfg.execution, cfg.bootstrap_resamples, |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(BOOTSTRAP_STREAM - b as u64);
        let picked: Vec<&PathSummary> = (0..units.len())
            .flat_map(|_| units[rng.random_range(0..units.len())].iter())
            .collect();
        two_horizon(picked.iter().copied(), gamma, t1, t)
    });
    let mean = pairwise_sum(&draws) / draws.len() as f64;
    let sq: Vec<f64> = draws.iter().map(|d| (d - mean) * (d - mean)).collect();
    let stderr = (pairwise_sum(&sq) / (draws.len() - 1) as f64).sqrt();

    let n = paths.len() as f64;
    let turnover: Vec<f64> = paths.iter().map(|p| p.turnover_avg).collect();
    let idle: Vec<f64> = paths.iter().map(|p| p.time_in_no_trade).collect();
    Ok(SimulationReport {
        esr_estimate: estimate,
        esr_stderr: stderr,
        mean_turnover: pairwise_sum(&turnover) / n,
        fraction_time_in_nt: pairwise_sum(&idle) / n,
        y_range_violations: paths.iter().map(|p| p.violations).sum(),
        total_steps: (paths.len() * ensemble.steps_per_path) as u64,
        n_paths: paths.len(),
    })
}

/// Simulates and estimates in one call.
pub fn run<P>(params: &MarketParams, policy: &P, cfg: &SimConfig) -> Result<(SimulationReport, PathEnsemble), SimError>
where
    P: Fn(f64) -> f64 + Sync,
{
    let ensemble = simulate_paths(params, policy, cfg)?;
    let report = estimate_esr(&ensemble, params.gamma, cfg)?;
    Ok((report, ensemble))
}
