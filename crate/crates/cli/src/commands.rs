use std::fs;

use rebal_core::asymptotics::{asymptotic_policy, find_z_minus, AsymptoticInputs, AsymptoticSolution};
use rebal_core::compare::{compare, ComparisonRow, ComparisonSummary};
use rebal_core::market::{MarketParams, PortfolioRegime};
use rebal_core::par::{map_slice, Execution};
use rebal_core::simulator::{run, SimConfig, SimulationReport};
use rebal_core::solver::{solve, SolutionReport, SolverOptions};
use serde::{Deserialize, Serialize};

use crate::args::{
    AsymptoticArgs, CompareArgs, MarketArgs, OutputArgs, PolicyArgs, SimulateArgs, SolveArgs, SweepArgs,
};
use crate::error::CliError;
use crate::output::{emit, write_csv};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialParams {
    mu: Option<f64>,
    sigma: Option<f64>,
    gamma: Option<f64>,
    epsilon: Option<f64>,
    lambda: Option<f64>,
}

/// Merges the parameter file with the flags and validates the result.
pub fn market(args: &MarketArgs, usage: &str) -> Result<MarketParams, CliError> {
    let file = match &args.params {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| CliError::Io {
                context: format!("cannot read {}", path.display()),
                source,
            })?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?
        }
        None => PartialParams::default(),
    };
    let pick = |flag: Option<f64>, from_file: Option<f64>, name: &str| {
        flag.or(from_file).ok_or_else(|| CliError::Usage {
            message: format!("missing required parameter --{name}"),
            usage: usage.to_string(),
        })
    };
    let params = MarketParams::new(
        pick(args.mu, file.mu, "mu")?,
        pick(args.sigma, file.sigma, "sigma")?,
        pick(args.gamma, file.gamma, "gamma")?,
        pick(args.epsilon, file.epsilon, "epsilon")?,
        pick(args.lambda, file.lambda, "lambda")?,
    );
    Ok(params.validate()?)
}

fn check_points(n: usize) -> Result<usize, CliError> {
    if n < 2 {
        return Err(CliError::Invalid(format!("--grid-points must be at least 2, got {n}")));
    }
    Ok(n)
}

fn unit_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Buy-and-hold answer for markets without an interior optimum.
#[derive(Debug, Clone, Copy, Serialize)]
struct Corner {
    regime: PortfolioRegime,
    esr: f64,
}

/// Prints the corner answer and returns true when the market is degenerate.
fn corner(params: &MarketParams, out: &OutputArgs) -> Result<bool, CliError> {
    let regime = params.regime();
    match regime.corner_esr(params) {
        None => Ok(false),
        Some(esr) => {
            let c = Corner { regime, esr };
            emit(out, &c, &[c])?;
            Ok(true)
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
struct GridRow {
    y: f64,
    q: f64,
    u: f64,
}

pub fn solve_cmd(a: &SolveArgs, usage: &str) -> Result<(), CliError> {
    let params = market(&a.market, usage)?;
    if corner(&params, &a.output)? {
        return Ok(());
    }
    let n = check_points(a.grid_points)?;
    let sol = solve(&params, &SolverOptions::default())?;
    let report = sol.report(Some(n));
    let rows: Vec<GridRow> = report.grid.iter().map(|&[y, q, u]| GridRow { y, q, u }).collect();
    emit(&a.output, &report, &rows)
}

#[derive(Debug, Clone, Copy, Serialize)]
struct TurnoverRow {
    y: f64,
    u: f64,
}

#[derive(Debug, Serialize)]
struct AsymptoticReport<'a> {
    inputs: AsymptoticInputs,
    solution: &'a AsymptoticSolution,
    near_boundary_slope: f64,
    grid: &'a [TurnoverRow],
}

pub fn asymptotic_cmd(a: &AsymptoticArgs, usage: &str) -> Result<(), CliError> {
    let params = market(&a.market, usage)?;
    if corner(&params, &a.output)? {
        return Ok(());
    }
    let n = check_points(a.grid_points)?;
    let inputs = match a.k {
        Some(k) => AsymptoticInputs::with_coupling(params, k)?,
        None => AsymptoticInputs::new(params)?,
    };
    let sol = find_z_minus(&inputs, Execution::Parallel)?;
    let rows = unit_grid(n)
        .into_iter()
        .map(|y| asymptotic_policy(y, &sol, &inputs).map(|u| TurnoverRow { y, u }))
        .collect::<Result<Vec<_>, _>>()?;
    let (slope, _) = rebal_core::asymptotics::near_boundary_slope(&sol, &inputs);
    let report = AsymptoticReport {
        inputs,
        solution: &sol,
        near_boundary_slope: slope,
        grid: &rows,
    };
    emit(&a.output, &report, &rows)
}

#[derive(Debug, Serialize)]
struct PolicyReport<'a> {
    beta: f64,
    y_minus: f64,
    y_plus: f64,
    turnover: &'a [TurnoverRow],
}

pub fn policy_cmd(a: &PolicyArgs, usage: &str) -> Result<(), CliError> {
    let params = market(&a.market, usage)?;
    if corner(&params, &a.output)? {
        return Ok(());
    }
    let ys = if a.at.is_empty() {
        unit_grid(check_points(a.grid_points)?)
    } else {
        if let Some(y) = a.at.iter().find(|y| !(0.0..=1.0).contains(*y)) {
            return Err(CliError::Invalid(format!("--at weights must lie in [0, 1], got {y}")));
        }
        a.at.clone()
    };
    let sol = solve(&params, &SolverOptions::default())?;
    let pol = sol.policy();
    let rows: Vec<TurnoverRow> = ys.into_iter().map(|y| TurnoverRow { y, u: pol.turnover(y) }).collect();
    let report = PolicyReport {
        beta: sol.beta,
        y_minus: sol.y_minus,
        y_plus: sol.y_plus,
        turnover: &rows,
    };
    emit(&a.output, &report, &rows)
}

#[derive(Debug, Serialize)]
struct SimulateReport {
    beta: Option<f64>,
    config: SimConfig,
    report: SimulationReport,
}

#[derive(Debug, Serialize)]
struct PathRow {
    path_id: u64,
    #[serde(rename = "logX_T")]
    log_x: f64,
    #[serde(rename = "time_in_NT")]
    time_in_nt: f64,
    turnover_avg: f64,
}

pub fn simulate_cmd(a: &SimulateArgs, usage: &str) -> Result<(), CliError> {
    let params = market(&a.market, usage)?;
    if !a.scale.is_finite() {
        return Err(CliError::Invalid("--scale must be finite".into()));
    }
    let mut cfg = SimConfig {
        horizon: a.horizon,
        dt: a.dt,
        n_paths: a.paths,
        seed: a.seed,
        burn_in: a.burn_in,
        antithetic: !a.no_antithetic,
        ..SimConfig::for_market(&params)
    };
    if let Some(y0) = a.y0 {
        cfg.y0 = y0;
    }
    cfg.validate()?;
    let (beta, (report, ensemble)) = match params.regime() {
        PortfolioRegime::Interior => {
            let sol = solve(&params, &SolverOptions::default())?;
            let pol = sol.policy();
            let scale = a.scale;
            (Some(sol.beta), run(&params, &|y| scale * pol.turnover(y), &cfg)?)
        }
        _ => (None, run(&params, &|_| 0.0, &cfg)?),
    };
    if let Some(path) = &a.paths_csv {
        let rows: Vec<PathRow> = ensemble
            .paths
            .iter()
            .map(|p| PathRow {
                path_id: p.path_id,
                log_x: p.log_wealth,
                time_in_nt: p.time_in_no_trade,
                turnover_avg: p.turnover_avg,
            })
            .collect();
        write_csv(&rows, Some(path))?;
    }
    let full = SimulateReport {
        beta,
        config: cfg,
        report,
    };
    emit(&a.output, &full, &[report])
}

#[derive(Debug, Clone, Copy, Serialize)]
struct SweepRow {
    epsilon: f64,
    lambda: f64,
    y: f64,
    q: f64,
    u: f64,
}

#[derive(Debug, Serialize)]
struct SweepPoint {
    epsilon: f64,
    lambda: f64,
    solution: SolutionReport,
}

fn sweep_axis(grid: &Option<Vec<f64>>, single: f64, name: &str) -> Result<Vec<f64>, CliError> {
    match grid {
        None => Ok(vec![single]),
        Some(v) if v.is_empty() => Err(CliError::Invalid(format!("--{name}-grid is empty"))),
        Some(v) => Ok(v.clone()),
    }
}

pub fn sweep_cmd(a: &SweepArgs, usage: &str) -> Result<(), CliError> {
    let mut base = a.market.clone();
    // the grids stand in for the scalar flags they replace
    if a.epsilon_grid.is_some() && base.epsilon.is_none() {
        base.epsilon = Some(0.0);
    }
    if a.lambda_grid.is_some() && base.lambda.is_none() {
        base.lambda = Some(0.0);
    }
    let params = market(&base, usage)?;
    let n = check_points(a.grid_points)?;
    let eps = sweep_axis(&a.epsilon_grid, params.epsilon, "epsilon")?;
    let lams = sweep_axis(&a.lambda_grid, params.lambda, "lambda")?;
    let cells: Vec<MarketParams> = eps
        .iter()
        .flat_map(|&e| lams.iter().map(move |&l| params.with_frictions(e, l)))
        .collect();
    for c in &cells {
        c.validate()?;
    }
    if corner(&params, &a.output)? {
        return Ok(());
    }
    let solved = map_slice(Execution::Parallel, &cells, |p| solve(p, &SolverOptions::default()));
    let mut points = Vec::with_capacity(cells.len());
    for (p, s) in cells.iter().zip(solved) {
        points.push(SweepPoint {
            epsilon: p.epsilon,
            lambda: p.lambda,
            solution: s?.report(Some(n)),
        });
    }
    let rows: Vec<SweepRow> = points
        .iter()
        .flat_map(|pt| {
            pt.solution.grid.iter().map(|&[y, q, u]| SweepRow {
                epsilon: pt.epsilon,
                lambda: pt.lambda,
                y,
                q,
                u,
            })
        })
        .collect();
    emit(&a.output, &points, &rows)
}

/// CSV row; the last row carries the rates with `y = "beta"`.
#[derive(Debug, Clone, Serialize)]
struct CompareCsvRow {
    y: String,
    u_exact: f64,
    u_asym: f64,
    abs_err: f64,
    rel_err: f64,
}

#[derive(Debug, Serialize)]
struct CompareReport<'a> {
    summary: ComparisonSummary,
    rows: &'a [ComparisonRow],
}

pub fn compare_cmd(a: &CompareArgs, usage: &str) -> Result<(), CliError> {
    let params = market(&a.market, usage)?;
    if corner(&params, &a.output)? {
        return Ok(());
    }
    let n = check_points(a.grid_points)?;
    let c = compare(&params, a.k, n, &SolverOptions::default())?;
    let mut rows: Vec<CompareCsvRow> = c
        .rows
        .iter()
        .map(|r| CompareCsvRow {
            y: r.y.to_string(),
            u_exact: r.u_exact,
            u_asym: r.u_asym,
            abs_err: r.abs_err,
            rel_err: r.rel_err,
        })
        .collect();
    let s = c.summary;
    let beta_err = (s.beta_exact - s.beta_asym).abs();
    rows.push(CompareCsvRow {
        y: "beta".into(),
        u_exact: s.beta_exact,
        u_asym: s.beta_asym,
        abs_err: beta_err,
        rel_err: beta_err / s.beta_exact.abs(),
    });
    let report = CompareReport {
        summary: s,
        rows: &c.rows,
    };
    emit(&a.output, &report, &rows)
}
