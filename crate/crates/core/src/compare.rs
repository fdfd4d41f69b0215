//! Exact versus asymptotic turnover on a window around the target weight.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asymptotics::{asymptotic_policy, find_z_minus, AsymptoticError, AsymptoticInputs, AsymptoticSolution};
use crate::market::MarketParams;
use crate::par::map_slice;
use crate::solver::{solve, FreeBoundarySolution, SolveError, SolverOptions};

/// Half-width of the window in units of `eps^{1/3}`.
pub const WINDOW_HALF_WIDTH: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompareError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Asymptotic(#[from] AsymptoticError),
    #[error("need at least two grid points")]
    TooFewPoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub y: f64,
    pub u_exact: f64,
    pub u_asym: f64,
    pub abs_err: f64,
    /// Absolute error over the largest exact turnover in the window.
    pub rel_err: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub beta_exact: f64,
    pub beta_asym: f64,
    pub y_minus_exact: f64,
    pub y_minus_asym: f64,
    pub y_plus_exact: f64,
    pub y_plus_asym: f64,
    pub max_rel_err: f64,
    /// Largest turnover in the window, the scale of `rel_err`.
    pub turnover_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub exact: FreeBoundarySolution,
    pub asymptotic: AsymptoticSolution,
    pub rows: Vec<ComparisonRow>,
    pub summary: ComparisonSummary,
}

/// `[y* - 3 eps^{1/3}, y* + 3 eps^{1/3}]` clipped to `[0, 1]`.
pub fn window(params: &MarketParams) -> (f64, f64) {
    let y = params.merton_weight();
    let half = WINDOW_HALF_WIDTH * params.epsilon.cbrt();
    ((y - half).max(0.0), (y + half).min(1.0))
}

/// Solves both problems and tabulates the turnover on `points` window nodes.
pub fn compare(
    params: &MarketParams,
    coupling: Option<f64>,
    points: usize,
    opts: &SolverOptions,
) -> Result<Comparison, CompareError> {
    if points < 2 {
        return Err(CompareError::TooFewPoints);
    }
    let exact = solve(params, opts)?;
    let inputs = match coupling {
        Some(k) => AsymptoticInputs::with_coupling(*params, k)?,
        None => AsymptoticInputs::new(*params)?,
    };
    let asymptotic = find_z_minus(&inputs, opts.execution)?;
    let (lo, hi) = window(params);
    let ys: Vec<f64> = (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect();
    let policy = exact.policy();
    let pairs = map_slice(opts.execution, &ys, |&y| {
        asymptotic_policy(y, &asymptotic, &inputs).map(|ua| (policy.turnover(y), ua))
    });
    let pairs = pairs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let scale = pairs.iter().map(|(ue, _)| ue.abs()).fold(0.0, f64::max);
    let rows: Vec<ComparisonRow> = ys
        .iter()
        .zip(&pairs)
        .map(|(&y, &(u_exact, u_asym))| {
            let abs_err = (u_exact - u_asym).abs();
            ComparisonRow {
                y,
                u_exact,
                u_asym,
                abs_err,
                rel_err: if scale > 0.0 { abs_err / scale } else { abs_err },
            }
        })
        .collect();
    let summary = ComparisonSummary {
        beta_exact: exact.beta,
        beta_asym: asymptotic.beta_approx,
        y_minus_exact: exact.y_minus,
        y_minus_asym: asymptotic.y_minus_approx,
        y_plus_exact: exact.y_plus,
        y_plus_asym: asymptotic.y_plus_approx,
        max_rel_err: rows.iter().map(|r| r.rel_err).fold(0.0, f64::max),
        turnover_scale: scale,
    };
    Ok(Comparison {
        exact,
        asymptotic,
        rows,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_is_clipped() {
        let p = MarketParams::new(0.08, 0.16, 5.0, 0.05, 0.05);
        assert_eq!(window(&p), (0.0, 1.0));
        let (lo, hi) = window(&p.with_frictions(1e-6, 1e-8));
        assert!((hi - lo - 0.06).abs() < 1e-12);
    }

    #[test]
    fn rejects_single_point() {
        let p = MarketParams::new(0.08, 0.16, 5.0, 1e-3, 1e-4);
        assert_eq!(compare(&p, None, 1, &SolverOptions::default()).unwrap_err(), CompareError::TooFewPoints);
    }

    #[test]
    fn rows_are_consistent() {
        let p = MarketParams::new(0.08, 0.16, 5.0, 1e-3, 1e-4);
        let c = compare(&p, None, 41, &SolverOptions::default()).unwrap();
        assert_eq!(c.rows.len(), 41);
        for r in &c.rows {
            assert!((r.abs_err - (r.u_exact - r.u_asym).abs()).abs() == 0.0);
            assert!(r.rel_err <= c.summary.max_rel_err);
        }
        assert!(c.summary.turnover_scale > 0.0);
    }
}
