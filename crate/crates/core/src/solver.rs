//! Free-boundary solver: bisection on the equivalent safe rate with shooting
//! from both endpoints, then location of the trading boundaries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hjb::{
    boundary_slope_1, boundary_value_0, boundary_value_1, buy_band, pointwise_optimal_turnover,
    classify, quasi_static_start, sell_band, OdeContext, OdeError, Regime,
};
use crate::integrator::{integrate, Control, IntegrateError, StepControl};
use crate::interp::{CurveError, HermiteCurve};
use crate::market::{MarketParams, ParamError, PortfolioRegime};
use crate::par::{join, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Bisection stops when the bracket is narrower than this fraction of its initial width.
    pub beta_tol_rel: f64,
    /// Absolute tolerance for the boundary locations.
    pub y_tol: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Offset of the shooting starts from `y = 0` and `y = 1`.
    pub delta: f64,
    /// Absolute cap on `|q|` before a trajectory counts as blown up.
    pub q_max: f64,
    /// Relative margin below `1/y` that counts as an upper blow-up.
    pub margin_rel: f64,
    /// Largest step of the final pass; bounds the grid spacing.
    pub grid_h_max: f64,
    pub max_bisections: usize,
    pub execution: Execution,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            beta_tol_rel: 1e-12,
            y_tol: 1e-12,
            rtol: 1e-10,
            atol: 1e-14,
            delta: 1e-6,
            q_max: 10.0,
            margin_rel: 1e-9,
            grid_h_max: 1e-4,
            max_bisections: 200,
            execution: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlowUpKind {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowUpEvent {
    pub kind: BlowUpKind,
    pub y: f64,
    pub q: f64,
}

/// Accepted integration points in integration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub ys: Vec<f64>,
    pub qs: Vec<f64>,
    pub accepted: usize,
    pub rejected: usize,
    pub max_error_ratio: f64,
}

impl Trajectory {
    pub fn last(&self) -> Option<(f64, f64)> {
        Some((*self.ys.last()?, *self.qs.last()?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LegOutcome {
    Reached(Trajectory),
    BlewUp(BlowUpEvent, Trajectory),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("no interior optimum: {0:?} regime")]
    NotInterior(PortfolioRegime),
    #[error("the exact solver requires positive price impact")]
    ZeroImpact,
    #[error(transparent)]
    Boundary(#[from] OdeError),
    #[error("no sign change of the matching function over the admissible rate bracket (lower end {lower}, upper end {upper}); frictions too large")]
    NoMatch { lower: i8, upper: i8 },
    #[error("integration failed at y = {y} (step {h:e}): {detail}")]
    Integration { y: f64, h: f64, detail: String },
    #[error("trajectories at the matched rate did not reach the matching point")]
    UnmatchedFinalPass,
    #[error("q does not cross the {0} band")]
    NoCrossing(&'static str),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error("solution violates an invariant: {0}")]
    Invariant(String),
}

impl SolveError {
    /// True for failures of the numerical machinery, as opposed to input or
    /// no-match conditions.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SolveError::Integration { .. }
                | SolveError::UnmatchedFinalPass
                | SolveError::NoCrossing(_)
                | SolveError::Curve(_)
                | SolveError::Invariant(_)
        )
    }
}

impl From<IntegrateError<OdeError>> for SolveError {
    fn from(e: IntegrateError<OdeError>) -> Self {
        match e {
            IntegrateError::StepUnderflow {
                t, h, last_error, ..
            } => SolveError::Integration {
                y: t,
                h,
                detail: match last_error {
                    Some(err) => err.to_string(),
                    None => "error control".into(),
                },
            },
            IntegrateError::NonFiniteStart => SolveError::Integration {
                y: f64::NAN,
                h: 0.0,
                detail: "non-finite start".into(),
            },
        }
    }
}

fn guard(opts: &SolverOptions, y: f64, q: f64) -> Option<BlowUpKind> {
    let upper = (1.0 / y * (1.0 - opts.margin_rel)).min(opts.q_max);
    if q >= upper {
        Some(BlowUpKind::Upper)
    } else if q <= -opts.q_max {
        Some(BlowUpKind::Lower)
    } else {
        None
    }
}

/// Reads a step-size stall as a blow-up when the slope at the stall point
/// drives `q` out of a trading region along the direction of integration.
fn stall_direction(
    ctx: &OdeContext,
    y: f64,
    q: f64,
    dir: f64,
    last_error: Option<OdeError>,
) -> Option<BlowUpKind> {
    if let Some(OdeError::Domain { .. }) = last_error {
        return Some(BlowUpKind::Upper);
    }
    let rate = ctx.slope(y, q).ok()? * dir;
    match classify(y, q, ctx.params.epsilon) {
        Regime::Buy if rate > 0.0 => Some(BlowUpKind::Upper),
        Regime::Sell if rate < 0.0 => Some(BlowUpKind::Lower),
        _ => None,
    }
}

fn run_leg(
    ctx: &OdeContext,
    y0: f64,
    q0: f64,
    y_stop: f64,
    h_max: f64,
    opts: &SolverOptions,
) -> Result<LegOutcome, SolveError> {
    let ctrl = StepControl {
        rtol: opts.rtol,
        atol: opts.atol,
        h_init: (opts.delta * 1e-2).max(1e-12),
        h_min: 1e-16,
        h_max,
    };
    let mut traj = Trajectory::default();
    let mut blow = None;
    let res = integrate(ctx, y0, q0, y_stop, &ctrl, |y, q| {
        traj.ys.push(y);
        traj.qs.push(q);
        match guard(opts, y, q) {
            Some(kind) => {
                blow = Some(BlowUpEvent { kind, y, q });
                Control::Stop
            }
            None => Control::Continue,
        }
    });
    let fin = match res {
        Ok(fin) => fin,
        Err(IntegrateError::StepUnderflow {
            t, x, last_error, ..
        }) => match stall_direction(ctx, t, x, y_stop - y0, last_error) {
            Some(kind) => {
                let ev = BlowUpEvent { kind, y: t, q: x };
                return Ok(LegOutcome::BlewUp(ev, traj));
            }
            None => return Err(IntegrateError::StepUnderflow {
                t,
                x,
                h: 0.0,
                last_error,
            }
            .into()),
        },
        Err(e) => return Err(e.into()),
    };
    traj.accepted = fin.accepted;
    traj.rejected = fin.rejected;
    traj.max_error_ratio = fin.max_error_ratio;
    Ok(match blow {
        Some(ev) => LegOutcome::BlewUp(ev, traj),
        None => LegOutcome::Reached(traj),
    })
}

/// Boundary value and slope at `y = 0`, and the start value at `y = delta`
/// (`None` when every solution leaves the buy region downwards).
fn forward_start(
    params: &MarketParams,
    beta: f64,
    delta: f64,
) -> Result<(f64, f64, Option<f64>), SolveError> {
    let (q0, dq0) = boundary_value_0(params, beta)?;
    let start = quasi_static_start(&OdeContext::new(*params, beta), delta, Regime::Buy)?;
    Ok((q0, dq0, start))
}

/// Boundary value and slope at `y = 1`, and the start value at `y = 1 - delta`
/// (`None` when every solution leaves the sell region upwards).
fn backward_start(
    params: &MarketParams,
    beta: f64,
    delta: f64,
) -> Result<(f64, Option<f64>, Option<f64>), SolveError> {
    let q1 = boundary_value_1(params, beta)?;
    let h1 = boundary_slope_1(params, q1);
    let start = quasi_static_start(&OdeContext::new(*params, beta), 1.0 - delta, Regime::Sell)?;
    Ok((q1, h1, start))
}

fn escape(kind: BlowUpKind, y: f64, q: f64) -> LegOutcome {
    LegOutcome::BlewUp(
        BlowUpEvent { kind, y, q },
        Trajectory {
            ys: vec![y],
            qs: vec![q],
            ..Trajectory::default()
        },
    )
}

/// Integrates from `y = delta` towards `y_stop`.
pub fn shoot_forward(
    params: &MarketParams,
    beta: f64,
    y_stop: f64,
    opts: &SolverOptions,
) -> Result<LegOutcome, SolveError> {
    shoot_forward_with(params, beta, y_stop, opts, 0.05)
}

/// Integrates from `y = 1 - delta` towards `y_stop`.
pub fn shoot_backward(
    params: &MarketParams,
    beta: f64,
    y_stop: f64,
    opts: &SolverOptions,
) -> Result<LegOutcome, SolveError> {
    shoot_backward_with(params, beta, y_stop, opts, 0.05)
}

fn shoot_forward_with(
    params: &MarketParams,
    beta: f64,
    y_stop: f64,
    opts: &SolverOptions,
    h_max: f64,
) -> Result<LegOutcome, SolveError> {
    let (q0, _, start) = forward_start(params, beta, opts.delta)?;
    match start {
        Some(start) => run_leg(&OdeContext::new(*params, beta), opts.delta, start, y_stop, h_max, opts),
        None => Ok(escape(BlowUpKind::Lower, opts.delta, q0)),
    }
}

fn shoot_backward_with(
    params: &MarketParams,
    beta: f64,
    y_stop: f64,
    opts: &SolverOptions,
    h_max: f64,
) -> Result<LegOutcome, SolveError> {
    let (q1, _, start) = backward_start(params, beta, opts.delta)?;
    let y0 = 1.0 - opts.delta;
    match start {
        Some(start) => run_leg(&OdeContext::new(*params, beta), y0, start, y_stop, h_max, opts),
        None => Ok(escape(BlowUpKind::Upper, y0, q1)),
    }
}

/// Sign of `q_forward - q_backward` at the matching point, with blow-ups
/// mapped to the side they escaped to.
fn matching_sign(fwd: &LegOutcome, bwd: &LegOutcome) -> (i8, f64) {
    match (fwd, bwd) {
        (LegOutcome::BlewUp(ev, _), _) => match ev.kind {
            BlowUpKind::Upper => (1, f64::INFINITY),
            BlowUpKind::Lower => (-1, f64::INFINITY),
        },
        (_, LegOutcome::BlewUp(ev, _)) => match ev.kind {
            BlowUpKind::Upper => (-1, f64::INFINITY),
            BlowUpKind::Lower => (1, f64::INFINITY),
        },
        (LegOutcome::Reached(f), LegOutcome::Reached(b)) => {
            let diff = f.last().map_or(f64::NAN, |v| v.1) - b.last().map_or(f64::NAN, |v| v.1);
            let s = if diff > 0.0 {
                1
            } else if diff < 0.0 {
                -1
            } else {
                0
            };
            (s, diff.abs())
        }
    }
}

struct Evaluation {
    sign: i8,
    residual: f64,
}

fn evaluate(params: &MarketParams, beta: f64, y_mid: f64, opts: &SolverOptions) -> Result<Evaluation, SolveError> {
    let (fwd, bwd) = join(
        opts.execution,
        || shoot_forward(params, beta, y_mid, opts),
        || shoot_backward(params, beta, y_mid, opts),
    );
    let (sign, residual) = matching_sign(&fwd?, &bwd?);
    Ok(Evaluation { sign, residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub bisection_iterations: usize,
    /// `|q_forward - q_backward|` at the matching point in the final pass.
    pub matching_residual: f64,
    /// Width of the final rate bracket.
    pub beta_bracket_width: f64,
    /// Matching sign at the lower and upper end of the initial bracket.
    pub bracket_signs: (i8, i8),
    /// Largest accepted local error relative to the tolerance.
    pub integrator_error_ratio: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rtol: f64,
}

/// Equivalent safe rate, trading boundaries and the sampled marginal value.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeBoundarySolution {
    pub params: MarketParams,
    pub beta: f64,
    pub y_minus: f64,
    pub y_plus: f64,
    pub curve: HermiteCurve,
    pub diagnostics: SolverDiagnostics,
}

impl FreeBoundarySolution {
    /// Interpolated `q(y)` for `y` in `[0, 1]`.
    pub fn q(&self, y: f64) -> f64 {
        self.curve.eval(y.clamp(0.0, 1.0))
    }

    pub fn policy(&self) -> TradingPolicy<'_> {
        TradingPolicy { solution: self }
    }

    /// Checks the structural properties every solution must have.
    pub fn verify(&self, matching_tol: f64) -> Result<(), String> {
        let (lo, hi) = self.params.esr_bracket();
        if !(self.beta >= lo && self.beta <= hi) {
            return Err(format!("beta {} outside [{lo}, {hi}]", self.beta));
        }
        if !(0.0 <= self.y_minus && self.y_minus <= self.y_plus && self.y_plus <= 1.0) {
            return Err(format!(
                "boundaries out of order: {} {}",
                self.y_minus, self.y_plus
            ));
        }
        let eps = self.params.epsilon;
        let dm = (self.q(self.y_minus) - buy_band(self.y_minus, eps)).abs();
        let dp = (self.q(self.y_plus) - sell_band(self.y_plus, eps)).abs();
        if dm > matching_tol || dp > matching_tol {
            return Err(format!("value matching off by {dm:e} / {dp:e}"));
        }
        for (&y, &q) in self.curve.nodes().iter().zip(self.curve.values()) {
            if q * y >= 1.0 {
                return Err(format!("q y >= 1 at y = {y}"));
            }
            let ok = if y < self.y_minus {
                q > buy_band(y, eps) - matching_tol
            } else if y > self.y_plus {
                q < sell_band(y, eps) + matching_tol
            } else {
                q <= buy_band(y, eps) + matching_tol && q >= sell_band(y, eps) - matching_tol
            };
            if !ok {
                return Err(format!("region structure broken at y = {y}, q = {q}"));
            }
        }
        Ok(())
    }

    /// Rows `[y, q, u]`: the solver nodes, or `n` evenly spaced points.
    pub fn grid(&self, n: Option<usize>) -> Vec<[f64; 3]> {
        let policy = self.policy();
        let ys: Vec<f64> = match n {
            Some(n) if n >= 2 => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
            Some(_) => vec![0.0, 1.0],
            None => self.curve.nodes().to_vec(),
        };
        ys.into_iter()
            .map(|y| [y, self.q(y), policy.turnover(y)])
            .collect()
    }

    pub fn report(&self, n: Option<usize>) -> SolutionReport {
        SolutionReport {
            beta: self.beta,
            y_minus: self.y_minus,
            y_plus: self.y_plus,
            grid: self.grid(n),
            params: self.params,
            diagnostics: self.diagnostics,
        }
    }
}

/// Serializable view of a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionReport {
    pub beta: f64,
    pub y_minus: f64,
    pub y_plus: f64,
    pub grid: Vec<[f64; 3]>,
    pub params: MarketParams,
    pub diagnostics: SolverDiagnostics,
}

/// Optimal wealth turnover as a function of the risky weight.
#[derive(Debug, Clone, Copy)]
pub struct TradingPolicy<'a> {
    pub solution: &'a FreeBoundarySolution,
}

impl TradingPolicy<'_> {
    pub fn turnover(&self, y: f64) -> f64 {
        let s = self.solution;
        let y = y.clamp(0.0, 1.0);
        if y >= s.y_minus && y <= s.y_plus {
            return 0.0;
        }
        let q = s.q(y);
        let u = pointwise_optimal_turnover(y, q, &s.params).unwrap_or(0.0);
        // the interpolant crosses each band exactly at the boundaries
        if y < s.y_minus {
            u.max(0.0)
        } else {
            u.min(0.0)
        }
    }
}

fn boundaries(
    curve: HermiteCurve,
    params: MarketParams,
    opts: &SolverOptions,
) -> Result<(HermiteCurve, f64, f64), SolveError> {
    let eps = params.epsilon;
    let y_minus = curve
        .first_crossing(|y| buy_band(y, eps), opts.y_tol)
        .ok_or(SolveError::NoCrossing("buy"))?;
    let y_plus = curve
        .last_crossing(|y| sell_band(y, eps), opts.y_tol)
        .ok_or(SolveError::NoCrossing("sell"))?;
    Ok((curve, y_minus, y_plus))
}

/// Adds a node at `y` by integrating from the node to its left.
fn insert_node(
    ctx: &OdeContext,
    ys: &mut Vec<f64>,
    qs: &mut Vec<f64>,
    ds: &mut Vec<f64>,
    y: f64,
    opts: &SolverOptions,
) -> Result<(), SolveError> {
    let i = ys.partition_point(|&v| v < y);
    if i == 0 || i == ys.len() || ys[i] == y || ys[i - 1] < opts.delta {
        return Ok(());
    }
    let ctrl = StepControl {
        rtol: opts.rtol,
        atol: opts.atol,
        h_init: ((y - ys[i - 1]) * 1e-2).max(1e-12),
        h_min: 1e-16,
        h_max: opts.grid_h_max,
    };
    let q = integrate(ctx, ys[i - 1], qs[i - 1], y, &ctrl, |_, _| Control::Continue)?.x;
    ys.insert(i, y);
    qs.insert(i, q);
    ds.insert(i, ctx.slope(y, q)?);
    Ok(())
}

/// Solves the free-boundary problem for the given market.
pub fn solve(params: &MarketParams, opts: &SolverOptions) -> Result<FreeBoundarySolution, SolveError> {
    let params = params.validate()?;
    match params.regime() {
        PortfolioRegime::Interior => {}
        other => return Err(SolveError::NotInterior(other)),
    }
    if params.lambda <= 0.0 {
        return Err(SolveError::ZeroImpact);
    }
    let y_mid = params.merton_weight();
    let (lo0, hi0) = params.esr_bracket();
    let width = hi0 - lo0;
    let tiny = (width * 1e-9).max(1e-15);
    let mut lo = lo0 + tiny;
    let mut hi = hi0;

    let e_lo = evaluate(&params, lo, y_mid, opts)?;
    let e_hi = evaluate(&params, hi, y_mid, opts)?;
    let bracket_signs = (e_lo.sign, e_hi.sign);
    let mut best: Option<(f64, f64)> = None;
    let mut consider = |beta: f64, e: &Evaluation| {
        if e.residual.is_finite() && best.is_none_or(|(_, r)| e.residual < r) {
            best = Some((beta, e.residual));
        }
    };
    consider(lo, &e_lo);
    consider(hi, &e_hi);
    let mut iterations = 0;
    if e_lo.sign == 0 {
        hi = lo;
    } else if e_hi.sign == 0 {
        lo = hi;
    } else if e_lo.sign == e_hi.sign {
        return Err(SolveError::NoMatch {
            lower: e_lo.sign,
            upper: e_hi.sign,
        });
    }
    let s_lo = e_lo.sign;
    while hi - lo > opts.beta_tol_rel * width && iterations < opts.max_bisections {
        let mid = 0.5 * (lo + hi);
        let e = evaluate(&params, mid, y_mid, opts)?;
        iterations += 1;
        consider(mid, &e);
        if e.sign == 0 {
            lo = mid;
            hi = mid;
        } else if e.sign == s_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    let beta = match best {
        Some((b, _)) if (b - mid).abs() <= (hi - lo).max(opts.beta_tol_rel * width) => b,
        _ => mid,
    };

    let (fwd, bwd) = join(
        opts.execution,
        || shoot_forward_with(&params, beta, y_mid, opts, opts.grid_h_max),
        || shoot_backward_with(&params, beta, y_mid, opts, opts.grid_h_max),
    );
    let (fwd, bwd) = match (fwd?, bwd?) {
        (LegOutcome::Reached(f), LegOutcome::Reached(b)) => (f, b),
        _ => return Err(SolveError::UnmatchedFinalPass),
    };
    let matching_residual = (fwd.qs[fwd.qs.len() - 1] - bwd.qs[bwd.qs.len() - 1]).abs();

    let ctx = OdeContext::new(params, beta);
    let (q0, dq0, _) = forward_start(&params, beta, opts.delta)?;
    let (q1, h1, _) = backward_start(&params, beta, opts.delta)?;
    let mut ys = vec![0.0];
    let mut qs = vec![q0];
    let mut ds = vec![dq0];
    for (&y, &q) in fwd.ys.iter().zip(&fwd.qs) {
        ys.push(y);
        qs.push(q);
        ds.push(ctx.slope(y, q)?);
    }
    for (&y, &q) in bwd.ys.iter().zip(&bwd.qs).rev().skip(1) {
        ys.push(y);
        qs.push(q);
        ds.push(ctx.slope(y, q)?);
    }
    ys.push(1.0);
    qs.push(q1);
    let (y_last, q_last) = (ys[ys.len() - 1], qs[qs.len() - 1]);
    ds.push(h1.unwrap_or((q1 - q_last) / (1.0 - y_last)));
    let (_, rough_minus, rough_plus) = boundaries(HermiteCurve::new(ys.clone(), qs.clone(), ds.clone())?, params, opts)?;
    // q'' jumps at the boundaries, so they become nodes
    for y in [rough_minus, rough_plus] {
        insert_node(&ctx, &mut ys, &mut qs, &mut ds, y, opts)?;
    }
    let (curve, y_minus, y_plus) = boundaries(HermiteCurve::new(ys, qs, ds)?, params, opts)?;

    let sol = FreeBoundarySolution {
        params,
        beta,
        y_minus,
        y_plus,
        curve,
        diagnostics: SolverDiagnostics {
            bisection_iterations: iterations,
            matching_residual,
            beta_bracket_width: hi - lo,
            bracket_signs,
            integrator_error_ratio: fwd.max_error_ratio.max(bwd.max_error_ratio),
            accepted_steps: fwd.accepted + bwd.accepted,
            rejected_steps: fwd.rejected + bwd.rejected,
            rtol: opts.rtol,
        },
    };
    sol.verify(1e-8).map_err(SolveError::Invariant)?;
    Ok(sol)
}
