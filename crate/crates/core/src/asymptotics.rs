//! Small-cost expansion of the optimal policy.
//!
//! With `lambda = K eps^{4/3}` and the rescaled weight `z = (y - y*) eps^{-1/3}`,
//! the marginal value on the buy side solves a Riccati equation whose
//! admissible solution is a ratio of Whittaker functions. The buy boundary is
//! the most negative root `z_minus` of `r_B(z, l(z)) = 1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrator::{integrate, Control, ScalarOde, StepControl};
use crate::market::{MarketParams, PortfolioRegime};
use crate::par::{map_range, Execution};
use crate::special::{whittaker_w_ratio, WhittakerMethod};

/// Second Whittaker index of the buy-side solution.
pub const WHITTAKER_M: f64 = -0.25;

/// Points in the scan for `z_minus`.
pub const SCAN_POINTS: usize = 20_000;

/// A sign change whose refined residual exceeds this is a pole, not a root.
const ROOT_RESIDUAL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AsymptoticError {
    #[error("the expansion needs a positive spread, got {0}")]
    SpreadNotPositive(f64),
    #[error("coupling K must be positive and finite, got {0}")]
    CouplingNotPositive(f64),
    #[error("no interior optimum: {0:?} regime")]
    NotInterior(PortfolioRegime),
    #[error("r_B evaluation failed at z = {z}: {detail}")]
    Evaluation { z: f64, detail: String },
    #[error("no root of r_B(z, l(z)) = 1 on [{lo}, {hi}] ({sign_changes} sign changes, all poles)")]
    NoRoot {
        lo: f64,
        hi: f64,
        sign_changes: usize,
    },
}

/// Market and the coupling `K = lambda / eps^{4/3}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticInputs {
    pub params: MarketParams,
    #[serde(rename = "K")]
    pub coupling: f64,
}

impl AsymptoticInputs {
    /// Coupling implied by the market's own spread and impact.
    pub fn new(params: MarketParams) -> Result<Self, AsymptoticError> {
        if params.epsilon.is_nan() || params.epsilon <= 0.0 {
            return Err(AsymptoticError::SpreadNotPositive(params.epsilon));
        }
        Self::with_coupling(params, params.lambda / params.epsilon.powf(4.0 / 3.0))
    }

    /// Explicit coupling, overriding the one implied by `lambda`.
    pub fn with_coupling(params: MarketParams, coupling: f64) -> Result<Self, AsymptoticError> {
        if params.epsilon.is_nan() || params.epsilon <= 0.0 {
            return Err(AsymptoticError::SpreadNotPositive(params.epsilon));
        }
        if !(coupling > 0.0 && coupling.is_finite()) {
            return Err(AsymptoticError::CouplingNotPositive(coupling));
        }
        match params.regime() {
            PortfolioRegime::Interior => Ok(Self { params, coupling }),
            other => Err(AsymptoticError::NotInterior(other)),
        }
    }

    fn merton(&self) -> f64 {
        self.params.merton_weight()
    }

    /// `sigma^2 y*^2 (1 - y*)^2 / 2`.
    fn diffusion(&self) -> f64 {
        let y = self.merton();
        self.params.variance() * y * y * (1.0 - y) * (1.0 - y) / 2.0
    }

    /// Far-field growth rate `sqrt(2 K gamma sigma^2)` of `r_B`.
    pub fn growth(&self) -> f64 {
        (2.0 * self.coupling * self.params.gamma * self.params.variance()).sqrt()
    }

    /// Whittaker parameters `(a, c, k)` for a given welfare coefficient.
    pub fn whittaker_parameters(&self, l: f64) -> (f64, f64, f64) {
        let p2 = 2.0 * self.diffusion();
        let a = 1.0 / (2.0 * self.coupling * p2);
        let c = 2.0 * l / p2;
        let k = c / (4.0 * self.growth());
        (a, c, k)
    }
}

/// Welfare coefficient tied to a candidate boundary `z`.
pub fn welfare_coefficient(z: f64, inputs: &AsymptoticInputs) -> f64 {
    let p = &inputs.params;
    p.gamma * p.variance() * z * z / 6.0 - inputs.diffusion() / z
}

/// Odd cubic solving the no-trade part of the rescaled equation.
pub fn midfield_r(z: f64, l: f64, params: &MarketParams) -> f64 {
    let y = params.merton_weight();
    let scale = 2.0 / (params.variance() * y * y * (1.0 - y) * (1.0 - y));
    scale * (params.gamma * params.variance() * z * z * z / 6.0 - l * z)
}

/// Route that produced a value of `r_B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BuyValuePath {
    Whittaker(WhittakerMethod),
    Riccati,
}

fn r_buy_whittaker(z: f64, l: f64, inputs: &AsymptoticInputs) -> Result<(f64, WhittakerMethod), String> {
    let (a, c, k) = inputs.whittaker_parameters(l);
    let s = inputs.growth();
    let x = a * s * z * z;
    let (ratio, method) = whittaker_w_ratio(k, WHITTAKER_M, x).map_err(|e| e.to_string())?;
    let offset = 1.0 / (2.0 * a) + c / (2.0 * a) / s;
    let r = -offset / z + 1.0 + s * z - 2.0 / (a * z) * ratio;
    if r.is_finite() {
        Ok((r, method))
    } else {
        Err("non-finite Whittaker ratio".into())
    }
}

struct BuyRiccati {
    l: f64,
    coupling: f64,
    diffusion: f64,
    gs2: f64,
}

impl ScalarOde for BuyRiccati {
    type Error = ();

    fn rhs(&self, z: f64, r: f64) -> Result<f64, ()> {
        let d = r - 1.0;
        Ok((self.gs2 * z * z / 2.0 - self.l - d * d / (4.0 * self.coupling)) / self.diffusion)
    }

    fn jacobian(&self, _z: f64, r: f64) -> Result<f64, ()> {
        Ok(-(r - 1.0) / (2.0 * self.coupling * self.diffusion))
    }
}

/// `r_B` by integrating the Riccati equation inward from the far field.
pub fn r_buy_riccati(z: f64, l: f64, inputs: &AsymptoticInputs) -> Result<f64, AsymptoticError> {
    if z.is_nan() || z >= 0.0 {
        return Err(AsymptoticError::Evaluation {
            z,
            detail: "buy side needs z < 0".into(),
        });
    }
    let ode = BuyRiccati {
        l,
        coupling: inputs.coupling,
        diffusion: inputs.diffusion(),
        gs2: inputs.params.gamma * inputs.params.variance(),
    };
    let z_far = -10.0 * z.abs().max(1.0);
    let r_far = -inputs.growth() * z_far + 1.0;
    let ctrl = StepControl {
        rtol: 1e-12,
        atol: 1e-14,
        h_init: 1e-6,
        h_min: 1e-16,
        h_max: 0.05 * z.abs().max(1.0),
    };
    integrate(&ode, z_far, r_far, z, &ctrl, |_, _| Control::Continue)
        .map(|fin| fin.x)
        .map_err(|e| AsymptoticError::Evaluation {
            z,
            detail: e.to_string(),
        })
}

/// `r_B(z, l)` from the Whittaker solution, falling back to the Riccati
/// integration when the special-function evaluation fails.
pub fn r_buy(z: f64, l: f64, inputs: &AsymptoticInputs) -> Result<(f64, BuyValuePath), AsymptoticError> {
    if z.is_nan() || z >= 0.0 {
        return Err(AsymptoticError::Evaluation {
            z,
            detail: "buy side needs z < 0".into(),
        });
    }
    match r_buy_whittaker(z, l, inputs) {
        Ok((r, method)) => Ok((r, BuyValuePath::Whittaker(method))),
        Err(first) => r_buy_riccati(z, l, inputs)
            .map(|r| (r, BuyValuePath::Riccati))
            .map_err(|e| AsymptoticError::Evaluation {
                z,
                detail: format!("Whittaker: {first}; Riccati: {e}"),
            }),
    }
}

/// Sell-side counterpart `r_S(z) = r_B(z) - 2 = -r_B(-z)` for `z > 0`.
pub fn r_sell(z: f64, l: f64, inputs: &AsymptoticInputs) -> Result<f64, AsymptoticError> {
    r_buy(-z, l, inputs).map(|(r, _)| -r)
}

/// Expansion coefficients and the resulting approximations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticSolution {
    #[serde(rename = "K")]
    pub coupling: f64,
    pub epsilon: f64,
    pub z_minus: f64,
    pub z_plus: f64,
    pub l: f64,
    pub a: f64,
    pub c: f64,
    pub k: f64,
    pub x_minus: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "F")]
    pub f: f64,
    pub beta_approx: f64,
    pub y_minus_approx: f64,
    pub y_plus_approx: f64,
    /// Every root found by the scan, most negative first.
    pub roots: Vec<f64>,
    /// Sign changes rejected as poles.
    pub poles: Vec<f64>,
}

/// Scan window `[lo, hi]` for `z_minus`.
pub fn scan_window(params: &MarketParams) -> (f64, f64) {
    let y = params.merton_weight();
    (-50.0 * (y * (1.0 - y)).powf(2.0 / 3.0), -1e-4)
}

fn boundary_residual(z: f64, inputs: &AsymptoticInputs) -> Result<f64, AsymptoticError> {
    r_buy(z, welfare_coefficient(z, inputs), inputs).map(|(r, _)| r - 1.0)
}

/// Locates `z_minus` and fills in the expansion coefficients.
pub fn find_z_minus(inputs: &AsymptoticInputs, exec: Execution) -> Result<AsymptoticSolution, AsymptoticError> {
    let (lo, hi) = scan_window(&inputs.params);
    let n = SCAN_POINTS;
    let zs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let gs = map_range(exec, n, |i| boundary_residual(zs[i], inputs).ok());

    let mut roots = Vec::new();
    let mut poles = Vec::new();
    for i in 0..n - 1 {
        let (Some(ga), Some(gb)) = (gs[i], gs[i + 1]) else {
            continue;
        };
        if ga == 0.0 {
            roots.push(zs[i]);
            continue;
        }
        if ga.signum() == gb.signum() {
            continue;
        }
        match refine(zs[i], zs[i + 1], ga, inputs) {
            Some((z, g)) if g.abs() <= ROOT_RESIDUAL => roots.push(z),
            Some((z, _)) => poles.push(z),
            None => {}
        }
    }
    let Some(&z_minus) = roots.first() else {
        return Err(AsymptoticError::NoRoot {
            lo,
            hi,
            sign_changes: poles.len(),
        });
    };
    Ok(complete(inputs, z_minus, roots, poles))
}

fn refine(mut a: f64, mut b: f64, mut ga: f64, inputs: &AsymptoticInputs) -> Option<(f64, f64)> {
    while b - a > 1e-12 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let gm = boundary_residual(mid, inputs).ok()?;
        if gm == 0.0 {
            return Some((mid, 0.0));
        }
        if gm.signum() == ga.signum() {
            a = mid;
            ga = gm;
        } else {
            b = mid;
        }
    }
    let z = 0.5 * (a + b);
    Some((z, boundary_residual(z, inputs).ok()?))
}

fn complete(inputs: &AsymptoticInputs, z_minus: f64, roots: Vec<f64>, poles: Vec<f64>) -> AsymptoticSolution {
    let p = &inputs.params;
    let l = welfare_coefficient(z_minus, inputs);
    let (a, c, k) = inputs.whittaker_parameters(l);
    let s = inputs.growth();
    let x = a * s * z_minus * z_minus;
    let m = WHITTAKER_M;
    let offset = 1.0 / (2.0 * a) + c / (2.0 * a) / s;
    let d = 0.5 * (1.0 - offset / (s * z_minus * z_minus));
    let e = d
        * (d - 2.0 / x
            - (1.0 / (x * x))
                * ((1.0 / d) * (m - k - 0.5) * (m + k + 0.5) - (2.0 * (k + 1.0) * x - x * x)));
    let f = offset / (z_minus * z_minus) + s - 2.0 * s * (d + 2.0 * a * s * e * z_minus * z_minus);
    let eps = p.epsilon;
    let y = p.merton_weight();
    let cube = eps.cbrt();
    AsymptoticSolution {
        coupling: inputs.coupling,
        epsilon: eps,
        z_minus,
        z_plus: -z_minus,
        l,
        a,
        c,
        k,
        x_minus: x,
        d,
        e,
        f,
        beta_approx: p.baseline().frictionless_esr - cube * cube * l,
        y_minus_approx: y + z_minus * cube,
        y_plus_approx: y - z_minus * cube,
        roots,
        poles,
    }
}

/// Approximate turnover at weight `y`.
pub fn asymptotic_policy(y: f64, sol: &AsymptoticSolution, inputs: &AsymptoticInputs) -> Result<f64, AsymptoticError> {
    let eps = inputs.params.epsilon;
    let z = (y - inputs.merton()) / eps.cbrt();
    let scale = 1.0 / (2.0 * inputs.coupling * eps.cbrt());
    if z < sol.z_minus {
        let (r, _) = r_buy(z, sol.l, inputs)?;
        Ok(scale * (r - 1.0))
    } else if z > sol.z_plus {
        Ok(scale * (r_sell(z, sol.l, inputs)? + 1.0))
    } else {
        Ok(0.0)
    }
}

/// Slopes `du/dy` of the linearized turnover just outside each boundary.
pub fn near_boundary_slope(sol: &AsymptoticSolution, inputs: &AsymptoticInputs) -> (f64, f64) {
    let eps = inputs.params.epsilon;
    let slope = sol.f / (2.0 * inputs.coupling * eps.powf(2.0 / 3.0));
    (slope, slope)
}

/// Linearized turnover near the trading boundaries.
pub fn near_boundary_turnover(y: f64, sol: &AsymptoticSolution, inputs: &AsymptoticInputs) -> f64 {
    let eps = inputs.params.epsilon;
    let z = (y - inputs.merton()) / eps.cbrt();
    let scale = sol.f / (2.0 * inputs.coupling * eps.cbrt());
    if z < sol.z_minus {
        scale * (z - sol.z_minus)
    } else if z > sol.z_plus {
        scale * (z - sol.z_plus)
    } else {
        0.0
    }
}

/// Leading-order turnover far from the no-trade region, `sigma sqrt(gamma/2) (y* - y) / sqrt(lambda)`.
pub fn far_field_turnover(y: f64, params: &MarketParams) -> f64 {
    params.sigma * (params.gamma / 2.0).sqrt() * (params.merton_weight() - y) / params.lambda.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn inputs(k: f64) -> AsymptoticInputs {
        AsymptoticInputs::with_coupling(MarketParams::new(0.08, 0.16, 5.0, 1e-3, 1e-4), k).unwrap()
    }

    #[test]
    fn coupling_from_frictions() {
        let p = MarketParams::new(0.08, 0.16, 5.0, 1e-3, 1e-4);
        assert_relative_eq!(AsymptoticInputs::new(p).unwrap().coupling, 1.0, max_relative = 1e-12);
        assert!(AsymptoticInputs::new(p.with_frictions(0.0, 1e-4)).is_err());
        assert!(AsymptoticInputs::with_coupling(p, -1.0).is_err());
    }

    #[test]
    fn midfield_examples() {
        let p = inputs(1.0).params;
        assert_eq!(midfield_r(0.0, 0.3, &p), 0.0);
        let z = -0.7;
        let l = welfare_coefficient(z, &inputs(1.0));
        assert_relative_eq!(midfield_r(z, l, &p), 1.0, max_relative = 1e-13);
        assert_relative_eq!(midfield_r(-z, l, &p), -1.0, max_relative = 1e-13);
    }

    #[test]
    fn far_field_growth() {
        let inp = inputs(1.0);
        let s = inp.growth();
        for l in [0.01, 0.1] {
            let (r, _) = r_buy(-60.0, l, &inp).unwrap();
            assert!(((r - 1.0) / (s * 60.0) - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn whittaker_solution_satisfies_riccati() {
        let inp = inputs(1.0);
        let p = &inp.params;
        let l = 0.05;
        for z in [-3.0, -1.0, -0.5] {
            let r = |z: f64| r_buy(z, l, &inp).unwrap().0;
            let h = 1e-5;
            let dr = (r(z + h) - r(z - h)) / (2.0 * h);
            let res = -p.gamma * p.variance() * z * z / 2.0 + l + inp.diffusion() * dr
                + (r(z) - 1.0).powi(2) / 4.0;
            assert!(res.abs() < 1e-7, "z={z} residual {res}");
        }
    }

    #[test]
    fn root_and_coefficients() {
        let inp = inputs(1.0);
        let sol = find_z_minus(&inp, Execution::Parallel).unwrap();
        assert!(sol.z_minus < 0.0);
        assert_eq!(sol.z_plus, -sol.z_minus);
        assert!(sol.l > 0.0);
        let (r, _) = r_buy(sol.z_minus, sol.l, &inp).unwrap();
        assert!((r - 1.0).abs() < 1e-10);
        assert!((midfield_r(sol.z_plus, sol.l, &inp.params) + 1.0).abs() < 1e-10);
        assert!(sol.beta_approx < inp.params.baseline().frictionless_esr);
        // turnover vanishes at the boundary from outside
        let y = sol.y_minus_approx - 1e-9;
        assert!(asymptotic_policy(y, &sol, &inp).unwrap().abs() < 1e-4);
    }

    #[test]
    fn closed_form_slope_matches_difference() {
        for k in [0.3, 1.0, 5.0] {
            let inp = inputs(k);
            let sol = find_z_minus(&inp, Execution::Sequential).unwrap();
            let h = 1e-5;
            let r = |z: f64| r_buy(z, sol.l, &inp).unwrap().0;
            let fd = (r(sol.z_minus + h) - r(sol.z_minus - h)) / (2.0 * h);
            assert_relative_eq!(sol.f, fd, max_relative = 1e-4);
            let (b, s) = near_boundary_slope(&sol, &inp);
            assert_eq!(b, s);
        }
    }

    #[test]
    fn sell_side_mirrors_buy_side() {
        let inp = inputs(1.0);
        let sol = find_z_minus(&inp, Execution::Parallel).unwrap();
        let y0 = inp.merton();
        let cube = inp.params.epsilon.cbrt();
        for dz in [0.1, 0.5, 2.0] {
            let up = asymptotic_policy(y0 + (sol.z_plus + dz) * cube, &sol, &inp).unwrap();
            let dn = asymptotic_policy(y0 - (sol.z_plus + dz) * cube, &sol, &inp).unwrap();
            assert_relative_eq!(up, -dn, max_relative = 1e-12);
            // oracle: sell side via the Riccati integration of the buy side
            let riccati = -(r_buy_riccati(-(sol.z_plus + dz), sol.l, &inp).unwrap() - 1.0)
                / (2.0 * inp.coupling * cube);
            assert_relative_eq!(up, riccati, max_relative = 1e-6);
        }
        assert_eq!(asymptotic_policy(y0, &sol, &inp).unwrap(), 0.0);
    }

    #[test]
    fn solution_json_names() {
        let inp = inputs(1.0);
        let sol = find_z_minus(&inp, Execution::Parallel).unwrap();
        let v = serde_json::to_value(&sol).unwrap();
        for key in ["z_minus", "l", "a", "c", "k", "x_minus", "D", "E", "F", "K"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn whittaker_and_riccati_agree(k in 0.1f64..10.0, z in -5.0f64..-0.5) {
            let inp = inputs(k);
            let l = find_z_minus(&inp, Execution::Parallel).unwrap().l;
            let (w, path) = r_buy(z, l, &inp).unwrap();
            prop_assume!(matches!(path, BuyValuePath::Whittaker(_)));
            let r = r_buy_riccati(z, l, &inp).unwrap();
            prop_assert!((w - r).abs() <= 1e-6 * w.abs().max(1.0), "w {} r {}", w, r);
        }

        #[test]
        fn midfield_is_odd(z in -3.0f64..3.0, l in 0.0f64..1.0) {
            let p = inputs(1.0).params;
            prop_assert!((midfield_r(-z, l, &p) + midfield_r(z, l, &p)).abs() <= 1e-12 * midfield_r(z, l, &p).abs().max(1.0));
        }
    }
}
