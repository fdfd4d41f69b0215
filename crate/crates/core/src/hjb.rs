//! Slope field of the first-order equation for the marginal value `q(y)`,
//! its boundary data and the pointwise optimal turnover.
//!
//! In terms of the risky weight `y` and the candidate rate `beta` the
//! equation reads
//!
//! ```text
//! P(y) (q' + (1 - gamma) q^2) + G(y, q) + B(y, q) = 0
//! P(y)    = sigma^2 y^2 (1 - y)^2 / 2
//! G(y, q) = -beta + mu y - gamma sigma^2 y^2 / 2 + y (1 - y)(mu - gamma sigma^2 y) q
//! B(y, q) = N^2 / (4 lambda (1 - y q))
//! ```
//!
//! with `N = q (1 + eps y) - eps` in the buy region, `N = q (1 - eps y) + eps`
//! in the sell region and `B = 0` in between.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrator::ScalarOde;
use crate::market::MarketParams;

/// Closest distance to `y = 0` or `y = 1` at which the slope is evaluated.
pub const Y_MIN_CLEARANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Buy,
    NoTrade,
    Sell,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum OdeError {
    #[error("y = {y} is within the endpoint clearance; use the boundary start")]
    Singular { y: f64 },
    #[error("q y >= 1 at y = {y}, q = {q}")]
    Domain { y: f64, q: f64 },
    #[error("beta = {beta} must be positive for the boundary expansion at zero weight")]
    BetaNotPositive { beta: f64 },
    #[error("beta = {beta} gives a negative radicand in the boundary value at full weight")]
    InvalidBeta { beta: f64 },
    #[error("zero price impact leaves the turnover unbounded")]
    ZeroImpact,
}

/// Lower edge of the buy region, `eps / (1 + eps y)`.
#[inline]
pub fn buy_band(y: f64, epsilon: f64) -> f64 {
    epsilon / (1.0 + epsilon * y)
}

/// Upper edge of the sell region, `-eps / (1 - eps y)`.
#[inline]
pub fn sell_band(y: f64, epsilon: f64) -> f64 {
    -epsilon / (1.0 - epsilon * y)
}

/// Trading regime of the point `(y, q)`. Points on a band curve count as
/// no-trade; the slope is continuous there.
pub fn classify(y: f64, q: f64, epsilon: f64) -> Regime {
    if q > buy_band(y, epsilon) {
        Regime::Buy
    } else if q < sell_band(y, epsilon) {
        Regime::Sell
    } else {
        Regime::NoTrade
    }
}

/// Market parameters together with a candidate equivalent safe rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeContext {
    pub params: MarketParams,
    pub beta: f64,
}

/// The additive pieces of the equation at one point, for residual checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquationTerms {
    pub diffusion: f64,
    pub drift: f64,
    pub friction: f64,
}

impl OdeContext {
    pub fn new(params: MarketParams, beta: f64) -> Self {
        Self { params, beta }
    }

    /// `d = -gamma sigma^2 - 2 beta + 2 mu`.
    pub fn d(&self) -> f64 {
        let p = &self.params;
        -p.gamma * p.variance() - 2.0 * self.beta + 2.0 * p.mu
    }

    fn drift(&self, y: f64, q: f64) -> f64 {
        let p = &self.params;
        let gs2 = p.gamma * p.variance();
        -self.beta + p.mu * y - gs2 * y * y / 2.0 + y * (1.0 - y) * (p.mu - gs2 * y) * q
    }

    fn drift_dq(&self, y: f64) -> f64 {
        let p = &self.params;
        y * (1.0 - y) * (p.mu - p.gamma * p.variance() * y)
    }

    /// Friction term `B` and its derivative in `q`.
    fn friction(&self, y: f64, q: f64) -> (f64, f64) {
        let eps = self.params.epsilon;
        let lam = self.params.lambda;
        let (n, dn) = match classify(y, q, eps) {
            Regime::NoTrade => return (0.0, 0.0),
            Regime::Buy => (q * (1.0 + eps * y) - eps, 1.0 + eps * y),
            Regime::Sell => (q * (1.0 - eps * y) + eps, 1.0 - eps * y),
        };
        let den = 1.0 - y * q;
        let b = n * n / (4.0 * lam * den);
        let db = (2.0 * n * dn * den + n * n * y) / (4.0 * lam * den * den);
        (b, db)
    }

    fn check(&self, y: f64, q: f64) -> Result<(), OdeError> {
        if y.min(1.0 - y) < Y_MIN_CLEARANCE * (1.0 - 1e-6) {
            return Err(OdeError::Singular { y });
        }
        if q * y >= 1.0 || !q.is_finite() {
            return Err(OdeError::Domain { y, q });
        }
        Ok(())
    }

    fn diffusion_coefficient(&self, y: f64) -> f64 {
        self.params.variance() * y * y * (1.0 - y) * (1.0 - y) / 2.0
    }

    /// `q'(y)` in the regime selected by [`classify`].
    pub fn slope(&self, y: f64, q: f64) -> Result<f64, OdeError> {
        self.check(y, q)?;
        let (b, _) = self.friction(y, q);
        let p = self.diffusion_coefficient(y);
        Ok(-(self.drift(y, q) + b) / p - (1.0 - self.params.gamma) * q * q)
    }

    /// Slope with the friction term dropped, i.e. the no-trade formula everywhere.
    pub fn slope_no_trade(&self, y: f64, q: f64) -> Result<f64, OdeError> {
        self.check(y, q)?;
        let p = self.diffusion_coefficient(y);
        Ok(-self.drift(y, q) / p - (1.0 - self.params.gamma) * q * q)
    }

    /// `d q' / d q`.
    pub fn slope_dq(&self, y: f64, q: f64) -> Result<f64, OdeError> {
        self.check(y, q)?;
        let (_, db) = self.friction(y, q);
        let p = self.diffusion_coefficient(y);
        Ok(-(self.drift_dq(y) + db) / p - 2.0 * (1.0 - self.params.gamma) * q)
    }

    /// The three additive parts of the equation for a given `(y, q, q')`.
    pub fn terms(&self, y: f64, q: f64, dq: f64) -> EquationTerms {
        let (b, _) = self.friction(y, q);
        EquationTerms {
            diffusion: self.diffusion_coefficient(y) * (dq + (1.0 - self.params.gamma) * q * q),
            drift: self.drift(y, q),
            friction: b,
        }
    }

    /// Residual of the equation and the magnitude of its largest additive term.
    pub fn residual(&self, y: f64, q: f64, dq: f64) -> (f64, f64) {
        let p = &self.params;
        let gs2 = p.gamma * p.variance();
        let coef = self.diffusion_coefficient(y);
        let (b, _) = self.friction(y, q);
        let parts = [
            coef * dq,
            coef * (1.0 - p.gamma) * q * q,
            self.beta,
            p.mu * y,
            gs2 * y * y / 2.0,
            y * (1.0 - y) * (p.mu - gs2 * y) * q,
            b,
        ];
        let t = self.terms(y, q, dq);
        let scale = parts.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        (t.diffusion + t.drift + t.friction, scale)
    }
}

impl ScalarOde for OdeContext {
    type Error = OdeError;

    fn rhs(&self, t: f64, x: f64) -> Result<f64, OdeError> {
        self.slope(t, x)
    }

    fn jacobian(&self, t: f64, x: f64) -> Result<f64, OdeError> {
        self.slope_dq(t, x)
    }
}

/// Limit of `q` at `y = 0` and its derivative there.
pub fn boundary_value_0(params: &MarketParams, beta: f64) -> Result<(f64, f64), OdeError> {
    if beta.is_nan() || beta <= 0.0 {
        return Err(OdeError::BetaNotPositive { beta });
    }
    let q0 = params.epsilon + 2.0 * (params.lambda * beta).sqrt();
    let dq0 = -(params.lambda / beta).sqrt() * (params.mu + (params.mu + beta) * q0)
        - params.epsilon * q0;
    Ok((q0, dq0))
}

/// Limit of `q` at `y = 1`.
pub fn boundary_value_1(params: &MarketParams, beta: f64) -> Result<f64, OdeError> {
    let eps = params.epsilon;
    let ld = params.lambda * OdeContext::new(*params, beta).d();
    let radicand = ld * (ld - 2.0 + 2.0 * eps);
    if radicand < 0.0 || !radicand.is_finite() {
        return Err(OdeError::InvalidBeta { beta });
    }
    Ok((ld - eps * (1.0 - eps) - radicand.sqrt()) / ((1.0 - eps) * (1.0 - eps)))
}

/// Derivative of `q` at `y = 1`, obtained by differentiating the balance
/// `G + B = 0` that fixes the boundary value. `None` when that balance does
/// not determine it (vanishing `dB/dq`).
pub fn boundary_slope_1(params: &MarketParams, q1: f64) -> Option<f64> {
    let eps = params.epsilon;
    let lam = params.lambda;
    let n = q1 * (1.0 - eps) + eps;
    let den = 1.0 - q1;
    let b_y = (-2.0 * eps * q1 * n * den + n * n * q1) / (4.0 * lam * den * den);
    let b_q = (2.0 * n * (1.0 - eps) * den + n * n) / (4.0 * lam * den * den);
    let g_y = (params.mu - params.gamma * params.variance()) * (1.0 - q1);
    let h = -(g_y + b_y) / b_q;
    (b_q.abs() > 1e-300 && h.is_finite()).then_some(h)
}

/// Root of the balance `G + B = 0` at `y` on the given trading side.
///
/// Near either endpoint the diffusion coefficient is `O(dist^2)`, so this
/// root tracks the attracting solution to that order. `None` when the balance
/// has no root in the trading region: every solution then leaves the region.
pub fn quasi_static_start(ctx: &OdeContext, y: f64, side: Regime) -> Result<Option<f64>, OdeError> {
    let eps = ctx.params.epsilon;
    let balance = |q: f64| {
        let t = ctx.terms(y, q, 0.0);
        t.drift + t.friction
    };
    let (mut lo, mut hi) = match side {
        Regime::Buy => {
            let band = buy_band(y, eps);
            if balance(band) >= 0.0 {
                return Ok(None);
            }
            let mut hi = if y > 0.0 { 1.0 / y } else { band + 1.0 };
            while y == 0.0 && balance(hi) < 0.0 {
                hi = band + 2.0 * (hi - band);
                if !hi.is_finite() {
                    return Err(OdeError::Domain { y, q: hi });
                }
            }
            (band, hi)
        }
        Regime::Sell => {
            let band = sell_band(y, eps);
            if balance(band) >= 0.0 {
                return Ok(None);
            }
            let mut lo = band - 1.0;
            while balance(lo) < 0.0 {
                lo = band - 2.0 * (band - lo);
                if !lo.is_finite() {
                    return Err(OdeError::Domain { y, q: lo });
                }
            }
            (lo, band)
        }
        Regime::NoTrade => return Err(OdeError::Domain { y, q: 0.0 }),
    };
    // balance is increasing on the buy side and decreasing on the sell side
    let increasing = side == Regime::Buy;
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(Some(if increasing { lo } else { hi }));
        }
        let below = balance(mid) < 0.0;
        if below == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Turnover maximizing the local objective `-lambda u^2 - eps |u| + (u + eps |u| y + lambda y u^2) q`.
pub fn pointwise_optimal_turnover(y: f64, q: f64, params: &MarketParams) -> Result<f64, OdeError> {
    if q * y >= 1.0 {
        return Err(OdeError::Domain { y, q });
    }
    let eps = params.epsilon;
    let v = q / (1.0 - y * q);
    let excess = if v >= eps {
        v - eps
    } else if v <= -eps {
        v + eps
    } else {
        return Ok(0.0);
    };
    if excess == 0.0 {
        return Ok(0.0);
    }
    if params.lambda <= 0.0 {
        return Err(OdeError::ZeroImpact);
    }
    Ok(excess / (2.0 * params.lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn market(eps: f64, lam: f64) -> MarketParams {
        MarketParams::new(0.08, 0.16, 5.0, eps, lam)
    }

    #[test]
    fn classification() {
        assert_eq!(classify(0.3, 0.0, 0.01), Regime::NoTrade);
        let beta = 0.02;
        let (q0, _) = boundary_value_0(&market(0.01, 1e-4), beta).unwrap();
        assert_eq!(classify(0.0, q0, 0.01), Regime::Buy);
        assert_eq!(classify(0.4, 1e-3, 0.0), Regime::Buy);
        assert_eq!(classify(0.4, -1e-3, 0.0), Regime::Sell);
        assert_eq!(classify(0.4, 0.0, 0.0), Regime::NoTrade);
    }

    #[test]
    fn no_trade_slope_at_merton_point() {
        // q = 0 at the frictionless optimum: the drift vanishes, so does the slope
        let p = market(0.01, 0.01);
        let ctx = OdeContext::new(p, p.baseline().frictionless_esr);
        let s = ctx.slope(p.merton_weight(), 0.0).unwrap();
        assert!(s.abs() < 1e-12, "{s}");
    }

    #[test]
    fn pure_impact_buy_bracket() {
        let p = market(0.0, 1e-3);
        let ctx = OdeContext::new(p, 0.02);
        let (y, q) = (0.3, 0.05);
        let expect = -(ctx.drift(y, q) + q * q / (4.0 * 1e-3 * (1.0 - y * q)))
            / (0.0256 * y * y * (1.0 - y) * (1.0 - y) / 2.0)
            + 4.0 * q * q;
        assert_relative_eq!(ctx.slope(y, q).unwrap(), expect, max_relative = 1e-14);
    }

    #[test]
    fn slope_errors() {
        let ctx = OdeContext::new(market(0.01, 0.01), 0.02);
        assert!(matches!(ctx.slope(1e-7, 0.0), Err(OdeError::Singular { .. })));
        assert!(matches!(ctx.slope(1.0 - 1e-7, 0.0), Err(OdeError::Singular { .. })));
        assert!(ctx.slope(1e-6, 0.0).is_ok());
        assert!(ctx.slope(1.0 - 1e-6, 0.0).is_ok());
        assert!(matches!(ctx.slope(0.5, 2.0), Err(OdeError::Domain { .. })));
    }

    #[test]
    fn boundary_values() {
        let (q0, _) = boundary_value_0(&market(0.0, 0.01), 0.025).unwrap();
        assert_relative_eq!(q0, 0.031_622_776_601_683_79, max_relative = 1e-14);
        let (q0, _) = boundary_value_0(&market(0.01, 0.0), 0.02).unwrap();
        assert_eq!(q0, 0.01);
        assert!(boundary_value_0(&market(0.01, 0.01), 0.0).is_err());

        let q1 = boundary_value_1(&market(0.01, 0.0), 0.02).unwrap();
        assert_relative_eq!(q1, -0.010_101_010_101_010_1, max_relative = 1e-13);

        let p = market(0.0, 0.01);
        let beta = 0.02;
        let ld = 0.01 * OdeContext::new(p, beta).d();
        let q1 = boundary_value_1(&p, beta).unwrap();
        assert_relative_eq!(q1, ld - (ld * (ld - 2.0)).sqrt(), max_relative = 1e-14);
        assert!(q1 < 0.0);
    }

    #[test]
    fn boundary_value_one_balances_equation() {
        // at y = 1 the equation reduces to G + B = 0
        let p = market(0.01, 0.01);
        let beta = 0.02;
        let q1 = boundary_value_1(&p, beta).unwrap();
        let ctx = OdeContext::new(p, beta);
        let t = ctx.terms(1.0, q1, 0.0);
        assert!((t.drift + t.friction).abs() < 1e-14);
    }

    #[test]
    fn boundary_slope_one_matches_finite_difference() {
        // differentiate the implicit balance G + B = 0 along y numerically
        let p = market(0.01, 0.01);
        let beta = 0.02;
        let q1 = boundary_value_1(&p, beta).unwrap();
        let h = boundary_slope_1(&p, q1).unwrap();
        let ctx = OdeContext::new(p, beta);
        let bal = |y: f64, q: f64| {
            let t = ctx.terms(y, q, 0.0);
            t.drift + t.friction
        };
        let dy = 1e-6;
        let gy = (bal(1.0 + dy, q1) - bal(1.0 - dy, q1)) / (2.0 * dy);
        let gq = (bal(1.0, q1 + dy) - bal(1.0, q1 - dy)) / (2.0 * dy);
        assert_relative_eq!(h, -gy / gq, max_relative = 1e-6);
    }

    #[test]
    fn quasi_static_start_matches_taylor_data() {
        let p = market(1e-3, 1e-4);
        let beta = 0.024;
        let ctx = OdeContext::new(p, beta);
        let d = 1e-6;
        let (q0, dq0) = boundary_value_0(&p, beta).unwrap();
        let qs = quasi_static_start(&ctx, d, Regime::Buy).unwrap().unwrap();
        assert!((qs - (q0 + dq0 * d)).abs() < 1e-9, "{qs} vs {}", q0 + dq0 * d);
        let q1 = boundary_value_1(&p, beta).unwrap();
        let h1 = boundary_slope_1(&p, q1).unwrap();
        let qs = quasi_static_start(&ctx, 1.0 - d, Regime::Sell).unwrap().unwrap();
        assert!((qs - (q1 - h1 * d)).abs() < 1e-9, "{qs} vs {}", q1 - h1 * d);
        // at the endpoints themselves the root is the boundary value
        let at0 = quasi_static_start(&ctx, 0.0, Regime::Buy).unwrap().unwrap();
        assert!((at0 - q0).abs() < 1e-15);
    }

    #[test]
    fn no_quasi_static_root_at_degenerate_rate() {
        // d = 0: the boundary value sits on the sell band and the balance is
        // positive throughout the sell region just inside y = 1
        let p = market(1e-3, 1e-4);
        let beta = p.mu - p.gamma * p.variance() / 2.0 + 1e-12;
        let ctx = OdeContext::new(p, beta);
        assert_eq!(quasi_static_start(&ctx, 1.0 - 1e-6, Regime::Sell).unwrap(), None);
        assert!(ctx.slope(1.0 - 1e-6, 0.0).unwrap() < 0.0);
    }

    #[test]
    fn turnover_examples() {
        let p = market(0.01, 1e-4);
        assert_eq!(pointwise_optimal_turnover(0.4, 0.0, &p).unwrap(), 0.0);
        let beta = 0.02;
        let (q0, _) = boundary_value_0(&p, beta).unwrap();
        assert_relative_eq!(
            pointwise_optimal_turnover(0.0, q0, &p).unwrap(),
            (beta / 1e-4f64).sqrt(),
            max_relative = 1e-12
        );
        let p0 = market(0.0, 1e-3);
        let (y, q) = (0.3, -0.2);
        assert_relative_eq!(
            pointwise_optimal_turnover(y, q, &p0).unwrap(),
            q / (2e-3 * (1.0 - y * q)),
            max_relative = 1e-14
        );
        assert!(pointwise_optimal_turnover(0.5, 2.0, &p).is_err());
    }

    #[test]
    fn buy_slope_diverges_near_domain_edge() {
        let ctx = OdeContext::new(market(0.001, 1e-4), 0.024);
        let y = 0.5;
        let mut prev = f64::INFINITY;
        for k in 1..8 {
            let q = 1.0 / y - 10f64.powi(-k);
            let s = ctx.slope(y, q).unwrap();
            assert!(s < prev);
            prev = s;
        }
        assert!(prev < -1e12);
    }

    proptest! {
        #[test]
        fn slope_continuous_across_bands(y in 0.01f64..0.99, eps in 1e-4f64..0.05, lam in 1e-5f64..1e-2, beta in 0.016f64..0.025) {
            let ctx = OdeContext::new(market(eps, lam), beta);
            for q in [buy_band(y, eps), sell_band(y, eps)] {
                let nt = ctx.slope_no_trade(y, q).unwrap();
                let up = ctx.slope(y, q * (1.0 + 1e-15) + 1e-300).unwrap();
                let dn = ctx.slope(y, q * (1.0 - 1e-15)).unwrap();
                let tol = 1e-12 * nt.abs().max(1.0) + 1e-9;
                prop_assert!((up - nt).abs() <= tol && (dn - nt).abs() <= tol);
            }
        }

        #[test]
        fn friction_never_raises_slope(y in 0.01f64..0.99, q in -2.0f64..1.0, eps in 0.0f64..0.05, lam in 1e-5f64..1e-2) {
            prop_assume!(q * y < 1.0);
            let ctx = OdeContext::new(market(eps, lam), 0.02);
            prop_assert!(ctx.slope(y, q).unwrap() <= ctx.slope_no_trade(y, q).unwrap());
        }

        #[test]
        fn jacobian_matches_difference(y in 0.05f64..0.95, q in -0.5f64..0.5, eps in 0.0f64..0.02, lam in 1e-4f64..1e-2) {
            let ctx = OdeContext::new(market(eps, lam), 0.02);
            let h = 1e-7;
            prop_assume!(classify(y, q - h, eps) == classify(y, q + h, eps));
            let fd = (ctx.slope(y, q + h).unwrap() - ctx.slope(y, q - h).unwrap()) / (2.0 * h);
            let an = ctx.slope_dq(y, q).unwrap();
            prop_assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "fd {} an {}", fd, an);
        }

        #[test]
        fn turnover_maximizes_local_objective(y in 0.0f64..1.0, q in -0.3f64..0.3, eps in 0.0f64..0.02, lam in 1e-3f64..1e-1) {
            let p = market(eps, lam);
            let obj = |u: f64| -lam * u * u - eps * u.abs() + (u + eps * u.abs() * y + lam * y * u * u) * q;
            let best = pointwise_optimal_turnover(y, q, &p).unwrap();
            let bound = 2.0 * best.abs() + 1.0;
            let n = 20_000;
            let step = 2.0 * bound / n as f64;
            let (mut arg, mut max) = (0.0, f64::NEG_INFINITY);
            for i in 0..=n {
                let u = -bound + i as f64 * step;
                let v = obj(u);
                if v > max {
                    max = v;
                    arg = u;
                }
            }
            prop_assert!((arg - best).abs() <= step, "grid {} formula {}", arg, best);
        }
    }
}
