use approx::assert_relative_eq;
use rebal_core::hjb::{buy_band, sell_band, OdeContext};
use rebal_core::market::MarketParams;
use rebal_core::solver::{solve, FreeBoundarySolution, SolverOptions};

fn market(epsilon: f64, lambda: f64) -> MarketParams {
    MarketParams::new(0.08, 0.16, 5.0, epsilon, lambda)
}

fn solved(epsilon: f64, lambda: f64) -> FreeBoundarySolution {
    solve(&market(epsilon, lambda), &SolverOptions::default()).unwrap()
}

fn width(s: &FreeBoundarySolution) -> f64 {
    s.y_plus - s.y_minus
}

#[test]
fn tiny_frictions_recover_merton() {
    let s = solved(1e-8, 1e-8);
    assert!((s.beta - 0.025).abs() < 1e-4);
    assert!((s.y_minus - 0.625).abs() < 1e-2 && (s.y_plus - 0.625).abs() < 1e-2);
}

#[test]
fn no_trade_region_contains_target() {
    let s = solved(1e-3, 1e-4);
    assert!(s.y_minus < 0.625 && 0.625 < s.y_plus);
    s.verify(1e-8).unwrap();
}

#[test]
fn band_collapses_without_spread() {
    let s = solved(1e-9, 1e-4);
    assert!(width(&s) < 1e-3, "width {}", width(&s));
}

#[test]
fn turnover_at_empty_portfolio() {
    let s = solved(1e-3, 1e-4);
    let u0 = s.policy().turnover(0.0);
    assert_relative_eq!(u0, (s.beta / 1e-4).sqrt(), max_relative = 1e-6);
}

#[test]
fn turnover_continuous_at_boundaries() {
    let s = solved(1e-3, 1e-4);
    let pol = s.policy();
    let slope_scale = pol.turnover(0.0);
    for y in [s.y_minus - 1e-9, s.y_plus + 1e-9] {
        assert!(pol.turnover(y).abs() < 1e-5 * slope_scale, "u({y}) = {}", pol.turnover(y));
    }
    for y in [s.y_minus, 0.5 * (s.y_minus + s.y_plus), s.y_plus] {
        assert_eq!(pol.turnover(y), 0.0);
    }
}

#[test]
fn larger_impact_narrows_the_band() {
    let widths: Vec<f64> = [1e-5, 1e-4, 1e-3].iter().map(|&l| width(&solved(1e-3, l))).collect();
    assert!(widths.windows(2).all(|w| w[1] <= w[0]), "{widths:?}");
}

#[test]
fn larger_spread_widens_the_band() {
    let widths: Vec<f64> = [1e-4, 1e-3, 1e-2].iter().map(|&e| width(&solved(e, 1e-4))).collect();
    assert!(widths.windows(2).all(|w| w[1] > w[0]), "{widths:?}");
}

#[test]
fn interpolant_satisfies_equation_off_grid() {
    for (e, l) in [(1e-3, 1e-4), (1e-2, 1e-2), (1e-2, 1e-4), (1e-4, 1e-4)] {
        let s = solved(e, l);
        let ctx = OdeContext::new(s.params, s.beta);
        let tol = 10.0 * s.diagnostics.rtol;
        let mut worst: f64 = 0.0;
        for i in 0..1000 {
            // irrational offsets keep the points off the solver nodes
            let y = 0.01 + 0.98 * ((i as f64 + 0.5) * 0.618_033_988_749_895).fract();
            let (res, scale) = ctx.residual(y, s.q(y), s.curve.derivative(y));
            worst = worst.max(res.abs() / scale);
        }
        assert!(worst <= tol, "eps={e} lambda={l}: worst scaled residual {worst:e}");
    }
}

#[test]
fn spread_free_limit_is_continuous() {
    let tiny = solved(1e-10, 1e-4);
    let pure = solved(0.0, 1e-4);
    assert_relative_eq!(tiny.beta, pure.beta, max_relative = 1e-8);
}

#[test]
fn far_field_turnover_is_linear() {
    let s = solved(1e-3, 1e-4);
    let p = s.params;
    let y0 = p.merton_weight();
    for y in [y0 - 0.2, y0 + 0.2] {
        let law = p.sigma * (p.gamma / 2.0).sqrt() * (y0 - y) / p.lambda.sqrt();
        assert!((s.policy().turnover(y) / law - 1.0).abs() < 0.02);
    }
}

#[test]
fn region_structure_on_dense_grid() {
    let s = solved(1e-2, 1e-3);
    let e = s.params.epsilon;
    for i in 0..=2000 {
        let y = i as f64 / 2000.0;
        let q = s.q(y);
        assert!(q * y < 1.0);
        if y < s.y_minus {
            assert!(q > buy_band(y, e) - 1e-10);
        } else if y > s.y_plus {
            assert!(q < sell_band(y, e) + 1e-10);
        }
    }
}

#[test]
fn report_round_trips_through_json() {
    let s = solved(1e-3, 1e-4);
    let report = s.report(Some(11));
    let text = serde_json::to_string(&report).unwrap();
    let back: rebal_core::solver::SolutionReport = serde_json::from_str(&text).unwrap();
    assert_eq!(report, back);
    assert_eq!(back.grid.len(), 11);
}
