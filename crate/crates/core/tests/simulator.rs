use rebal_core::market::MarketParams;
use rebal_core::simulator::{run, SimConfig, SimulationReport};
use rebal_core::solver::{solve, SolverOptions};

fn market(epsilon: f64, lambda: f64) -> MarketParams {
    MarketParams::new(0.08, 0.16, 5.0, epsilon, lambda)
}

fn cfg(p: &MarketParams) -> SimConfig {
    SimConfig {
        n_paths: 20_000,
        ..SimConfig::for_market(p)
    }
}

fn agree(a: &SimulationReport, b: &SimulationReport, k: f64) -> bool {
    (a.esr_estimate - b.esr_estimate).abs() <= k * a.esr_stderr.hypot(b.esr_stderr)
}

#[test]
fn frictionless_rebalancing_earns_merton_rate() {
    let p = market(0.0, 0.0);
    let target = p.merton_weight();
    let (rep, _) = run(&p, &|y: f64| 200.0 * (target - y), &cfg(&p)).unwrap();
    let merton = p.baseline().frictionless_esr;
    assert!(
        (rep.esr_estimate - merton).abs() <= 2.0 * rep.esr_stderr,
        "{} +/- {} vs {merton}",
        rep.esr_estimate,
        rep.esr_stderr
    );
}

#[test]
fn optimal_policy_visits_both_regimes_and_rarely_clamps() {
    let p = market(1e-3, 1e-4);
    let sol = solve(&p, &SolverOptions::default()).unwrap();
    let pol = sol.policy();
    let (rep, _) = run(&p, &|y| pol.turnover(y), &cfg(&p)).unwrap();
    assert!(rep.fraction_time_in_nt > 0.0 && rep.fraction_time_in_nt < 1.0);
    assert!(rep.mean_turnover > 0.0);
    assert!((rep.y_range_violations as f64) < 1e-3 * rep.total_steps as f64);
}

#[test]
fn halving_the_step_on_one_brownian_path_is_within_noise() {
    let p = market(1e-3, 1e-4);
    let sol = solve(&p, &SolverOptions::default()).unwrap();
    let pol = sol.policy();
    let coarse = SimConfig {
        dt: 2e-3,
        brownian_substeps: 2,
        ..cfg(&p)
    };
    let (a, _) = run(&p, &|y| pol.turnover(y), &coarse).unwrap();
    let (b, _) = run(&p, &|y| pol.turnover(y), &cfg(&p)).unwrap();
    assert!((a.esr_estimate - b.esr_estimate).abs() <= b.esr_stderr, "{a:?} {b:?}");
}

#[test]
fn antithetic_pairing_preserves_the_mean() {
    let p = market(1e-3, 1e-4);
    let sol = solve(&p, &SolverOptions::default()).unwrap();
    let pol = sol.policy();
    let (paired, _) = run(&p, &|y| pol.turnover(y), &cfg(&p)).unwrap();
    let plain = SimConfig {
        antithetic: false,
        seed: 7,
        ..cfg(&p)
    };
    let (unpaired, _) = run(&p, &|y| pol.turnover(y), &plain).unwrap();
    assert!(agree(&paired, &unpaired, 1.0), "{paired:?} {unpaired:?}");
}

#[test]
fn same_seed_same_report() {
    let p = market(1e-3, 1e-4);
    let c = SimConfig {
        n_paths: 500,
        dt: 1e-2,
        ..cfg(&p)
    };
    let pol = |y: f64| 5.0 * (0.6 - y);
    assert_eq!(run(&p, &pol, &c).unwrap(), run(&p, &pol, &c).unwrap());
    let other = run(&p, &pol, &SimConfig { seed: 1, ..c }).unwrap().0;
    assert_ne!(run(&p, &pol, &c).unwrap().0, other);
}

#[test]
fn report_serializes() {
    let p = market(1e-3, 1e-4);
    let c = SimConfig {
        n_paths: 100,
        dt: 1e-2,
        ..cfg(&p)
    };
    let (rep, _) = run(&p, &|_| 0.0, &c).unwrap();
    let v = serde_json::to_value(rep).unwrap();
    for key in ["esr_estimate", "esr_stderr", "mean_turnover", "fraction_time_in_nt", "y_range_violations"] {
        assert!(v.get(key).is_some(), "{key}");
    }
}

#[test]
fn doubling_the_horizon_is_within_noise() {
    let p = market(1e-3, 1e-4);
    let sol = solve(&p, &SolverOptions::default()).unwrap();
    let pol = sol.policy();
    let short = cfg(&p);
    let long = SimConfig {
        horizon: 2.0 * short.horizon,
        ..short
    };
    let (a, _) = run(&p, &|y| pol.turnover(y), &short).unwrap();
    let (b, _) = run(&p, &|y| pol.turnover(y), &long).unwrap();
    assert!(agree(&a, &b, 2.0), "{a:?} {b:?}");
    assert!((b.esr_estimate - sol.beta).abs() <= 2.0 * b.esr_stderr, "{b:?} vs {}", sol.beta);
}
