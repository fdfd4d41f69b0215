use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rebal_core::asymptotics::{find_z_minus, AsymptoticInputs};
use rebal_core::market::MarketParams;
use rebal_core::par::{map_slice, Execution};
use rebal_core::simulator::{run, SimConfig};
use rebal_core::solver::{solve, SolverOptions};

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn market() -> MarketParams {
    MarketParams::new(0.08, 0.16, 5.0, 1e-3, 1e-4)
}

fn monte_carlo(c: &mut Criterion) {
    let p = market();
    let sol = solve(&p, &SolverOptions::default()).unwrap();
    let policy = sol.policy();
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    for (name, execution) in MODES {
        let cfg = SimConfig {
            n_paths: 4_000,
            dt: 5e-3,
            execution,
            ..SimConfig::for_market(&p)
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| run(&p, &|y| policy.turnover(y), black_box(cfg)).unwrap().0)
        });
    }
    group.finish();
}

fn boundary_scan(c: &mut Criterion) {
    let inputs = AsymptoticInputs::new(market()).unwrap();
    let mut group = c.benchmark_group("z_minus_scan");
    for (name, execution) in MODES {
        group.bench_function(name, |b| b.iter(|| find_z_minus(black_box(&inputs), execution).unwrap().z_minus));
    }
    group.finish();
}

fn friction_sweep(c: &mut Criterion) {
    let cells: Vec<(f64, f64)> = [1e-4, 1e-3, 1e-2]
        .iter()
        .flat_map(|&e| [1e-5, 1e-4, 1e-3].map(move |l| (e, l)))
        .collect();
    let mut group = c.benchmark_group("friction_sweep");
    group.sample_size(10);
    for (name, execution) in MODES {
        let opts = SolverOptions {
            execution,
            ..SolverOptions::default()
        };
        group.bench_function(name, |b| {
            b.iter(|| {
                map_slice(execution, &cells, |&(e, l)| {
                    solve(&market().with_frictions(e, l), &opts).unwrap().beta
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, monte_carlo, boundary_scan, friction_sweep);
criterion_main!(benches);
