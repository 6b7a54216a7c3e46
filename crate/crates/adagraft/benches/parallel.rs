//! Sequential vs parallel fan-out on the embarrassingly parallel surfaces:
//! the all-pairs grafting grid, the multi-seed pathological suite, and the
//! regret sequences.
//!
//! With the default `parallel` feature, `jobs = 0` uses the rayon pool and
//! `jobs = 1` runs inline; without it both arms measure the sequential path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use adagraft::graft::GraftScope;
use adagraft::harness::{
    grid, pathological_suite, regret_suite, GridSpec, HingeSuiteConfig, OptimizerSpec, ProblemSpec,
    RegretConfig, RunSettings, WilsonSuiteConfig,
};
use adagraft::optim::Preset;
use adagraft::schedules::Schedule;

fn grid_workload(jobs: usize) {
    let spec = GridSpec {
        optimizers: vec![
            OptimizerSpec::preset(Preset::Sgd, Schedule::constant(0.05)),
            OptimizerSpec::preset(Preset::MomentumSgd, Schedule::constant(0.02)),
            OptimizerSpec::preset(Preset::Adagrad, Schedule::constant(0.5)),
            OptimizerSpec::preset(Preset::Adam, Schedule::constant(0.05)),
        ],
        scope: GraftScope::LayerWise,
        eps_graft: 0.0,
    };
    let settings = RunSettings::new(500, 17).with_eval_every(100);
    let cells = grid(&ProblemSpec::quadratic(128), &spec, &settings, jobs).unwrap();
    assert_eq!(cells.len(), 16);
}

fn pathological_workload(jobs: usize) {
    let hinge = HingeSuiteConfig {
        d: 200,
        fill: 0.5,
        sgd_eta0_grid: vec![0.5, 1.0, 2.0],
        ..HingeSuiteConfig::default()
    };
    let wilson = WilsonSuiteConfig {
        n: 16,
        adagrad_steps: 100,
        sgd_steps: 800,
        ..WilsonSuiteConfig::default()
    };
    let outcome = pathological_suite(&[1, 2, 3, 4], &hinge, &wilson, jobs).unwrap();
    assert_eq!(outcome.report.seeds.len(), 4);
}

fn regret_workload(jobs: usize) {
    let cfg = RegretConfig {
        dim: 16,
        rounds: 1000,
        random_sequences: 8,
        adversarial_sequences: 4,
        ..RegretConfig::default()
    };
    let outcomes = regret_suite(&cfg, 5, jobs).unwrap();
    assert_eq!(outcomes.len(), 12);
}

fn bench_fan_out(c: &mut Criterion) {
    let mut group = c.benchmark_group("fan_out");
    group.sample_size(10);
    for (name, workload) in [
        ("grid_4x4", grid_workload as fn(usize)),
        ("pathological_4seeds", pathological_workload),
        ("regret_12seq", regret_workload),
    ] {
        group.bench_with_input(BenchmarkId::new(name, "sequential"), &1usize, |b, &jobs| {
            b.iter(|| workload(jobs))
        });
        group.bench_with_input(BenchmarkId::new(name, "parallel"), &0usize, |b, &jobs| {
            b.iter(|| workload(jobs))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_fan_out);
criterion_main!(benches);
