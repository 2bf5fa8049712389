//! Sequential against rayon-parallel execution of simulation replicates and
//! of the score-test bootstrap.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use elcapture::sim::StudyOptions;
use elcapture::{fit_mele, generate, one_inflation_test, two_step, Exec, FitOptions, ScenarioId, SimulationScenario};

fn replicates(c: &mut Criterion) {
    let scenario = SimulationScenario::new(ScenarioId::A).with_reps(16);
    let opts = StudyOptions { ci_levels: vec![0.95], ..StudyOptions::default() };
    let mut group = c.benchmark_group("study_16_replicates");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| black_box(elcapture::run_study(&scenario, &opts, exec).unwrap()))
        });
    }
    group.finish();
}

fn bootstrap(c: &mut Criterion) {
    let scenario = SimulationScenario::new(ScenarioId::A);
    let ds = generate(&scenario, 0);
    let two = two_step(&ds, &scenario.spec(false), &FitOptions::default()).unwrap();
    let mut group = c.benchmark_group("score_test_b50");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| black_box(one_inflation_test(&two.problem, &two.fit, 50, 7, exec, &FitOptions::default()).unwrap()))
        });
    }
    group.finish();
}

fn single_fit(c: &mut Criterion) {
    let scenario = SimulationScenario::new(ScenarioId::A);
    let ds = generate(&scenario, 0);
    let two = two_step(&ds, &scenario.spec(false), &FitOptions::default()).unwrap();
    c.bench_function("fit_mele_scenario_a", |b| b.iter(|| black_box(fit_mele(&two.problem, &FitOptions::default()).unwrap())));
}

criterion_group!(benches, replicates, bootstrap, single_fit);
criterion_main!(benches);
