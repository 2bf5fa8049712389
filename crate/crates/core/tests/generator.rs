use std::collections::BTreeMap;

use elcapture::models::{self, OneInflation};
use elcapture::sim::{capture_probability, population, CovariateLaw, StudyOptions};
use elcapture::{generate, missingness, run_study, Exec, ScenarioId, SimulationScenario};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const DRAWS: usize = 100_000;

fn within_3se(mean: f64, target: f64, sd: f64, n: usize) -> bool {
    (mean - target).abs() <= 3.0 * sd / (n as f64).sqrt()
}

#[test]
fn covariate_marginals() {
    let a = population(&SimulationScenario::new(ScenarioId::A).with_n0(DRAWS), 0);
    let x1 = a.iter().map(|i| i.x[0]).sum::<f64>() / DRAWS as f64;
    let x2 = a.iter().map(|i| i.x[1]).sum::<f64>() / DRAWS as f64;
    assert!(within_3se(x1, 0.5, 0.5, DRAWS), "P(X1 = 1) = {x1}");
    assert!(within_3se(x2, 0.7, (0.7f64 * 0.3).sqrt(), DRAWS), "P(X2 = 1) = {x2}");
    let y = a.iter().map(|i| i.y).sum::<f64>() / DRAWS as f64;
    assert!(within_3se(y, 0.5, (1.0f64 / 12.0).sqrt(), DRAWS), "E(Y) = {y}");

    let b = population(&SimulationScenario::new(ScenarioId::B).with_n0(DRAWS), 0);
    let x2 = b.iter().map(|i| i.x[1]).sum::<f64>() / DRAWS as f64;
    assert!(within_3se(x2, 1.0, (4.0f64 / 12.0).sqrt(), DRAWS), "E(X2) = {x2}");
}

/// Pearson statistic of observed counts against `pmf`, pooling sparse cells
/// into their neighbours; returns (statistic, degrees of freedom).
fn pearson(counts: &BTreeMap<u32, usize>, pmf: impl Fn(u32) -> f64, support: std::ops::RangeInclusive<u32>, n: usize) -> (f64, usize) {
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0.0, 0.0);
    for k in support {
        obs += *counts.get(&k).unwrap_or(&0) as f64;
        exp += pmf(k) * n as f64;
        if exp >= 5.0 {
            cells.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    if let Some(last) = cells.last_mut() {
        last.0 += obs;
        last.1 += exp;
    }
    let stat = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    (stat, cells.len() - 1)
}

fn fixed_z(id: ScenarioId) -> SimulationScenario {
    let mut s = SimulationScenario::new(id).with_n0(DRAWS);
    s.x1 = CovariateLaw::Bernoulli { p: 1.0 };
    s.x2 = CovariateLaw::Uniform { lo: 0.8, hi: 0.8 };
    s.y = CovariateLaw::Uniform { lo: 0.5, hi: 0.5 };
    s
}

fn check_count_law(s: &SimulationScenario, pmf: impl Fn(u32) -> f64, max_k: u32) {
    let mut counts = BTreeMap::new();
    for ind in population(s, 0) {
        *counts.entry(ind.d).or_insert(0usize) += 1;
    }
    let (stat, df) = pearson(&counts, pmf, 0..=max_k, DRAWS);
    let crit = ChiSquared::new(df as f64).unwrap().inverse_cdf(0.999);
    assert!(stat < crit, "{:?}: chi-square {stat:.2} on {df} df exceeds {crit:.2}", s.id);
}

#[test]
fn count_law_matches_pmf_for_fixed_covariates() {
    let z = [1.0, 1.0, 0.8, 0.5];
    for id in [ScenarioId::A, ScenarioId::C] {
        let s = fixed_z(id);
        let spec = s.spec(false);
        let max_k = if id == ScenarioId::C { 60 } else { 17 };
        check_count_law(&s, |k| models::f(k as u64, &z, &s.beta0, &spec), max_k);
    }
    let s = fixed_z(ScenarioId::D).with_omega0(0.5);
    let spec = s.spec(true);
    let om = OneInflation::new(0.5).unwrap();
    check_count_law(&s, |k| models::h(k as u64, &z, &s.beta0, om, &spec), 17);
}

#[test]
fn missingness_law_on_cells() {
    let s = SimulationScenario::new(ScenarioId::A).with_n0(4 * DRAWS);
    let mut cells: BTreeMap<(u8, u8, u32), (usize, usize)> = BTreeMap::new();
    for ind in population(&s, 1) {
        let e = cells.entry((ind.x[0] as u8, ind.x[1] as u8, ind.d)).or_insert((0, 0));
        e.0 += 1;
        e.1 += usize::from(ind.r);
    }
    let mut checked = 0;
    for (&(x1, x2, d), &(n, r)) in &cells {
        if n < 2000 {
            continue;
        }
        let p = missingness::pi(&[x1 as f64, x2 as f64], d as u64, &s.eta0);
        let phat = r as f64 / n as f64;
        assert!(within_3se(phat, p, (p * (1.0 - p)).sqrt(), n), "cell ({x1}, {x2}, {d}): {phat} vs {p} over {n}");
        checked += 1;
    }
    assert!(checked >= 10, "only {checked} cells checked");
}

#[test]
fn expected_sample_size_matches_integration_oracle() {
    let s = SimulationScenario::new(ScenarioId::A);
    let sizes: Vec<f64> = (0..1000).map(|i| generate(&s, i).n() as f64).collect();
    let mean = sizes.iter().sum::<f64>() / sizes.len() as f64;
    let sd = (sizes.iter().map(|n| (n - mean).powi(2)).sum::<f64>() / (sizes.len() - 1) as f64).sqrt();
    let oracle = s.n0 as f64 * capture_probability(&s, 1_000_000, 99);
    assert!(within_3se(mean, oracle, sd, sizes.len()), "mean n {mean} vs oracle {oracle}");
}

#[test]
fn aggregation_does_not_depend_on_execution() {
    let s = SimulationScenario::new(ScenarioId::B).with_reps(12);
    let opts = StudyOptions { ratio_at_truth: true, score: true, ..StudyOptions::default() };
    let a = run_study(&s, &opts, Exec::Sequential).unwrap();
    let b = run_study(&s, &opts, Exec::Parallel).unwrap();
    let json = |r: &elcapture::SimulationReport| {
        let mut v = serde_json::to_value(r).unwrap();
        v["metadata"]["exec"] = serde_json::Value::Null;
        v
    };
    assert_eq!(json(&a), json(&b));
    for e in &a.estimators {
        assert!(e.n_rmse >= e.n_bias.abs());
        for c in &e.coverage {
            assert!((0.0..=1.0).contains(&c.two_sided));
        }
    }
}
