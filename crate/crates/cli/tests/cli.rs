use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use elcapture::{generate, ElProblem, FitOptions, Missingness, ScenarioId, SimulationScenario};
use elcapture_cli::write_dataset;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_elcapture"));
    c.env_remove("ELCAPTURE_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_scenario(dir: &Path, name: &str, scenario: &SimulationScenario, index: u64) -> PathBuf {
    let path = dir.join(name);
    write_dataset(&generate(scenario, index), std::fs::File::create(&path).unwrap()).unwrap();
    path
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn estimate(report: &Value, name: &str) -> f64 {
    let fit = if report["result"]["fit"].is_object() { &report["result"]["fit"] } else { &report["result"] };
    fit["estimates"].as_array().unwrap().iter().find(|e| e["name"] == name).unwrap()["value"].as_f64().unwrap()
}

#[test]
fn malformed_count_is_a_parse_error_naming_the_cell() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "d,x:a,y:b\n2,0.1,0.3\nthree,0.2,0.5\n").unwrap();
    let out = run(&["fit", path.to_str().unwrap(), "--K", "17"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("`d`"), "{err}");
}

#[test]
fn invalid_rows_are_data_errors() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("zero.csv");
    std::fs::write(&path, "d,y:b\n0,0.3\n2,0.5\n").unwrap();
    let out = run(&["fit", path.to_str().unwrap(), "--K", "17"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn configuration_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let path = write_scenario(dir.path(), "a.csv", &SimulationScenario::new(ScenarioId::A), 0);
    let p = path.to_str().unwrap();
    assert_eq!(run(&["test-one-inflation", p, "--K", "17", "--bootstrap", "49"]).status.code(), Some(2));
    assert_eq!(run(&["fit", p]).status.code(), Some(2));
    assert_eq!(run(&["ci", p, "--K", "17", "--level", "1.5"]).status.code(), Some(2));
    assert_eq!(run(&["fit", p, "--model", "poisson", "--K", "17"]).status.code(), Some(2));
}

#[test]
fn fit_reports_are_versioned_and_complete() {
    let dir = TempDir::new().unwrap();
    let path = write_scenario(dir.path(), "a.csv", &SimulationScenario::new(ScenarioId::A), 1);
    let r = json(&run(&["fit", path.to_str().unwrap(), "--K", "17", "--seed", "9"]));
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["library_version"], elcapture::VERSION);
    assert_eq!(r["seed"], 9);
    assert_eq!(r["config"]["command"], "fit");
    assert_eq!(r["result"]["missingness"].as_array().unwrap().len(), 4);
    for e in r["result"]["estimates"].as_array().unwrap() {
        assert!(e["se"].as_f64().unwrap() > 0.0, "{e}");
    }
    assert!(estimate(&r, "N") >= r["result"]["n_complete"].as_f64().unwrap());
}

#[test]
fn complete_data_matches_the_always_observed_reference() {
    let dir = TempDir::new().unwrap();
    let scenario = SimulationScenario::new(ScenarioId::A).with_eta0(vec![40.0, 0.0, 0.0, 0.0]);
    let ds = generate(&scenario, 2);
    assert_eq!(ds.m(), ds.n());
    let path = write_scenario(dir.path(), "full.csv", &scenario, 2);
    let r = json(&run(&["fit", path.to_str().unwrap(), "--K", "17"]));
    assert!(r["result"]["missingness"].as_array().unwrap().is_empty());

    let spec = scenario.spec(false);
    let problem = ElProblem::new(&ds.validate(&spec).unwrap(), &spec, &Missingness::AlwaysObserved).unwrap();
    let reference = elcapture::fit_mele(&problem, &FitOptions::default()).unwrap();
    assert_eq!(estimate(&r, "N").to_bits(), reference.params.n.to_bits());
    assert_eq!(estimate(&r, "alpha").to_bits(), reference.params.alpha.to_bits());
    for (j, b) in reference.params.beta.iter().enumerate() {
        assert_eq!(estimate(&r, &format!("beta{j}")).to_bits(), b.to_bits());
    }
    assert_eq!(r["result"]["loglik"].as_f64().unwrap().to_bits(), reference.loglik.to_bits());
}

#[test]
fn intervals_nest_and_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let path = write_scenario(dir.path(), "a.csv", &SimulationScenario::new(ScenarioId::A), 4);
    let p = path.to_str().unwrap();
    let wide = run(&["ci", p, "--K", "17", "--level", "0.05"]);
    let again = run(&["ci", p, "--K", "17", "--level", "0.05"]);
    assert_eq!(wide.stdout, again.stdout);
    let narrow = json(&run(&["ci", p, "--K", "17", "--level", "0.5"]));
    let wide = json(&wide);
    let (wi, ni) = (&wide["result"]["interval"], &narrow["result"]["interval"]);
    assert_eq!(wi["level"].as_f64().unwrap(), 0.95);
    let f = |v: &Value, k: &str| v[k].as_f64().unwrap();
    assert!(f(wi, "lower") <= f(ni, "lower") && f(ni, "upper") <= f(wi, "upper"), "{wi} {ni}");
    let n_hat = estimate(&narrow, "N");
    assert!(f(ni, "lower") <= n_hat && n_hat <= f(ni, "upper"));
}

#[test]
fn csv_output_has_key_value_rows() {
    let dir = TempDir::new().unwrap();
    let path = write_scenario(dir.path(), "a.csv", &SimulationScenario::new(ScenarioId::A), 5);
    let out = run(&["ci", path.to_str().unwrap(), "--K", "17", "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("key,value\n"));
    for key in ["schema_version,1", "\nN,", "\nse_N,", "\nci_lower,", "\nci_upper,"] {
        assert!(text.contains(key), "{key} missing in {text}");
    }
}

#[test]
fn strong_one_inflation_is_detected() {
    let dir = TempDir::new().unwrap();
    let scenario = SimulationScenario::new(ScenarioId::D).with_omega0(0.5);
    let path = write_scenario(dir.path(), "d.csv", &scenario, 0);
    let r = json(&run(&["test-one-inflation", path.to_str().unwrap(), "--K", "17", "--bootstrap", "100", "--seed", "3"]));
    let res = &r["result"];
    assert!(res["p_value"].as_f64().unwrap() < 0.01, "{res}");
    assert_eq!(res["decision"], "reject");
    assert_eq!(res["bootstrap"], 100);
}

#[test]
fn simulate_is_deterministic_and_writes_qq_data() {
    let dirs = [TempDir::new().unwrap(), TempDir::new().unwrap()];
    let mut files = Vec::new();
    for dir in &dirs {
        let out = dir.path().join("study.json");
        let status = bin()
            .current_dir(dir.path())
            .args(["simulate", "--scenario", "A", "--n0", "200", "--reps", "6", "--seed", "1", "--out", "study.json"])
            .status()
            .unwrap();
        assert!(status.success());
        files.push((std::fs::read(&out).unwrap(), std::fs::read(elcapture_cli::qq_path(&out)).unwrap()));
    }
    assert_eq!(files[0], files[1]);
    let r: Value = serde_json::from_slice(&files[0].0).unwrap();
    let est = &r["result"]["estimators"][0];
    assert!(est["n_bias"].is_number() && est["n_rmse"].is_number());
    assert_eq!(est["coverage"].as_array().unwrap().len(), 4);
    assert_eq!(r["seed"], 1);
    assert!(String::from_utf8_lossy(&files[0].1).starts_with("estimator,empirical,chisq1"));
}

#[test]
fn thread_cap_does_not_change_results() {
    let run_with = |threads: &str| {
        bin()
            .env("ELCAPTURE_THREADS", threads)
            .args(["simulate", "--scenario", "A", "--reps", "3", "--format", "csv"])
            .output()
            .unwrap()
    };
    let (one, two) = (run_with("1"), run_with("2"));
    assert!(one.status.success() && two.status.success());
    assert_eq!(one.stdout, two.stdout);
    assert_eq!(run_with("zero").status.code(), Some(2));
}
