//! Versioned report envelopes and their JSON / CSV renderings.
//!
//! JSON numbers use the shortest representation that round-trips to the same
//! `f64`, so reports carry full precision.

use std::io::Write;

use elcapture::inference::{ConfidenceInterval, ScoreTestResult, VarianceEstimate};
use elcapture::workflow::TwoStepFit;
use serde::Serialize;

use crate::{CliError, Format, RunConfig};

/// Bumped whenever a report field changes meaning or is removed.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct Report<T> {
    pub schema_version: u32,
    pub library_version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub result: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(config: &RunConfig, result: T) -> Self {
        Report {
            schema_version: SCHEMA_VERSION,
            library_version: elcapture::VERSION.into(),
            seed: config.seed,
            config: config.clone(),
            result,
        }
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<(), CliError> {
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

impl<T: Serialize + Rows> Report<T> {
    pub fn write<W: Write>(&self, w: W, format: Format) -> Result<(), CliError> {
        match format {
            Format::Json => self.write_json(w),
            Format::Csv => {
                let mut out = csv::Writer::from_writer(w);
                out.write_record(["key", "value"])?;
                out.write_record(["schema_version", &self.schema_version.to_string()])?;
                out.write_record(["library_version", &self.library_version])?;
                out.write_record(["seed", &self.seed.to_string()])?;
                for (k, v) in self.result.rows() {
                    out.write_record([k, v])?;
                }
                out.flush()?;
                Ok(())
            }
        }
    }
}

/// Flat `(key, value)` rendering for CSV output.
pub trait Rows {
    fn rows(&self) -> Vec<(String, String)>;
}

#[derive(Debug, Clone, Serialize)]
pub struct Estimate {
    pub name: String,
    pub value: f64,
    pub se: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub n_captured: usize,
    pub n_complete: usize,
    /// Missingness coefficients; empty when every covariate is observed.
    pub missingness: Vec<Estimate>,
    pub estimates: Vec<Estimate>,
    pub loglik: f64,
    pub converged: bool,
    pub sigma2: Option<f64>,
    pub scale: Option<f64>,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub termination: String,
    pub hit_n_cap: bool,
    pub boundary_omega: bool,
    pub diagnostics: Vec<String>,
}

impl FitReport {
    pub fn new(two: &TwoStepFit, var: Option<&VarianceEstimate>) -> Self {
        let p = &two.fit.params;
        let mut missingness = Vec::new();
        let mut diagnostics = Vec::new();
        if let Some(m) = &two.missingness_fit {
            let se = m.standard_errors();
            if se.is_none() {
                diagnostics.push("missingness information matrix is singular".into());
            }
            for (j, &v) in m.eta_hat.iter().enumerate() {
                missingness.push(Estimate { name: format!("eta{j}"), value: v, se: se.as_ref().map(|s| s[j]) });
            }
            if !m.converged {
                diagnostics.push("missingness fit did not converge".into());
            }
        }
        let mut estimates = vec![Estimate { name: "N".into(), value: p.n, se: var.map(|v| v.se_n) }];
        for (j, &b) in p.beta.iter().enumerate() {
            estimates.push(Estimate { name: format!("beta{j}"), value: b, se: var.map(|v| v.se_beta[j]) });
        }
        estimates.push(Estimate { name: "alpha".into(), value: p.alpha, se: var.map(|v| v.se_alpha) });
        if let Some(w) = p.omega {
            estimates.push(Estimate { name: "omega".into(), value: w, se: var.and_then(|v| v.se_omega) });
        }
        let t = &two.fit.trace;
        if t.hit_n_cap {
            diagnostics.push("the abundance estimate reached the search cap".into());
        }
        if t.boundary_omega {
            diagnostics.push("omega estimate on the boundary 1".into());
        }
        if let Some(v) = var {
            diagnostics.extend(v.diagnostics.iter().cloned());
        }
        FitReport {
            n_captured: two.dataset.n(),
            n_complete: two.dataset.m(),
            missingness,
            estimates,
            loglik: two.fit.loglik,
            converged: two.fit.converged,
            sigma2: var.map(|v| v.sigma2),
            scale: var.map(|v| v.scale),
            iterations: t.iterations,
            gradient_norm: t.gradient_norm,
            termination: t.termination.clone(),
            hit_n_cap: t.hit_n_cap,
            boundary_omega: t.boundary_omega,
            diagnostics,
        }
    }
}

impl Rows for FitReport {
    fn rows(&self) -> Vec<(String, String)> {
        let mut rows = vec![
            ("n_captured".into(), self.n_captured.to_string()),
            ("n_complete".into(), self.n_complete.to_string()),
        ];
        for e in self.missingness.iter().chain(&self.estimates) {
            rows.push((e.name.clone(), e.value.to_string()));
            if let Some(se) = e.se {
                rows.push((format!("se_{}", e.name), se.to_string()));
            }
        }
        rows.push(("loglik".into(), self.loglik.to_string()));
        rows.push(("converged".into(), self.converged.to_string()));
        if let Some(s) = self.scale {
            rows.push(("scale".into(), s.to_string()));
        }
        for (i, d) in self.diagnostics.iter().enumerate() {
            rows.push((format!("diagnostic{i}"), d.clone()));
        }
        rows
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CiReport {
    pub fit: FitReport,
    pub interval: ConfidenceInterval,
}

impl Rows for CiReport {
    fn rows(&self) -> Vec<(String, String)> {
        let mut rows = self.fit.rows();
        let ci = &self.interval;
        rows.push(("ci_level".into(), ci.level.to_string()));
        rows.push(("ci_lower".into(), ci.lower.to_string()));
        rows.push(("ci_upper".into(), ci.upper.to_string()));
        rows.push(("ci_lower_clipped".into(), ci.lower_clipped.to_string()));
        rows.push(("ci_unbounded_above".into(), ci.unbounded_above.to_string()));
        rows
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TestReport {
    /// Fit under `omega = 1`, without standard errors.
    pub fit: FitReport,
    pub statistic: f64,
    pub p_value: f64,
    pub u_s: f64,
    pub sigma_s2: f64,
    pub bootstrap: usize,
    pub bootstrap_failed: usize,
    pub level: f64,
    pub decision: String,
}

impl TestReport {
    pub fn new(fit: FitReport, t: &ScoreTestResult, level: f64) -> Self {
        TestReport {
            fit,
            statistic: t.statistic,
            p_value: t.p_value,
            u_s: t.u_s,
            sigma_s2: t.sigma_s2,
            bootstrap: t.bootstrap,
            bootstrap_failed: t.bootstrap_failed,
            level,
            decision: if t.rejects(level) { "reject" } else { "fail to reject" }.into(),
        }
    }
}

impl Rows for TestReport {
    fn rows(&self) -> Vec<(String, String)> {
        let mut rows = self.fit.rows();
        rows.push(("statistic".into(), self.statistic.to_string()));
        rows.push(("p_value".into(), self.p_value.to_string()));
        rows.push(("u_s".into(), self.u_s.to_string()));
        rows.push(("sigma_s2".into(), self.sigma_s2.to_string()));
        rows.push(("bootstrap".into(), self.bootstrap.to_string()));
        rows.push(("bootstrap_failed".into(), self.bootstrap_failed.to_string()));
        rows.push(("level".into(), self.level.to_string()));
        rows.push(("decision".into(), self.decision.clone()));
        rows
    }
}
