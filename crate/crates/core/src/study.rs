//! Replicated simulation experiments comparing the pseudo-likelihood and
//! logistic-likelihood estimators.

use std::fmt::Write as _;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{self, FitMethod, FitOptions, IrregularParams};
use crate::model::GeyerModel;
use crate::quadrature::{GridSpec, QuadratureGrid};
use crate::simulate::{self, McmcConfig};

/// Studies with a larger failure fraction for any method are flagged.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

fn default_rho_factor() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default)]
    pub name: String,
    pub model: GeyerModel,
    pub n_replicates: usize,
    /// `seed` is replaced per replicate by one derived from `master_seed`.
    pub mcmc: McmcConfig,
    pub methods: Vec<FitMethod>,
    pub master_seed: u64,
    #[serde(default)]
    pub grid: GridSpec,
    /// Dummy intensity for the logistic method is `rho_factor * n / |W|`.
    #[serde(default = "default_rho_factor")]
    pub rho_factor: f64,
    #[serde(default)]
    pub fit: FitOptions,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.n_replicates == 0 {
            return Err(Error::InvalidParameter("n_replicates must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidParameter("methods must not be empty".into()));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(Error::InvalidParameter("methods contains duplicates".into()));
        }
        self.mcmc.validate()?;
        if let GridSpec::Fixed(g) = self.grid {
            g.validate()?;
        }
        if !(self.rho_factor > 0.0 && self.rho_factor.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "rho_factor {} must be positive",
                self.rho_factor
            )));
        }
        Ok(())
    }

    /// Chain seed of replicate `i`.
    pub fn chain_seed(&self, i: usize) -> u64 {
        simulate::derive_seed(self.master_seed, 2 * i as u64)
    }

    /// Seed for the logistic dummy points of replicate `i`.
    pub fn dummy_seed(&self, i: usize) -> u64 {
        simulate::derive_seed(self.master_seed, 2 * i as u64 + 1)
    }

    /// `(β, γ_1, .., γ_m)`.
    pub fn truth(&self) -> Vec<f64> {
        let mut v = vec![self.model.trend.beta()];
        v.extend(self.model.scales.iter().map(|s| s.gamma));
        v
    }
}

/// Names of the estimated parameters, `beta, gamma_1, ..`.
pub fn parameter_names(m: usize) -> Vec<String> {
    let mut v = vec!["beta".to_string()];
    v.extend((1..=m).map(|j| format!("gamma_{j}")));
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub replicate: usize,
    pub method: FitMethod,
    pub n_points: usize,
    /// `(β̂, γ̂_1, .., γ̂_m)`.
    pub values: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub replicate: usize,
    /// `None` when the simulation itself failed.
    pub method: Option<FitMethod>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: FitMethod,
    pub n_used: usize,
    pub n_failed: usize,
    pub rmse: Vec<f64>,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub name: String,
    pub n_replicates: usize,
    pub methods: Vec<FitMethod>,
    pub parameters: Vec<String>,
    pub truth: Vec<f64>,
    pub estimates: Vec<Estimate>,
    pub failures: Vec<Failure>,
    pub summaries: Vec<MethodSummary>,
    pub comparable: bool,
}

struct ReplicateOutcome {
    estimates: Vec<Estimate>,
    failures: Vec<Failure>,
}

fn run_replicate(config: &StudyConfig, irregular: &IrregularParams, i: usize) -> ReplicateOutcome {
    let mut out = ReplicateOutcome {
        estimates: Vec::new(),
        failures: Vec::new(),
    };
    let mut mcmc = config.mcmc.clone();
    mcmc.seed = config.chain_seed(i);
    let pattern = match simulate::run_chain(&config.model, &mcmc) {
        Ok(t) => t.final_pattern,
        Err(e) => {
            out.failures.push(Failure {
                replicate: i,
                method: None,
                message: e.to_string(),
            });
            return out;
        }
    };
    let mu = &config.model.trend;
    for &method in &config.methods {
        let fit = match method {
            FitMethod::Pseudo => inference::fit_pseudo(&pattern, irregular, mu, config.grid, &config.fit),
            FitMethod::Logistic => {
                let mut rng = ChaCha8Rng::seed_from_u64(config.dummy_seed(i));
                let rho = config.rho_factor * pattern.len() as f64 / pattern.window().volume();
                inference::fit_logistic_likelihood(&pattern, irregular, mu, rho, &mut rng, &config.fit)
            }
        };
        match fit {
            Ok(f) if f.converged() => {
                let mut values = vec![f.beta_hat];
                values.extend(&f.gamma_hat);
                out.estimates.push(Estimate {
                    replicate: i,
                    method,
                    n_points: pattern.len(),
                    values,
                    iterations: f.glm.iterations,
                });
            }
            Ok(f) => out.failures.push(Failure {
                replicate: i,
                method: Some(method),
                message: format!("did not converge: {}", f.glm.diagnostics.join("; ")),
            }),
            Err(e) => out.failures.push(Failure {
                replicate: i,
                method: Some(method),
                message: e.to_string(),
            }),
        }
    }
    out
}

/// Simulates `n_replicates` patterns from the truth and fits each with every
/// configured method, using the true irregular parameters.
pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let irregular = IrregularParams::of_model(&config.model);
    let outcomes: Vec<ReplicateOutcome> = (0..config.n_replicates)
        .into_par_iter()
        .map(|i| run_replicate(config, &irregular, i))
        .collect();
    let mut estimates = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        estimates.extend(o.estimates);
        failures.extend(o.failures);
    }
    for f in &failures {
        eprintln!(
            "replicate {} ({}): {}",
            f.replicate,
            f.method.map(|m| m.as_str()).unwrap_or("simulation"),
            f.message
        );
    }
    let mut report = StudyReport {
        name: config.name.clone(),
        n_replicates: config.n_replicates,
        methods: config.methods.clone(),
        parameters: parameter_names(config.model.scales.len()),
        truth: config.truth(),
        estimates,
        failures,
        summaries: Vec::new(),
        comparable: true,
    };
    report.summaries = summarize(&report);
    report.comparable = report
        .methods
        .iter()
        .all(|&m| failed_count(&report, m) as f64 <= MAX_FAILURE_FRACTION * report.n_replicates as f64);
    Ok(report)
}

fn failed_count(report: &StudyReport, method: FitMethod) -> usize {
    report
        .failures
        .iter()
        .filter(|f| f.method.is_none() || f.method == Some(method))
        .count()
}

/// Per-method RMSE and mean over the recorded estimates.
pub fn summarize(report: &StudyReport) -> Vec<MethodSummary> {
    let p = report.truth.len();
    report
        .methods
        .iter()
        .map(|&method| {
            let rows: Vec<&Estimate> = report.estimates.iter().filter(|e| e.method == method).collect();
            let n = rows.len();
            let mut sq = vec![0.0; p];
            let mut sum = vec![0.0; p];
            for e in &rows {
                for j in 0..p {
                    let d = e.values[j] - report.truth[j];
                    sq[j] += d * d;
                    sum[j] += e.values[j];
                }
            }
            let (rmse, mean) = if n == 0 {
                (vec![f64::NAN; p], vec![f64::NAN; p])
            } else {
                (
                    sq.iter().map(|s| (s / n as f64).sqrt()).collect(),
                    sum.iter().map(|s| s / n as f64).collect(),
                )
            };
            MethodSummary {
                method,
                n_used: n,
                n_failed: failed_count(report, method),
                rmse,
                mean,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseTable {
    pub parameters: Vec<String>,
    pub methods: Vec<FitMethod>,
    /// `rmse[method][parameter]`.
    pub rmse: Vec<Vec<f64>>,
    pub n_used: Vec<usize>,
    pub n_failed: Vec<usize>,
    /// `best[parameter]` is the row with the smallest RMSE, if more than one
    /// method was run.
    pub best: Vec<Option<usize>>,
}

impl RmseTable {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<10}", "method");
        for p in &self.parameters {
            let _ = write!(s, " {p:>14}");
        }
        let _ = writeln!(s, " {:>6} {:>6}", "used", "failed");
        for (i, m) in self.methods.iter().enumerate() {
            let _ = write!(s, "{:<10}", m.as_str());
            for (j, v) in self.rmse[i].iter().enumerate() {
                let mark = if self.best[j] == Some(i) { "*" } else { " " };
                let _ = write!(s, " {:>13.4}{mark}", v);
            }
            let _ = writeln!(s, " {:>6} {:>6}", self.n_used[i], self.n_failed[i]);
        }
        if self.methods.len() > 1 {
            s.push_str("* lowest RMSE in the column\n");
        }
        s
    }

    /// `method,parameter,rmse,lowest,n_used,n_failed`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["method", "parameter", "rmse", "lowest", "n_used", "n_failed"])
            .map_err(csv_err)?;
        for (i, m) in self.methods.iter().enumerate() {
            for (j, p) in self.parameters.iter().enumerate() {
                wr.write_record([
                    m.as_str().to_string(),
                    p.clone(),
                    self.rmse[i][j].to_string(),
                    (self.best[j] == Some(i)).to_string(),
                    self.n_used[i].to_string(),
                    self.n_failed[i].to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// RMSE of every parameter under every method; an error when some method
/// has no usable replicate.
pub fn rmse_table(report: &StudyReport) -> Result<RmseTable> {
    if report.methods.is_empty() {
        return Err(Error::Estimation("report lists no methods".into()));
    }
    let summaries = summarize(report);
    if let Some(s) = summaries.iter().find(|s| s.n_used == 0) {
        return Err(Error::Estimation(format!(
            "no converged replicate for method {}",
            s.method.as_str()
        )));
    }
    let p = report.parameters.len();
    let rmse: Vec<Vec<f64>> = summaries.iter().map(|s| s.rmse.clone()).collect();
    let best = (0..p)
        .map(|j| {
            if rmse.len() < 2 {
                return None;
            }
            let mut b = 0;
            for i in 1..rmse.len() {
                if rmse[i][j] < rmse[b][j] {
                    b = i;
                }
            }
            Some(b)
        })
        .collect();
    Ok(RmseTable {
        parameters: report.parameters.clone(),
        methods: report.methods.clone(),
        n_used: summaries.iter().map(|s| s.n_used).collect(),
        n_failed: summaries.iter().map(|s| s.n_failed).collect(),
        rmse,
        best,
    })
}

/// `replicate,method,n_points,beta,gamma_1,..,iterations`, sorted by
/// replicate then method.
pub fn write_estimates_csv<W: Write>(report: &StudyReport, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["replicate".to_string(), "method".into(), "n_points".into()];
    header.extend(report.parameters.iter().cloned());
    header.push("iterations".into());
    wr.write_record(&header).map_err(csv_err)?;
    for e in &report.estimates {
        let mut rec = vec![e.replicate.to_string(), e.method.as_str().to_string(), e.n_points.to_string()];
        rec.extend(e.values.iter().map(|v| v.to_string()));
        rec.push(e.iterations.to_string());
        wr.write_record(&rec).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// Wide layout, one row per replicate and one `<method>_<parameter>` column
/// per estimate; the first row holds the true values.
pub fn write_boxplot_csv<W: Write>(report: &StudyReport, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["replicate".to_string()];
    for m in &report.methods {
        for p in &report.parameters {
            header.push(format!("{}_{p}", m.as_str()));
        }
    }
    wr.write_record(&header).map_err(csv_err)?;
    let mut truth = vec!["truth".to_string()];
    for _ in &report.methods {
        truth.extend(report.truth.iter().map(|v| v.to_string()));
    }
    wr.write_record(&truth).map_err(csv_err)?;
    for i in 0..report.n_replicates {
        let mut rec = vec![i.to_string()];
        for m in &report.methods {
            match report.estimates.iter().find(|e| e.replicate == i && e.method == *m) {
                Some(e) => rec.extend(e.values.iter().map(|v| v.to_string())),
                None => rec.extend(std::iter::repeat_n(String::new(), report.parameters.len())),
            }
        }
        wr.write_record(&rec).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One panel per parameter with a box per method and a dashed line at the
/// true value.
pub fn boxplot_svg(report: &StudyReport) -> String {
    const PW: f64 = 180.0;
    const PH: f64 = 220.0;
    const PAD: f64 = 40.0;
    let np = report.parameters.len();
    let width = PAD + np as f64 * (PW + PAD);
    let height = PH + 2.0 * PAD;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    for (j, name) in report.parameters.iter().enumerate() {
        let x0 = PAD + j as f64 * (PW + PAD);
        let y0 = PAD;
        let series: Vec<Vec<f64>> = report
            .methods
            .iter()
            .map(|m| {
                let mut v: Vec<f64> = report
                    .estimates
                    .iter()
                    .filter(|e| e.method == *m)
                    .map(|e| e.values[j])
                    .filter(|v| v.is_finite())
                    .collect();
                v.sort_by(f64::total_cmp);
                v
            })
            .collect();
        let mut lo = report.truth[j];
        let mut hi = report.truth[j];
        for v in series.iter().filter(|v| !v.is_empty()) {
            lo = lo.min(v[0]);
            hi = hi.max(v[v.len() - 1]);
        }
        if hi <= lo {
            hi = lo + 1.0;
        }
        let span = hi - lo;
        lo -= 0.05 * span;
        hi += 0.05 * span;
        let ymap = |v: f64| y0 + PH * (hi - v) / (hi - lo);
        let _ = writeln!(
            s,
            r#"<rect x="{x0}" y="{y0}" width="{PW}" height="{PH}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{name}</text>"#,
            x0 + PW / 2.0,
            y0 - 10.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#, x0 - 3.0, y0 + 10.0, hi);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#, x0 - 3.0, y0 + PH, lo);
        let ty = ymap(report.truth[j]);
        let _ = writeln!(
            s,
            r#"<line x1="{x0}" y1="{ty}" x2="{}" y2="{ty}" stroke="red" stroke-dasharray="4,3"/>"#,
            x0 + PW
        );
        let slot = PW / series.len() as f64;
        for (i, v) in series.iter().enumerate() {
            let cx = x0 + slot * (i as f64 + 0.5);
            let _ = writeln!(
                s,
                r#"<text x="{cx}" y="{}" text-anchor="middle">{}</text>"#,
                y0 + PH + 15.0,
                report.methods[i].as_str()
            );
            if v.is_empty() {
                continue;
            }
            let (q1, q2, q3) = (quantile(v, 0.25), quantile(v, 0.5), quantile(v, 0.75));
            let bw = slot * 0.5;
            let _ = writeln!(
                s,
                r#"<line x1="{cx}" y1="{}" x2="{cx}" y2="{}" stroke="black"/>"#,
                ymap(v[0]),
                ymap(v[v.len() - 1])
            );
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{bw}" height="{}" fill="lightsteelblue" stroke="black"/>"#,
                cx - bw / 2.0,
                ymap(q3),
                ymap(q1) - ymap(q3)
            );
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{m}" x2="{}" y2="{m}" stroke="black" stroke-width="2"/>"#,
                cx - bw / 2.0,
                cx + bw / 2.0,
                m = ymap(q2)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Monte Carlo GNZ check with `h ≡ 1`: residuals under `eval` of patterns
/// simulated from `truth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnzSummary {
    pub n_patterns: usize,
    pub mean: f64,
    pub std_error: f64,
    /// `mean / std_error`.
    pub z: f64,
    pub within_3se: bool,
    pub residuals: Vec<f64>,
}

impl GnzSummary {
    pub fn from_residuals(residuals: Vec<f64>) -> Result<Self> {
        let n = residuals.len();
        if n < 2 {
            return Err(Error::InvalidParameter("GNZ summary needs at least two residuals".into()));
        }
        let mean = residuals.iter().sum::<f64>() / n as f64;
        let var = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std_error = (var / n as f64).sqrt();
        let z = mean / std_error;
        Ok(GnzSummary {
            n_patterns: n,
            mean,
            std_error,
            z,
            within_3se: mean.abs() <= 3.0 * std_error,
            residuals,
        })
    }
}

/// Pattern `i` comes from a chain seeded with `derive_seed(master_seed, i)`.
pub fn run_gnz_check(
    truth: &GeyerModel,
    eval: &GeyerModel,
    mcmc: &McmcConfig,
    n_patterns: usize,
    master_seed: u64,
    grid: QuadratureGrid,
) -> Result<GnzSummary> {
    truth.validate()?;
    eval.validate()?;
    mcmc.validate()?;
    grid.validate()?;
    let residuals: Vec<f64> = (0..n_patterns)
        .into_par_iter()
        .map(|i| {
            let mut c = mcmc.clone();
            c.seed = simulate::derive_seed(master_seed, i as u64);
            let pattern = simulate::run_chain(truth, &c)?.final_pattern;
            inference::gnz_residual(eval, &pattern, inference::unit_test_fn, grid)
        })
        .collect::<Result<_>>()?;
    GnzSummary::from_residuals(residuals)
}
