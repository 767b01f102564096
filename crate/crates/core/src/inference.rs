//! Estimation of the regular parameters `(β, γ_1..γ_m)` for fixed irregular
//! parameters `(r_j, q_j, s_j)`.
//!
//! * [`fit_pseudo`]: counting-weight quadrature, weighted Poisson GLM with
//!   responses `z_k / w_k` and offset `log μ`.
//! * [`fit_logistic_likelihood`]: Poisson dummies of intensity `ρ`, logistic
//!   regression of the data indicator with offset `log(μ / ρ)`.
//! * [`profile_pseudo`]: pseudo-likelihood maximised over a candidate list
//!   of irregular parameters.
//!
//! Both fits use `S(u, x \ u)` as covariates, so data rows measure the change
//! caused by the event itself.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{EventPoint, PointPattern};
use crate::glm::{self, GlmFit, GlmProblem, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::model::{GeyerModel, InteractionState, ScaleShape, TrendFunction};
use crate::quadrature::{self, GridSpec, QuadratureGrid, QuadratureScheme};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IrregularParams {
    pub scales: Vec<ScaleShape>,
}

impl IrregularParams {
    pub fn new(scales: Vec<ScaleShape>) -> Result<Self> {
        let p = IrregularParams { scales };
        p.validate()?;
        Ok(p)
    }

    pub fn of_model(model: &GeyerModel) -> Self {
        IrregularParams { scales: model.shapes() }
    }

    pub fn validate(&self) -> Result<()> {
        for (j, s) in self.scales.iter().enumerate() {
            s.validate()
                .map_err(|e| Error::InvalidParameter(format!("scale {}: {e}", j + 1)))?;
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        self.scales
            .iter()
            .map(|s| format!("({},{},{})", s.r, s.q, s.s))
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Pseudo,
    Logistic,
}

impl FitMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitMethod::Pseudo => "pseudo",
            FitMethod::Logistic => "logistic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: FitMethod,
    pub irregular: IrregularParams,
    pub beta_hat: f64,
    pub gamma_hat: Vec<f64>,
    /// `log γ̂_j`; `-inf` for scales in `boundary`.
    #[serde(with = "extended_reals")]
    pub theta_hat: Vec<f64>,
    /// Scales (0-based) whose estimate is `γ̂_j = 0`: no event has a
    /// neighbour at that scale while some dummy point does.
    #[serde(default)]
    pub boundary: Vec<usize>,
    /// Fitted GLM intercept; `log β̂` up to the constant-offset shift.
    pub intercept: f64,
    /// Approximate log pseudo-likelihood at the optimum (pseudo method only).
    pub log_pseudo_likelihood: Option<f64>,
    pub n_points: usize,
    pub n_dummy: usize,
    pub glm: GlmFit,
}

impl FitResult {
    pub fn converged(&self) -> bool {
        self.glm.converged
    }
}

/// A GLM problem together with the quadrature it came from.
#[derive(Debug, Clone)]
pub struct RegressionSetup {
    pub scheme: QuadratureScheme,
    /// Sufficient statistics, one row per quadrature point.
    pub statistics: DMatrix<f64>,
    pub problem: GlmProblem,
    /// Quadrature rows kept in `problem` (rows with `μ = 0` are dropped).
    pub rows: Vec<usize>,
}

fn require_points(pattern: &PointPattern) -> Result<()> {
    if pattern.is_empty() {
        return Err(Error::Estimation("cannot fit a model to an empty pattern".into()));
    }
    Ok(())
}

fn with_intercept(stats: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let m = stats.ncols();
    let mut x = DMatrix::from_element(rows.len(), m + 1, 1.0);
    for (r, &k) in rows.iter().enumerate() {
        for j in 0..m {
            x[(r, j + 1)] = stats[(k, j)];
        }
    }
    x
}

/// Rows with finite offsets; a data event with `μ = 0` is an error.
fn usable_rows(scheme: &QuadratureScheme) -> Result<Vec<usize>> {
    let mut rows = Vec::with_capacity(scheme.len());
    for k in 0..scheme.len() {
        if scheme.offsets[k].is_finite() {
            rows.push(k);
        } else if scheme.is_data[k] {
            let p = scheme.points[k];
            return Err(Error::Estimation(format!(
                "event ({}, {}, {}) lies where the trend vanishes",
                p.x, p.y, p.t
            )));
        }
    }
    Ok(rows)
}

/// Weighted Poisson regression built on a counting-weight scheme.
pub fn pseudo_setup(
    pattern: &PointPattern,
    irregular: &IrregularParams,
    trend_mu: &TrendFunction,
    grid: GridSpec,
) -> Result<RegressionSetup> {
    require_points(pattern)?;
    irregular.validate()?;
    let g = grid.resolve(pattern.window(), pattern.len(), &irregular.scales);
    let scheme = quadrature::counting_weights(pattern, g, trend_mu)?;
    let statistics = quadrature::design_matrix(&irregular.scales, &scheme, pattern)?;
    let rows = usable_rows(&scheme)?;
    let x = with_intercept(&statistics, &rows);
    let y = DVector::from_iterator(
        rows.len(),
        rows.iter()
            .map(|&k| if scheme.is_data[k] { 1.0 / scheme.weights[k] } else { 0.0 }),
    );
    let w = DVector::from_iterator(rows.len(), rows.iter().map(|&k| scheme.weights[k]));
    let off = DVector::from_iterator(rows.len(), rows.iter().map(|&k| scheme.offsets[k]));
    let problem = GlmProblem::new(y, x, w, off)?;
    Ok(RegressionSetup {
        scheme,
        statistics,
        problem,
        rows,
    })
}

/// Logistic regression of data against Poisson(`rho`) dummies. With a
/// constant trend the offset `log(μ/ρ)` is constant and is left out of the
/// problem; [`fit_logistic_likelihood`] undoes the shift.
pub fn logistic_setup<R: Rng + ?Sized>(
    pattern: &PointPattern,
    irregular: &IrregularParams,
    trend_mu: &TrendFunction,
    rho: f64,
    rng: &mut R,
) -> Result<RegressionSetup> {
    require_points(pattern)?;
    irregular.validate()?;
    let scheme = quadrature::poisson_dummies(pattern, rho, trend_mu, rng)?;
    if scheme.n_dummy() == 0 {
        return Err(Error::Estimation(format!(
            "no dummy points were drawn at rho = {rho}; increase rho"
        )));
    }
    let statistics = quadrature::design_matrix(&irregular.scales, &scheme, pattern)?;
    let rows = usable_rows(&scheme)?;
    let x = with_intercept(&statistics, &rows);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&k| scheme.is_data[k] as u8 as f64));
    let off = if trend_mu.is_constant() {
        DVector::zeros(rows.len())
    } else {
        DVector::from_iterator(rows.len(), rows.iter().map(|&k| scheme.offsets[k]))
    };
    let problem = GlmProblem::unweighted(y, x, off)?;
    Ok(RegressionSetup {
        scheme,
        statistics,
        problem,
        rows,
    })
}

/// Non-finite entries are written as strings (`"-inf"`).
mod extended_reals {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|&x| {
            if x.is_finite() {
                Repr::Num(x)
            } else {
                Repr::Text(x.to_string())
            }
        }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Repr>::deserialize(d)?
            .into_iter()
            .map(|r| match r {
                Repr::Num(x) => Ok(x),
                Repr::Text(t) => t.parse::<f64>().map_err(serde::de::Error::custom),
            })
            .collect()
    }
}

/// Interaction scales whose estimate sits on the boundary `γ_j = 0`: every
/// data row has `S_j = 0` while some dummy row has `S_j > 0`. Because
/// `S_j ≥ 0`, both objectives then increase monotonically as `θ_j → -∞`.
pub fn boundary_scales(setup: &RegressionSetup) -> Vec<usize> {
    let x = &setup.problem.design;
    (1..x.ncols())
        .filter(|&c| {
            let mut data_pos = false;
            let mut dummy_pos = false;
            for (r, &k) in setup.rows.iter().enumerate() {
                if x[(r, c)] > 0.0 {
                    if setup.scheme.is_data[k] {
                        data_pos = true;
                    } else {
                        dummy_pos = true;
                    }
                }
            }
            !data_pos && dummy_pos
        })
        .map(|c| c - 1)
        .collect()
}

/// The problem without the boundary columns.
fn reduced_problem(problem: &GlmProblem, boundary: &[usize]) -> Result<GlmProblem> {
    if boundary.is_empty() {
        return Ok(problem.clone());
    }
    let keep: Vec<usize> = (0..problem.design.ncols())
        .filter(|c| *c == 0 || !boundary.contains(&(c - 1)))
        .collect();
    let design = problem.design.select_columns(&keep);
    GlmProblem::new(
        problem.response.clone(),
        design,
        problem.weights.clone(),
        problem.offset.clone(),
    )
}

fn fit_with_boundary(
    setup: &RegressionSetup,
    fitter: fn(&GlmProblem, f64, usize) -> Result<GlmFit>,
    opts: &FitOptions,
) -> Result<(GlmFit, Vec<usize>)> {
    let boundary = boundary_scales(setup);
    let problem = reduced_problem(&setup.problem, &boundary)?;
    let mut fit = fitter(&problem, opts.tol, opts.max_iter)?;
    for j in &boundary {
        fit.diagnostics.push(format!(
            "scale {}: no event has a neighbour, estimate on the boundary gamma = 0",
            j + 1
        ));
    }
    Ok((fit, boundary))
}

fn assemble(
    method: FitMethod,
    irregular: &IrregularParams,
    setup: &RegressionSetup,
    glm: GlmFit,
    boundary: Vec<usize>,
    intercept_shift: f64,
) -> FitResult {
    let intercept = glm.coefficients[0];
    let m = irregular.scales.len();
    let mut free = glm.coefficients[1..].iter();
    let theta_hat: Vec<f64> = (0..m)
        .map(|j| {
            if boundary.contains(&j) {
                f64::NEG_INFINITY
            } else {
                *free.next().expect("one coefficient per free scale")
            }
        })
        .collect();
    FitResult {
        method,
        irregular: irregular.clone(),
        beta_hat: (intercept + intercept_shift).exp(),
        gamma_hat: theta_hat.iter().map(|t| t.exp()).collect(),
        theta_hat,
        boundary,
        intercept,
        log_pseudo_likelihood: match method {
            FitMethod::Pseudo => Some(glm.objective),
            FitMethod::Logistic => None,
        },
        n_points: setup.scheme.n_data,
        n_dummy: setup.scheme.n_dummy(),
        glm,
    }
}

/// Maximum pseudo-likelihood estimate by the Berman-Turner device.
pub fn fit_pseudo(
    pattern: &PointPattern,
    irregular: &IrregularParams,
    trend_mu: &TrendFunction,
    grid: GridSpec,
    opts: &FitOptions,
) -> Result<FitResult> {
    let setup = pseudo_setup(pattern, irregular, trend_mu, grid)?;
    let (glm, boundary) = fit_with_boundary(&setup, glm::fit_poisson, opts)?;
    Ok(assemble(FitMethod::Pseudo, irregular, &setup, glm, boundary, 0.0))
}

/// Logistic likelihood estimate with Poisson(`rho`) dummy points.
pub fn fit_logistic_likelihood<R: Rng + ?Sized>(
    pattern: &PointPattern,
    irregular: &IrregularParams,
    trend_mu: &TrendFunction,
    rho: f64,
    rng: &mut R,
    opts: &FitOptions,
) -> Result<FitResult> {
    let setup = logistic_setup(pattern, irregular, trend_mu, rho, rng)?;
    let (glm, boundary) = fit_with_boundary(&setup, glm::fit_logistic, opts)?;
    // β̂ = (ρ / μ) exp(θ̂_0) when the offset was dropped.
    let shift = if trend_mu.is_constant() {
        rho.ln() - trend_mu.mu(pattern.window(), &pattern.points()[0]).ln()
    } else {
        0.0
    };
    Ok(assemble(FitMethod::Logistic, irregular, &setup, glm, boundary, shift))
}

/// The dummy intensity `4 n(x) / |W|`.
pub fn default_rho(pattern: &PointPattern) -> f64 {
    4.0 * pattern.len() as f64 / pattern.window().volume()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub candidate: usize,
    pub irregular: IrregularParams,
    pub log_pseudo_likelihood: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileResult {
    pub best_index: usize,
    pub best: IrregularParams,
    pub fit: FitResult,
    pub table: Vec<ProfileRow>,
}

impl ProfileResult {
    /// `candidate,scales,log_pseudo_likelihood,converged,selected,error`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        wr.write_record(["candidate", "scales", "log_pseudo_likelihood", "converged", "selected", "error"])
            .map_err(io)?;
        for row in &self.table {
            wr.write_record([
                row.candidate.to_string(),
                row.irregular.describe(),
                row.log_pseudo_likelihood.map(|v| v.to_string()).unwrap_or_default(),
                row.converged.to_string(),
                (row.candidate == self.best_index).to_string(),
                row.error.clone().unwrap_or_default(),
            ])
            .map_err(io)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Fits every candidate and keeps the one with the largest log
/// pseudo-likelihood; ties go to the earliest candidate.
pub fn profile_pseudo(
    pattern: &PointPattern,
    candidates: &[IrregularParams],
    trend_mu: &TrendFunction,
    grid: GridSpec,
    opts: &FitOptions,
) -> Result<ProfileResult> {
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("profile needs at least one candidate".into()));
    }
    let mut table = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, FitResult)> = None;
    for (i, cand) in candidates.iter().enumerate() {
        match fit_pseudo(pattern, cand, trend_mu, grid, opts) {
            Ok(fit) => {
                let lpl = fit.log_pseudo_likelihood;
                let converged = fit.converged();
                table.push(ProfileRow {
                    candidate: i,
                    irregular: cand.clone(),
                    log_pseudo_likelihood: lpl,
                    converged,
                    error: (!converged).then(|| fit.glm.diagnostics.join("; ")),
                });
                if converged {
                    let better = match &best {
                        None => true,
                        Some((_, b)) => lpl > b.log_pseudo_likelihood,
                    };
                    if better {
                        best = Some((i, fit));
                    }
                }
            }
            Err(e) => table.push(ProfileRow {
                candidate: i,
                irregular: cand.clone(),
                log_pseudo_likelihood: None,
                converged: false,
                error: Some(e.to_string()),
            }),
        }
    }
    match best {
        Some((best_index, fit)) => Ok(ProfileResult {
            best_index,
            best: candidates[best_index].clone(),
            fit,
            table,
        }),
        None => {
            let detail = table
                .iter()
                .map(|r| format!("candidate {}: {}", r.candidate, r.error.clone().unwrap_or_default()))
                .collect::<Vec<_>>()
                .join("; ");
            Err(Error::Estimation(format!("no candidate converged ({detail})")))
        }
    }
}

/// The two sides of the empirical GNZ identity for a test function `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnzTerms {
    /// `Σ_{x_i} h(x_i, x \ x_i)`.
    pub sum: f64,
    /// `Σ_k w_k h(u_k, x) λ(u_k | x)`.
    pub integral: f64,
}

impl GnzTerms {
    pub fn residual(&self) -> f64 {
        self.sum - self.integral
    }
}

/// Test function `h(u, x, excluded)`: `excluded = Some(i)` means the
/// configuration is `x` without event `i`.
pub trait GnzTestFn: Fn(&EventPoint, &PointPattern, Option<usize>) -> f64 {}
impl<F: Fn(&EventPoint, &PointPattern, Option<usize>) -> f64> GnzTestFn for F {}

pub fn gnz_terms<F: GnzTestFn>(
    model: &GeyerModel,
    pattern: &PointPattern,
    h: F,
    grid: QuadratureGrid,
) -> Result<GnzTerms> {
    model.validate()?;
    if pattern.window() != &model.window {
        return Err(Error::Contract("pattern window differs from model window".into()));
    }
    let scheme = quadrature::counting_weights(pattern, grid, &model.trend)?;
    let st = InteractionState::from_pattern(pattern, model.shapes())?;
    let zero_trend = pattern
        .points()
        .iter()
        .filter(|p| model.trend.lambda(&model.window, p) <= 0.0)
        .count();
    let mut stats = vec![0.0; model.scales.len()];
    let sum: f64 = pattern
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| h(p, pattern, Some(i)))
        .sum();
    let mut integral = 0.0;
    for k in 0..scheme.len() {
        let u = &scheme.points[k];
        let log_lam = if k < scheme.n_data {
            if zero_trend > 0 {
                f64::NEG_INFINITY
            } else {
                st.member_stats(k, &mut stats);
                model.log_intensity_from_stats(u, &stats)
            }
        } else if zero_trend > 0 {
            f64::NEG_INFINITY
        } else {
            st.birth_stats(u, &mut stats);
            model.log_intensity_from_stats(u, &stats)
        };
        if log_lam == f64::NEG_INFINITY {
            continue;
        }
        integral += scheme.weights[k] * h(u, pattern, None) * log_lam.exp();
    }
    Ok(GnzTerms { sum, integral })
}

/// Empirical GNZ discrepancy; zero in expectation under the true model.
pub fn gnz_residual<F: GnzTestFn>(
    model: &GeyerModel,
    pattern: &PointPattern,
    h: F,
    grid: QuadratureGrid,
) -> Result<f64> {
    Ok(gnz_terms(model, pattern, h, grid)?.residual())
}

/// `h ≡ 1`.
pub fn unit_test_fn(_: &EventPoint, _: &PointPattern, _: Option<usize>) -> f64 {
    1.0
}
