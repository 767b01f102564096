//! Weighted Poisson log-linear and Bernoulli logistic regression by Newton's
//! method (IRLS for canonical links) with step halving.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 30;
const DIVERGENCE_BOUND: f64 = 50.0;
const INIT_EPS: f64 = 1e-10;
const RIDGE_FACTOR: f64 = 1e-10;
const COLLINEAR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Poisson,
    Bernoulli,
}

/// Response, design (leading intercept column by convention), prior weights
/// and offset of a GLM with canonical link.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmProblem {
    pub response: DVector<f64>,
    pub design: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub offset: DVector<f64>,
}

impl GlmProblem {
    pub fn new(
        response: DVector<f64>,
        design: DMatrix<f64>,
        weights: DVector<f64>,
        offset: DVector<f64>,
    ) -> Result<Self> {
        let p = design.nrows();
        if response.len() != p || weights.len() != p || offset.len() != p {
            return Err(Error::Contract(format!(
                "GLM dimensions disagree: design {}x{}, response {}, weights {}, offset {}",
                p,
                design.ncols(),
                response.len(),
                weights.len(),
                offset.len()
            )));
        }
        if p == 0 || design.ncols() == 0 {
            return Err(Error::Contract("GLM problem has no rows or no columns".into()));
        }
        if design.iter().chain(response.iter()).chain(offset.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Contract("GLM problem contains non-finite entries".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Contract("GLM weights must be positive and finite".into()));
        }
        Ok(GlmProblem {
            response,
            design,
            weights,
            offset,
        })
    }

    /// Unit weights.
    pub fn unweighted(response: DVector<f64>, design: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        let w = DVector::from_element(response.len(), 1.0);
        Self::new(response, design, w, offset)
    }

    pub fn n_coefficients(&self) -> usize {
        self.design.ncols()
    }

    pub fn linear_predictor(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.design * theta + &self.offset
    }

    /// Index of the first column linearly dependent on earlier ones.
    pub fn collinear_column(&self) -> Option<usize> {
        let mut basis: Vec<DVector<f64>> = Vec::new();
        for j in 0..self.design.ncols() {
            let col = self.design.column(j).into_owned();
            let norm = col.norm();
            if norm == 0.0 {
                return Some(j);
            }
            let mut v = col;
            for q in &basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
            let r = v.norm();
            if r <= COLLINEAR_TOL * norm {
                return Some(j);
            }
            basis.push(v / r);
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub family: Family,
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub deviance: f64,
    /// Max-norm of the score at `coefficients`.
    pub gradient_norm: f64,
    /// Inverse of the observed information at `coefficients`.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub ridge_used: bool,
    pub diagnostics: Vec<String>,
}

impl GlmFit {
    pub fn standard_errors(&self) -> Vec<f64> {
        match &self.covariance {
            Some(c) => (0..self.coefficients.len()).map(|i| c[i][i].max(0.0).sqrt()).collect(),
            None => vec![f64::NAN; self.coefficients.len()],
        }
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// The maximised log-likelihood:
/// Poisson `Σ w (y η - e^η)`, Bernoulli `Σ w (y η - log(1 + e^η))`.
pub fn objective(family: Family, problem: &GlmProblem, theta: &DVector<f64>) -> f64 {
    let eta = problem.linear_predictor(theta);
    let mut total = 0.0;
    for k in 0..eta.len() {
        let (y, w, e) = (problem.response[k], problem.weights[k], eta[k]);
        total += w * match family {
            Family::Poisson => y * e - e.exp(),
            Family::Bernoulli => y * e - softplus(e),
        };
    }
    total
}

/// Score and observed information at `theta`.
pub fn score_and_information(
    family: Family,
    problem: &GlmProblem,
    theta: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let eta = problem.linear_predictor(theta);
    let n = problem.design.ncols();
    let mut resid = DVector::zeros(eta.len());
    let mut curv = DVector::zeros(eta.len());
    for k in 0..eta.len() {
        let w = problem.weights[k];
        let (mean, var) = match family {
            Family::Poisson => {
                let m = eta[k].exp();
                (m, m)
            }
            Family::Bernoulli => {
                let p = sigmoid(eta[k]);
                (p, p * (1.0 - p))
            }
        };
        resid[k] = w * (problem.response[k] - mean);
        curv[k] = w * var;
    }
    let x = &problem.design;
    let grad = x.transpose() * resid;
    let mut info = DMatrix::zeros(n, n);
    for k in 0..x.nrows() {
        let c = curv[k];
        if c == 0.0 {
            continue;
        }
        for a in 0..n {
            let xa = x[(k, a)] * c;
            if xa == 0.0 {
                continue;
            }
            for b in 0..=a {
                info[(a, b)] += xa * x[(k, b)];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            info[(b, a)] = info[(a, b)];
        }
    }
    (grad, info)
}

fn deviance(family: Family, problem: &GlmProblem, theta: &DVector<f64>) -> f64 {
    let eta = problem.linear_predictor(theta);
    let mut d = 0.0;
    for k in 0..eta.len() {
        let (y, w) = (problem.response[k], problem.weights[k]);
        d += w * match family {
            Family::Poisson => {
                let mu = eta[k].exp();
                let ylog = if y > 0.0 { y * (y / mu).ln() } else { 0.0 };
                2.0 * (ylog - (y - mu))
            }
            Family::Bernoulli => 2.0 * (softplus(eta[k]) - y * eta[k]),
        };
    }
    d
}

/// Cholesky factor of `m`, retrying once with a `1e-10 · trace` ridge.
fn factor(m: &DMatrix<f64>) -> Option<(Cholesky<f64, nalgebra::Dyn>, bool)> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some((c, false));
    }
    let ridge = RIDGE_FACTOR * m.trace().abs().max(f64::MIN_POSITIVE);
    let mut r = m.clone();
    for i in 0..r.nrows() {
        r[(i, i)] += ridge;
    }
    Cholesky::new(r).map(|c| (c, true))
}

fn initial_theta(family: Family, problem: &GlmProblem) -> DVector<f64> {
    let mut theta = DVector::zeros(problem.n_coefficients());
    let has_intercept = problem.design.column(0).iter().all(|&v| v == 1.0);
    if has_intercept {
        let wsum: f64 = problem.weights.sum();
        let mean = problem.weights.dot(&problem.response) / wsum;
        theta[0] = match family {
            Family::Poisson => (mean + INIT_EPS).ln(),
            Family::Bernoulli => {
                let p = mean.clamp(INIT_EPS, 1.0 - INIT_EPS);
                (p / (1.0 - p)).ln()
            }
        };
    }
    theta
}

fn fit(family: Family, problem: &GlmProblem, tol: f64, max_iter: usize) -> Result<GlmFit> {
    if tol.is_nan() || tol <= 0.0 || max_iter == 0 {
        return Err(Error::InvalidParameter("tol and max_iter must be positive".into()));
    }
    if let Some(column) = problem.collinear_column() {
        return Err(Error::RankDeficient { column });
    }
    let mut diagnostics = Vec::new();
    let mut ridge_used = false;
    let mut theta = initial_theta(family, problem);
    let mut obj = objective(family, problem, &theta);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let (grad, info) = score_and_information(family, problem, &theta);
        let gnorm = grad.amax();
        let Some((chol, ridged)) = factor(&info) else {
            diagnostics.push(format!("iteration {iterations}: information matrix not factorisable"));
            break;
        };
        if ridged && !ridge_used {
            diagnostics.push(format!("iteration {iterations}: ridge fallback used in Newton solve"));
        }
        ridge_used |= ridged;
        let step = chol.solve(&grad);

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = &theta + &step * t;
            let c_obj = objective(family, problem, &cand);
            if c_obj.is_finite() && c_obj >= obj - 1e-12 * (1.0 + obj.abs()) {
                accepted = Some((cand, c_obj));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, c_obj)) = accepted else {
            if gnorm <= tol * (1.0 + obj.abs()) {
                converged = true;
            } else {
                diagnostics.push(format!("iteration {iterations}: step halving failed to improve objective"));
            }
            break;
        };
        let rel = (c_obj - obj).abs() / (1.0 + obj.abs());
        theta = cand;
        obj = c_obj;
        if theta.iter().any(|v| v.abs() > DIVERGENCE_BOUND) {
            diagnostics.push(format!(
                "iteration {iterations}: coefficient magnitude exceeded {DIVERGENCE_BOUND} (possible separation)"
            ));
            break;
        }
        // Under separation the score vanishes while Newton steps stay large.
        let step_norm = step.amax() * t;
        if gnorm <= tol * (1.0 + obj.abs()) && rel <= tol && step_norm <= tol.sqrt() * (1.0 + theta.amax()) {
            converged = true;
            break;
        }
    }
    if !converged && iterations >= max_iter && diagnostics.is_empty() {
        diagnostics.push(format!("no convergence after {max_iter} iterations"));
    }

    let (grad, info) = score_and_information(family, problem, &theta);
    let n = problem.n_coefficients();
    let covariance = match factor(&info) {
        Some((chol, ridged)) => {
            ridge_used |= ridged;
            let inv = chol.inverse();
            Some((0..n).map(|i| (0..n).map(|j| inv[(i, j)]).collect()).collect())
        }
        None => {
            diagnostics.push("covariance unavailable: singular information".into());
            None
        }
    };
    Ok(GlmFit {
        family,
        coefficients: theta.iter().cloned().collect(),
        converged,
        iterations,
        objective: obj,
        deviance: deviance(family, problem, &theta),
        gradient_norm: grad.amax(),
        covariance,
        ridge_used,
        diagnostics,
    })
}

/// Maximises `Σ_k w_k (y_k η_k - exp(η_k))`.
pub fn fit_poisson(problem: &GlmProblem, tol: f64, max_iter: usize) -> Result<GlmFit> {
    if problem.response.iter().any(|&y| y < 0.0) {
        return Err(Error::Contract("Poisson responses must be non-negative".into()));
    }
    fit(Family::Poisson, problem, tol, max_iter)
}

/// Maximises `Σ_k w_k (y_k η_k - log(1 + exp(η_k)))` for `y_k ∈ {0, 1}`.
pub fn fit_logistic(problem: &GlmProblem, tol: f64, max_iter: usize) -> Result<GlmFit> {
    if problem.response.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Contract("logistic responses must be 0 or 1".into()));
    }
    fit(Family::Bernoulli, problem, tol, max_iter)
}
