//! Levenberg–Marquardt for weighted nonlinear least squares with box
//! bounds (by projection) and fixed parameters.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A model evaluated at a fixed set of data points.
pub trait Model {
    fn param_names(&self) -> Vec<String>;
    fn n_points(&self) -> usize;
    /// Predictions at every data point.
    fn eval(&self, p: &[f64]) -> Vec<f64>;
    /// `∂prediction_i/∂p_j`, `n_points × n_params`.
    fn jacobian(&self, p: &[f64]) -> DMatrix<f64>;
}

/// Central finite-difference Jacobian with two Richardson steps, used by
/// tests and by models without an analytic one.
pub fn numeric_jacobian(model: &dyn Model, p: &[f64]) -> DMatrix<f64> {
    let n = model.n_points();
    let mut j = DMatrix::zeros(n, p.len());
    let mut q = p.to_vec();
    let mut central = |k: usize, h: f64| {
        q[k] = p[k] + h;
        let up = model.eval(&q);
        q[k] = p[k] - h;
        let down = model.eval(&q);
        q[k] = p[k];
        up.iter().zip(&down).map(|(u, d)| (u - d) / (2.0 * h)).collect::<Vec<f64>>()
    };
    for k in 0..p.len() {
        let h = if p[k] == 0.0 { 1e-6 } else { 1e-3 * p[k].abs() };
        let (d1, d2, d3) = (central(k, h), central(k, 0.5 * h), central(k, 0.25 * h));
        for i in 0..n {
            let r1 = (4.0 * d2[i] - d1[i]) / 3.0;
            let r2 = (4.0 * d3[i] - d2[i]) / 3.0;
            j[(i, k)] = (16.0 * r2 - r1) / 15.0;
        }
    }
    j
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Per-parameter lower bounds; empty means unbounded.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Parameters held at their initial value; empty means all free.
    pub fixed: Vec<bool>,
    pub max_iter: usize,
    /// Relative tolerance on the scaled gradient.
    pub gtol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { lower: Vec::new(), upper: Vec::new(), fixed: Vec::new(), max_iter: 500, gtol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub params: Vec<f64>,
    /// 1σ errors; zero for fixed parameters.
    pub errors: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub fixed: Vec<bool>,
    pub chi2: f64,
    pub chi2_red: f64,
    pub dof: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Largest scaled gradient component `|g_i| / √(JᵀJ)_ii` at the end.
    pub gradient_norm: f64,
    pub gradient_tolerance: f64,
    /// Weighted residuals `(y − f)/σ`.
    pub residuals: Vec<f64>,
    /// Objective after each accepted step, starting with the initial value.
    pub cost_history: Vec<f64>,
    pub warnings: Vec<String>,
}

/// JSON fit report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: String,
    pub params: BTreeMap<String, f64>,
    pub errors: BTreeMap<String, f64>,
    pub covariance: Vec<Vec<f64>>,
    pub chi2red: f64,
    pub converged: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.params[i])
    }

    pub fn error(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.errors[i])
    }

    pub fn report(&self, model: &str) -> FitReport {
        FitReport {
            model: model.to_string(),
            params: self.names.iter().cloned().zip(self.params.iter().cloned()).collect(),
            errors: self.names.iter().cloned().zip(self.errors.iter().cloned()).collect(),
            covariance: self.covariance.clone(),
            chi2red: self.chi2_red,
            converged: self.converged,
            warnings: self.warnings.clone(),
        }
    }
}

fn weighted_residuals(model: &dyn Model, y: &[f64], sigma: &[f64], p: &[f64]) -> Vec<f64> {
    model
        .eval(p)
        .iter()
        .zip(y.iter().zip(sigma))
        .map(|(f, (y, s))| (y - f) / s)
        .collect()
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Weighted Jacobian restricted to the free columns.
fn free_jacobian(model: &dyn Model, p: &[f64], sigma: &[f64], free: &[usize]) -> DMatrix<f64> {
    let full = model.jacobian(p);
    DMatrix::from_fn(sigma.len(), free.len(), |i, k| full[(i, free[k])] / sigma[i])
}

/// Fails with the unidentifiable direction when `JᵀJ` is numerically singular.
fn check_rank(a: &DMatrix<f64>, free: &[usize], names: &[String]) -> Result<()> {
    let n = free.len();
    for k in 0..n {
        if !(a[(k, k)] > 0.0) || !a[(k, k)].is_finite() {
            return Err(Error::RankDeficient { direction: names[free[k]].clone() });
        }
    }
    let d: Vec<f64> = (0..n).map(|k| a[(k, k)].sqrt()).collect();
    let norm = DMatrix::from_fn(n, n, |i, j| a[(i, j)] / (d[i] * d[j]));
    let eig = SymmetricEigen::new(norm);
    let (imin, &lmin) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("at least one parameter");
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if lmin <= 1e-12 * lmax {
        let v = eig.eigenvectors.column(imin);
        let mut terms: Vec<(usize, f64)> = (0..n).filter(|&k| v[k].abs() > 0.1).map(|k| (k, v[k])).collect();
        terms.sort_by(|x, y| y.1.abs().total_cmp(&x.1.abs()));
        let sign = if terms[0].1 < 0.0 { -1.0 } else { 1.0 };
        let direction = terms
            .iter()
            .map(|&(k, c)| format!("{:+.3}·{}", sign * c, names[free[k]]))
            .collect::<Vec<_>>()
            .join(" ");
        return Err(Error::RankDeficient { direction });
    }
    Ok(())
}

fn project(p: &mut [f64], lower: &[f64], upper: &[f64]) {
    for (i, x) in p.iter_mut().enumerate() {
        if let Some(&lo) = lower.get(i) {
            *x = x.max(lo);
        }
        if let Some(&hi) = upper.get(i) {
            *x = x.min(hi);
        }
    }
}

/// Scaled gradient with components pointing out of an active bound removed.
fn projected_gradient(g: &DVector<f64>, a: &DMatrix<f64>, p: &[f64], free: &[usize], opts: &FitOptions) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, &i) in free.iter().enumerate() {
        if a[(k, k)] > 0.0 && !pinned(g, p, i, k, opts) {
            worst = worst.max(g[k].abs() / a[(k, k)].sqrt());
        }
    }
    worst
}

/// Parameter `i` (free index `k`) sits on a bound the steepest-descent
/// direction `g` pushes against.
fn pinned(g: &DVector<f64>, p: &[f64], i: usize, k: usize, opts: &FitOptions) -> bool {
    let at_lower = opts.lower.get(i).is_some_and(|&lo| p[i] <= lo) && g[k] < 0.0;
    let at_upper = opts.upper.get(i).is_some_and(|&hi| p[i] >= hi) && g[k] > 0.0;
    at_lower || at_upper
}

/// Minimizes `Σ ((y − f(p))/σ)²` starting from `init`.
pub fn nlls(model: &dyn Model, y: &[f64], sigma: &[f64], init: &[f64], opts: &FitOptions) -> Result<FitResult> {
    let names = model.param_names();
    let n_par = names.len();
    let n = model.n_points();
    if init.len() != n_par || y.len() != n || sigma.len() != n {
        return Err(Error::data("parameter or data vector has the wrong length"));
    }
    if y.iter().chain(init).any(|v| !v.is_finite()) {
        return Err(Error::data("data and initial parameters must be finite"));
    }
    if sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::data("uncertainties must be positive and finite"));
    }
    for (i, name) in names.iter().enumerate() {
        let lo = opts.lower.get(i).copied().unwrap_or(f64::NEG_INFINITY);
        let hi = opts.upper.get(i).copied().unwrap_or(f64::INFINITY);
        if !(lo <= init[i] && init[i] <= hi) {
            return Err(Error::Fit(format!("initial {name} = {} outside [{lo}, {hi}]", init[i])));
        }
    }
    let fixed: Vec<bool> = (0..n_par).map(|i| opts.fixed.get(i).copied().unwrap_or(false)).collect();
    let free: Vec<usize> = (0..n_par).filter(|&i| !fixed[i]).collect();
    if free.is_empty() {
        return Err(Error::Fit("no free parameters".into()));
    }

    let mut p = init.to_vec();
    let mut r = weighted_residuals(model, y, sigma, &p);
    let mut cost = sum_sq(&r);
    if !cost.is_finite() {
        return Err(Error::Fit("model is not finite at the initial parameters".into()));
    }
    let mut history = vec![cost];
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut grad_norm;
    let mut tol;
    let mut j = free_jacobian(model, &p, sigma, &free);
    let mut a = j.transpose() * &j;
    check_rank(&a, &free, &names)?;

    loop {
        let g = j.transpose() * DVector::from_column_slice(&r);
        grad_norm = projected_gradient(&g, &a, &p, &free, opts);
        tol = opts.gtol * cost.sqrt().max(1.0);
        // past the tolerance, keep polishing while steps still pay off
        let stalled = match history.as_slice() {
            [.., prev, last] => prev - last <= 1e-12 * prev,
            _ => false,
        };
        let done = grad_norm <= tol && (stalled || cost == 0.0);
        if grad_norm == 0.0 || done || iterations >= opts.max_iter {
            break;
        }
        iterations += 1;
        let mut accepted = false;
        // Parameters pinned at a bound by the gradient, or momentarily without
        // influence on the model, sit out this step.
        let moving: Vec<usize> = (0..free.len())
            .filter(|&k| a[(k, k)] > 0.0 && !pinned(&g, &p, free[k], k, opts))
            .collect();
        if moving.is_empty() {
            break;
        }
        let a_sub = a.select_rows(&moving).select_columns(&moving);
        let g_sub = g.select_rows(&moving);
        while lambda < 1e20 {
            let mut m = a_sub.clone();
            for k in 0..moving.len() {
                m[(k, k)] += lambda * a_sub[(k, k)];
            }
            let Some(chol) = m.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&g_sub);
            let mut trial = p.clone();
            for (k, &kk) in moving.iter().enumerate() {
                trial[free[kk]] += delta[k];
            }
            project(&mut trial, &opts.lower, &opts.upper);
            if trial == p {
                lambda *= 10.0;
                continue;
            }
            let r_new = weighted_residuals(model, y, sigma, &trial);
            let c_new = sum_sq(&r_new);
            if c_new.is_finite() && c_new < cost {
                p = trial;
                r = r_new;
                cost = c_new;
                history.push(cost);
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
        j = free_jacobian(model, &p, sigma, &free);
        a = j.transpose() * &j;
    }

    let dof = n.saturating_sub(free.len());
    let chi2_red = if dof > 0 { cost / dof as f64 } else { f64::NAN };
    let mut warnings = Vec::new();
    if dof == 0 {
        warnings.push("no degrees of freedom: covariance is not scaled".to_string());
    }
    let g = j.transpose() * DVector::from_column_slice(&r);
    for (k, &i) in free.iter().enumerate() {
        if pinned(&g, &p, i, k, opts) {
            warnings.push(format!("{} = {:e} rests on its bound; its error is a curvature estimate", names[i], p[i]));
        }
    }
    check_rank(&a, &free, &names)?;
    let scale = if dof > 0 { chi2_red } else { 1.0 };
    let inv = a
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| a.clone().pseudo_inverse(1e-14).ok())
        .ok_or_else(|| Error::Fit("covariance is not invertible".into()))?;
    let mut covariance = vec![vec![0.0; n_par]; n_par];
    for (k, &i) in free.iter().enumerate() {
        for (l, &jj) in free.iter().enumerate() {
            covariance[i][jj] = inv[(k, l)] * scale;
        }
    }
    let errors = (0..n_par).map(|i| covariance[i][i].max(0.0).sqrt()).collect();
    let converged = grad_norm <= tol;
    if !converged {
        warnings.push(format!(
            "not converged after {iterations} iterations (scaled gradient {grad_norm:.3e} > {tol:.3e})"
        ));
    }
    Ok(FitResult {
        names,
        params: p,
        errors,
        covariance,
        fixed,
        chi2: cost,
        chi2_red,
        dof,
        iterations,
        converged,
        gradient_norm: grad_norm,
        gradient_tolerance: tol,
        residuals: r,
        cost_history: history,
        warnings,
    })
}
