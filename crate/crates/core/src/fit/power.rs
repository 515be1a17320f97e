//! Saturation-series fits of brightness, triplet fraction and triplet rate
//! against excitation power.
//!
//! The saturation intensity enters as its inverse `u = 1/I_s ≥ 0`, so a
//! series that shows no saturation converges to `u = 0` instead of running
//! off to infinity.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lm::{nlls, FitOptions, FitResult, Model};
use crate::error::{Error, Result};
use crate::model::IntensityUnit;
use crate::solver::{Measured, MeasuredCoefficients};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerRow {
    /// Excitation power [µW] or intensity, per the series unit.
    pub x: f64,
    /// Count rate per molecule [counts/s].
    pub f_m: Measured,
    pub t_eq: Measured,
    /// Triplet relaxation rate [s⁻¹].
    pub inv_tau: Measured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSeriesData {
    pub rows: Vec<PowerRow>,
    pub unit: IntensityUnit,
}

pub const CSV_HEADER: &str = "power_uW,FM_cps,FM_err,Teq,Teq_err,invtau_s,invtau_err";

impl PowerSeriesData {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}\n",
                r.x, r.f_m.value, r.f_m.sigma, r.t_eq.value, r.t_eq.sigma, r.inv_tau.value, r.inv_tau.sigma
            ));
        }
        out
    }

    /// Parses the CSV form (powers in µW).
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some(CSV_HEADER) {
            return Err(Error::Format(format!("expected header `{CSV_HEADER}`")));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let v: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("row {}: {e}", i + 1)))?;
            if v.len() != 7 {
                return Err(Error::Format(format!("row {}: expected 7 fields, got {}", i + 1, v.len())));
            }
            rows.push(PowerRow {
                x: v[0],
                f_m: Measured::new(v[1], v[2]),
                t_eq: Measured::new(v[3], v[4]),
                inv_tau: Measured::new(v[5], v[6]),
            });
        }
        Ok(PowerSeriesData { rows, unit: IntensityUnit::Microwatt })
    }

    /// Rows sorted by power; errors when identifiability is impossible,
    /// warnings when it is weak.
    fn check(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        for r in &self.rows {
            let vals = [r.x, r.f_m.value, r.f_m.sigma, r.t_eq.value, r.t_eq.sigma, r.inv_tau.value, r.inv_tau.sigma];
            if vals.iter().any(|v| !v.is_finite()) || r.x <= 0.0 {
                return Err(Error::data("power series values must be finite with positive powers"));
            }
            if r.f_m.sigma <= 0.0 || r.t_eq.sigma <= 0.0 || r.inv_tau.sigma <= 0.0 {
                return Err(Error::data("power series uncertainties must be positive"));
            }
        }
        let mut xs: Vec<f64> = self.rows.iter().map(|r| r.x).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        if xs.len() < 4 {
            return Err(Error::Fit(format!(
                "I_s is unidentifiable: {} distinct power(s), at least 4 are required",
                xs.len()
            )));
        }
        let span = xs[xs.len() - 1] / xs[0];
        if span < 3.0 {
            warnings.push(format!("powers span a factor {span:.2} < 3: I_s is weakly identifiable"));
        }
        Ok(warnings)
    }
}

/// Curvature of the triplet-rate series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripletRateForm {
    /// `k_ph + α x / (1 + x (1/I_s − α_T))`: the saturation of the
    /// closed-form triplet rate implied by the shared three-level rates.
    #[default]
    Mechanistic,
    /// `k_ph + α x / (1 + x/I_s)`.
    SharedSaturation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerFitMode {
    /// One fit of all three series with a shared I_s.
    #[default]
    Joint,
    /// Each series with its own saturation; I_s is taken from the brightness series.
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerFitOptions {
    #[serde(default)]
    pub mode: PowerFitMode,
    #[serde(default)]
    pub triplet_rate_form: TripletRateForm,
}

/// Stacked model over the three series; parameters
/// `[α_F, α_T, α_1/τ, u_F, u_T, u_τ, k_ph]` with tied entries for joint fits.
struct SeriesModel<'a> {
    x: &'a [f64],
    form: TripletRateForm,
    joint: bool,
}

impl SeriesModel<'_> {
    /// Full parameter vector from the fitted one.
    fn expand(&self, p: &[f64]) -> [f64; 7] {
        if self.joint {
            [p[0], p[1], p[2], p[3], p[3], p[3], p[4]]
        } else {
            [p[0], p[1], p[2], p[3], p[4], p[5], p[6]]
        }
    }

    fn tau_curvature(&self, full: &[f64; 7]) -> f64 {
        match (self.form, self.joint) {
            (TripletRateForm::Mechanistic, true) => full[5] - full[1],
            _ => full[5],
        }
    }
}

impl Model for SeriesModel<'_> {
    fn param_names(&self) -> Vec<String> {
        let names: &[&str] = if self.joint {
            &["alpha_F", "alpha_T", "alpha_invtau", "inv_I_s", "k_ph"]
        } else {
            &["alpha_F", "alpha_T", "alpha_invtau", "inv_I_s_F", "inv_I_s_T", "inv_I_s_tau", "k_ph"]
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    fn n_points(&self) -> usize {
        3 * self.x.len()
    }

    fn eval(&self, p: &[f64]) -> Vec<f64> {
        let q = self.expand(p);
        let ct = self.tau_curvature(&q);
        let mut out = Vec::with_capacity(self.n_points());
        out.extend(self.x.iter().map(|&x| q[0] * x / (1.0 + q[3] * x)));
        out.extend(self.x.iter().map(|&x| q[1] * x / (1.0 + q[4] * x)));
        out.extend(self.x.iter().map(|&x| q[6] + q[2] * x / (1.0 + ct * x)));
        out
    }

    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let q = self.expand(p);
        let ct = self.tau_curvature(&q);
        let n = self.x.len();
        // derivatives with respect to the expanded vector, then folded
        let mut full = DMatrix::zeros(3 * n, 7);
        for (i, &x) in self.x.iter().enumerate() {
            let (d_f, d_t, d_tau) = (1.0 + q[3] * x, 1.0 + q[4] * x, 1.0 + ct * x);
            full[(i, 0)] = x / d_f;
            full[(i, 3)] = -q[0] * x * x / (d_f * d_f);
            full[(n + i, 1)] = x / d_t;
            full[(n + i, 4)] = -q[1] * x * x / (d_t * d_t);
            full[(2 * n + i, 2)] = x / d_tau;
            let d_ct = -q[2] * x * x / (d_tau * d_tau);
            full[(2 * n + i, 5)] = d_ct;
            if self.form == TripletRateForm::Mechanistic && self.joint {
                full[(2 * n + i, 1)] = -d_ct;
            }
            full[(2 * n + i, 6)] = 1.0;
        }
        if !self.joint {
            return full;
        }
        let mut j = DMatrix::zeros(3 * n, 5);
        for r in 0..3 * n {
            j[(r, 0)] = full[(r, 0)];
            j[(r, 1)] = full[(r, 1)];
            j[(r, 2)] = full[(r, 2)];
            j[(r, 3)] = full[(r, 3)] + full[(r, 4)] + full[(r, 5)];
            j[(r, 4)] = full[(r, 6)];
        }
        j
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSeriesFit {
    pub coeffs: MeasuredCoefficients,
    /// Zero-power intercept of the triplet rate [s⁻¹].
    pub k_ph: Measured,
    /// Set when the data do not resolve saturation; `coeffs.i_s` then holds
    /// this lower bound (the 2σ bound on the fitted inverse).
    pub i_s_lower_bound: Option<f64>,
    pub mode: PowerFitMode,
    pub triplet_rate_form: TripletRateForm,
    pub fit: FitResult,
    pub warnings: Vec<String>,
}

/// Low-power slope estimate through the two lowest powers.
fn initial_guess(rows: &[PowerRow]) -> (f64, f64, f64, f64) {
    let (a, b) = (&rows[0], &rows[1]);
    let alpha_f = 0.5 * (a.f_m.value / a.x + b.f_m.value / b.x);
    let alpha_t = 0.5 * (a.t_eq.value / a.x + b.t_eq.value / b.x);
    let dx = b.x - a.x;
    let mut slope = if dx > 0.0 { (b.inv_tau.value - a.inv_tau.value) / dx } else { 0.0 };
    if !(slope > 0.0) {
        slope = a.inv_tau.value / a.x * 0.1;
    }
    let k_ph = (a.inv_tau.value - slope * a.x).max(0.0);
    (alpha_f.max(1e-300), alpha_t.max(0.0), slope, k_ph)
}

/// Fits the three saturation series.
pub fn fit_power_series(data: &PowerSeriesData, opts: PowerFitOptions) -> Result<PowerSeriesFit> {
    let mut warnings = data.check()?;
    let mut rows = data.rows.clone();
    rows.sort_by(|a, b| a.x.total_cmp(&b.x));
    let x: Vec<f64> = rows.iter().map(|r| r.x).collect();
    let x_max = *x.last().unwrap();
    let mut y = Vec::with_capacity(3 * x.len());
    let mut sigma = Vec::with_capacity(3 * x.len());
    for series in [|r: &PowerRow| r.f_m, |r: &PowerRow| r.t_eq, |r: &PowerRow| r.inv_tau] {
        for r in &rows {
            let m = series(r);
            y.push(m.value);
            sigma.push(m.sigma);
        }
    }
    let joint = opts.mode == PowerFitMode::Joint;
    let model = SeriesModel { x: &x, form: opts.triplet_rate_form, joint };
    let (af, at, ait, kph) = initial_guess(&rows);
    let u0 = 1.0 / x_max;
    let init: Vec<f64> = if joint {
        vec![af, at, ait, u0, kph]
    } else {
        vec![af, at, ait, u0, u0, u0, kph]
    };
    let n_par = init.len();
    // slopes, saturation inverses and k_ph are all non-negative
    let lower = vec![0.0; n_par];
    let upper = vec![f64::INFINITY; n_par];
    let fit = nlls(&model, &y, &sigma, &init, &FitOptions { lower, upper, ..FitOptions::default() })?;
    warnings.extend(fit.warnings.iter().cloned());

    let u = Measured::new(fit.params[3], fit.errors[3]);
    let (i_s, lower_bound) = if u.value <= 2.0 * u.sigma || u.value <= 0.0 {
        let lb = 1.0 / (u.value.max(0.0) + 2.0 * u.sigma);
        warnings.push(format!(
            "I_s is unidentifiable: powers reach only {x_max} while the lower bound on I_s is {lb:.4e}"
        ));
        (Measured::new(lb, f64::INFINITY), Some(lb))
    } else {
        let v = 1.0 / u.value;
        (Measured::new(v, u.sigma * v * v), None)
    };
    let m = |k: usize| Measured::new(fit.params[k], fit.errors[k]);
    let k_ph = m(n_par - 1);
    Ok(PowerSeriesFit {
        coeffs: MeasuredCoefficients { alpha_f: m(0), alpha_t: m(1), alpha_invtau: m(2), i_s, unit: data.unit },
        k_ph,
        i_s_lower_bound: lower_bound,
        mode: opts.mode,
        triplet_rate_form: opts.triplet_rate_form,
        fit,
        warnings,
    })
}
