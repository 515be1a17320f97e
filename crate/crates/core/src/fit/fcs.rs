//! Fit of the triplet-plus-3D-diffusion correlation model to a measured curve.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lm::{nlls, FitOptions, FitResult, Model};
use crate::correlator::{model_point, CorrelationCurve, FcsModelParams};
use crate::error::{Error, Result};

struct FcsModel<'a> {
    lags: &'a [f64],
}

impl Model for FcsModel<'_> {
    fn param_names(&self) -> Vec<String> {
        FcsModelParams::NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn n_points(&self) -> usize {
        self.lags.len()
    }

    fn eval(&self, p: &[f64]) -> Vec<f64> {
        let params = FcsModelParams::from_array(p);
        self.lags.iter().map(|&t| model_point(&params, t)).collect()
    }

    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let [n, nt, tbt, td, s, b] = [p[0], p[1], p[2], p[3], p[4], p[5]];
        DMatrix::from_fn(self.lags.len(), 6, |i, k| {
            let t = self.lags[i];
            let x = t / td;
            let e = (-t / tbt).exp();
            let trip = 1.0 + nt * e;
            let root = (1.0 + s * s * x).sqrt();
            let diff = 1.0 / ((1.0 + x) * root);
            let amp = (1.0 - b).powi(2) / n;
            let g = amp * trip * diff;
            match k {
                0 => -g / n,
                1 => amp * e * diff,
                2 => amp * nt * e * t / (tbt * tbt) * diff,
                // ∂diff/∂x = −diff (1/(1+x) + s²/(2(1+s²x))), ∂x/∂τ_d = −x/τ_d
                3 => g * (1.0 / (1.0 + x) + s * s / (2.0 * (1.0 + s * s * x))) * x / td,
                4 => -g * s * x / (1.0 + s * s * x),
                _ => -2.0 * g / (1.0 - b),
            }
        })
    }
}

/// Parameters held fixed during the fit, and optional bounds on the
/// blinking time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FcsFixed {
    pub b_over_i: Option<f64>,
    pub s: Option<f64>,
    /// [s]; defaults to the shortest lag.
    #[serde(default)]
    pub tau_bt_min: Option<f64>,
    /// [s]; defaults to the longest lag.
    #[serde(default)]
    pub tau_bt_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcsFit {
    pub params: FcsModelParams,
    pub errors: FcsModelParams,
    pub fit: FitResult,
    pub warnings: Vec<String>,
}

impl FcsFit {
    /// Count rate per molecule `(⟨i⟩ − ⟨b⟩) / N_tot` for a total rate `⟨i⟩`.
    pub fn brightness(&self, total_rate: f64) -> f64 {
        total_rate * (1.0 - self.params.b_over_i) / self.params.n_tot
    }

    /// Triplet fraction implied by the triplet amplitude, `n_T / (1 + n_T)`.
    pub fn triplet_fraction(&self) -> f64 {
        self.params.n_t / (1.0 + self.params.n_t)
    }
}

/// Smallest triplet amplitude; at zero the blinking time would drop out
/// of the model entirely.
pub const N_T_FLOOR: f64 = 1e-6;

const GRID_PER_DECADE: f64 = 8.0;

fn log_grid(lo: f64, hi: f64) -> Vec<f64> {
    if !(hi > lo) {
        return vec![];
    }
    let n = ((hi / lo).log10() * GRID_PER_DECADE).ceil() as usize;
    (0..=n).map(|i| lo * (hi / lo).powf(i as f64 / n.max(1) as f64)).collect()
}

/// Grid point of the start search: amplitudes solved linearly for fixed
/// times.
#[derive(Debug, Clone, Copy)]
struct GridPoint {
    chi2: f64,
    params: FcsModelParams,
}

/// Weighted least squares for `y ≈ a·u + c·v` with `a > 0`, `c ≥ 0`.
fn linear_amplitudes(y: &[f64], w: &[f64], u: &[f64], v: Option<&[f64]>) -> Option<(f64, f64, f64)> {
    let dot = |p: &[f64], q: &[f64]| p.iter().zip(q).zip(w).map(|((p, q), w)| p * q * w).sum::<f64>();
    let chi2 = |a: f64, c: f64| {
        (0..y.len())
            .map(|i| {
                let r = y[i] - a * u[i] - c * v.map_or(0.0, |v| v[i]);
                r * r * w[i]
            })
            .sum::<f64>()
    };
    let (uu, uy) = (dot(u, u), dot(u, y));
    let single = || {
        let a = uy / uu;
        (a > 0.0).then(|| (a, 0.0, chi2(a, 0.0)))
    };
    let Some(v) = v else { return single() };
    let (vv, uv, vy) = (dot(v, v), dot(u, v), dot(v, y));
    let det = uu * vv - uv * uv;
    if det <= 1e-12 * uu * vv {
        return single();
    }
    let a = (uy * vv - vy * uv) / det;
    let c = (vy * uu - uy * uv) / det;
    if a > 0.0 && c >= 0.0 {
        Some((a, c, chi2(a, c)))
    } else {
        single()
    }
}

/// Scans diffusion and blinking times on a log grid, solving the two
/// amplitudes linearly at every point; returns the best point for each
/// diffusion time, ordered by χ².
fn grid_scan(lags: &[f64], y: &[f64], sigma: &[f64], b: f64, s: f64, tau_bt_range: (f64, f64)) -> Vec<GridPoint> {
    let w: Vec<f64> = sigma.iter().map(|e| 1.0 / (e * e)).collect();
    let excess: Vec<f64> = y.iter().map(|g| g - 1.0).collect();
    let (t_min, t_max) = (lags[0], lags[lags.len() - 1]);
    let amp = (1.0 - b).powi(2);
    let mut best = Vec::new();
    for tau_d in log_grid(t_min * 10.0, t_max / 3.0) {
        let u: Vec<f64> = lags
            .iter()
            .map(|&t| {
                let x = t / tau_d;
                1.0 / ((1.0 + x) * (1.0 + s * s * x).sqrt())
            })
            .collect();
        let mut point: Option<GridPoint> = None;
        let mut consider = |a: f64, c: f64, chi2: f64, tau_bt: f64| {
            if point.is_none_or(|p| chi2 < p.chi2) {
                let params = FcsModelParams {
                    n_tot: amp / a,
                    n_t: (c / a).max(N_T_FLOOR),
                    tau_bt,
                    tau_d,
                    s,
                    b_over_i: b,
                };
                point = Some(GridPoint { chi2, params });
            }
        };
        if let Some((a, c, chi2)) = linear_amplitudes(&excess, &w, &u, None) {
            consider(a, c, chi2, (tau_d / 100.0).clamp(tau_bt_range.0, tau_bt_range.1));
        }
        for tau_bt in log_grid((t_min * 3.0).max(tau_bt_range.0), (tau_d / 3.0).min(tau_bt_range.1)) {
            let v: Vec<f64> = lags.iter().zip(&u).map(|(&t, u)| u * (-t / tau_bt).exp()).collect();
            if let Some((a, c, chi2)) = linear_amplitudes(&excess, &w, &u, Some(&v)) {
                consider(a, c, chi2, tau_bt);
            }
        }
        best.extend(point);
    }
    best.sort_by(|p, q| p.chi2.total_cmp(&q.chi2));
    best
}

/// Starting point from a grid search over diffusion and blinking times.
pub fn heuristic_init(curve: &CorrelationCurve, b_over_i: f64, s: f64) -> Result<FcsModelParams> {
    let sigma = point_sigmas(curve);
    let keep: Vec<usize> = (0..curve.len()).filter(|&i| sigma[i].is_finite()).collect();
    let lags: Vec<f64> = keep.iter().map(|&i| curve.lags[i]).collect();
    let y: Vec<f64> = keep.iter().map(|&i| curve.g2[i]).collect();
    let sig: Vec<f64> = keep.iter().map(|&i| sigma[i]).collect();
    if lags.len() < 2 {
        return Err(Error::Fit("fewer than 2 usable lags".into()));
    }
    grid_scan(&lags, &y, &sig, b_over_i, s, (lags[0], lags[lags.len() - 1]))
        .first()
        .map(|p| p.params)
        .ok_or_else(|| Error::Fit("correlation amplitude is not positive".into()))
}

/// Per-lag errors; lags without a positive finite stderr carry no
/// information and are dropped.
fn point_sigmas(curve: &CorrelationCurve) -> Vec<f64> {
    curve
        .stderr
        .iter()
        .map(|&e| if e.is_finite() && e > 0.0 { e } else { f64::INFINITY })
        .collect()
}

/// Data and settings shared by the fits of one curve.
struct FitData<'a> {
    model: &'a FcsModel<'a>,
    y: &'a [f64],
    sigma: &'a [f64],
    b: f64,
    b_fixed: bool,
    bounds: (f64, f64),
    init: Option<FcsModelParams>,
}

const S_RANGE: (f64, f64) = (0.05, 10.0);

fn involves_s(direction: &str) -> bool {
    direction == "s" || direction.split_whitespace().any(|t| t.ends_with("·s"))
}

impl FitData<'_> {
    fn options(&self, s_fixed: bool) -> FitOptions {
        let lags = self.model.lags;
        let (t_min, t_max) = (lags[0], lags[lags.len() - 1]);
        let (s_lo, s_hi) = if s_fixed { (0.0, f64::INFINITY) } else { S_RANGE };
        FitOptions {
            lower: vec![1e-9, N_T_FLOOR, self.bounds.0, t_min, s_lo, 0.0],
            upper: vec![f64::INFINITY, 100.0, self.bounds.1, t_max * 1e3, s_hi, 0.999],
            fixed: vec![false, false, false, false, s_fixed, self.b_fixed],
            ..FitOptions::default()
        }
    }

    fn starts(&self, s_fixed: Option<f64>) -> Result<Vec<FcsModelParams>> {
        if let Some(p) = self.init {
            p.validate()?;
            return Ok(vec![FcsModelParams { s: s_fixed.unwrap_or(p.s), ..p }]);
        }
        let mut v = Vec::new();
        for s in match s_fixed {
            Some(s) => vec![s],
            None => vec![0.2, 0.5, 1.0],
        } {
            let scan = grid_scan(self.model.lags, self.y, self.sigma, self.b, s, self.bounds);
            // best few distinct diffusion times, plus a weaker and a
            // stronger triplet around the best one
            for p in scan.iter().take(3) {
                v.push(p.params);
            }
            if let Some(p) = scan.first() {
                let p = p.params;
                v.push(FcsModelParams { n_t: 0.3, tau_bt: p.tau_d / 100.0, ..p });
                v.push(FcsModelParams { n_t: 0.05, tau_bt: p.tau_d / 300.0, ..p });
            }
        }
        if v.is_empty() {
            return Err(Error::Fit("correlation amplitude is not positive".into()));
        }
        Ok(v)
    }

    /// Lowest-χ² fit over all starts, with `s` free or held at `s_fixed`.
    fn fit_at(&self, s_fixed: Option<f64>) -> Result<FitResult> {
        let opts = self.options(s_fixed.is_some());
        let mut best: Option<FitResult> = None;
        let mut last_err = None;
        for start in self.starts(s_fixed)? {
            let mut p0 = start.to_array();
            for (k, v) in p0.iter_mut().enumerate() {
                *v = v.clamp(opts.lower[k], opts.upper[k]);
            }
            match nlls(self.model, self.y, self.sigma, &p0, &opts) {
                Ok(fit) => {
                    if best.as_ref().is_none_or(|b| fit.chi2 < b.chi2) {
                        best = Some(fit);
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
        match (best, last_err) {
            (Some(f), _) => Ok(f),
            (None, Some(e)) => Err(e),
            (None, None) => unreachable!("at least one start"),
        }
    }

    /// Near `s = 1` the χ² profile is close to symmetric in `s²` about 1:
    /// `s` and `√(2 − s²)` fit almost equally well. Warns when the mirrored
    /// value lies within Δχ² = max(1, χ²_red) of the optimum.
    fn mirror_warning(&self, fit: &FitResult) -> Option<String> {
        let s = fit.params[4];
        let u = 2.0 - s * s;
        if !(u > 0.0) {
            return None;
        }
        let mirror = u.sqrt();
        if (mirror - s).abs() <= fit.errors[4] {
            return None;
        }
        let other = self.fit_at(Some(mirror)).ok()?;
        let scale = if fit.chi2_red.is_finite() { fit.chi2_red.max(1.0) } else { 1.0 };
        (other.chi2 - fit.chi2 <= scale).then(|| {
            format!(
                "s = {s:.3} is ambiguous with its mirror s = {mirror:.3} (delta chi2 = {:.2})",
                other.chi2 - fit.chi2
            )
        })
    }

    /// Fits `s` by minimizing the χ² of fixed-`s` fits.
    ///
    /// At `s = 1` the model `(1+x)^{-1}(1+s²x)^{-1/2}` changes with `s` only
    /// like a rescaled `τ_d` to first order, so the joint Jacobian is
    /// singular there although χ² still has a minimum. The error of `s` is
    /// the half width of the profile where χ² rises by χ²_red.
    fn profile_s(&self) -> Result<FitResult> {
        let chi2 = |ln_s: f64| self.fit_at(Some(ln_s.exp())).map(|f| f.chi2);
        let (lo, hi) = (S_RANGE.0.ln(), S_RANGE.1.ln());
        let n = 16;
        let grid: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
        let values: Vec<f64> = grid.iter().map(|&x| chi2(x).unwrap_or(f64::INFINITY)).collect();
        let (k, _) = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty grid");
        if !values[k].is_finite() {
            return Err(Error::Fit("no aspect ratio gives a valid fit".into()));
        }
        // golden-section search between the neighbours of the best grid point
        let (mut a, mut d) = (grid[k.saturating_sub(1)], grid[(k + 1).min(n)]);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut b = d - phi * (d - a);
        let mut c = a + phi * (d - a);
        let (mut fb, mut fc) = (chi2(b)?, chi2(c)?);
        while d - a > 1e-6 {
            if fb < fc {
                (d, c, fc) = (c, b, fb);
                b = d - phi * (d - a);
                fb = chi2(b)?;
            } else {
                (a, b, fb) = (b, c, fc);
                c = a + phi * (d - a);
                fc = chi2(c)?;
            }
        }
        let ln_s = 0.5 * (a + d);
        let mut fit = self.fit_at(Some(ln_s.exp()))?;
        let dof = fit.dof.saturating_sub(1);
        let scale = if dof > 0 { fit.chi2 / dof as f64 } else { 1.0 };
        let target = fit.chi2 + scale;
        let crossing = |towards: f64| -> Result<(f64, bool)> {
            let (mut inside, mut outside) = (ln_s, towards);
            if chi2(outside)? < target {
                return Ok((outside, false));
            }
            for _ in 0..30 {
                let mid = 0.5 * (inside + outside);
                if chi2(mid)? < target {
                    inside = mid;
                } else {
                    outside = mid;
                }
            }
            Ok((0.5 * (inside + outside), true))
        };
        let (up, up_found) = crossing(hi)?;
        let (down, down_found) = crossing(lo)?;
        let s = ln_s.exp();
        let sigma_s = 0.5 * (up.exp() - down.exp());
        fit.params[4] = s;
        fit.fixed[4] = false;
        fit.errors[4] = sigma_s;
        fit.covariance[4][4] = sigma_s * sigma_s;
        fit.dof = dof;
        fit.chi2_red = if dof > 0 { fit.chi2 / dof as f64 } else { f64::NAN };
        fit.warnings.push("s fitted by a chi-square profile: the joint Jacobian is singular".to_string());
        if !(up_found && down_found) {
            fit.warnings.push(format!("s = {s:.3}: the profile does not close within [{}, {}]", S_RANGE.0, S_RANGE.1));
        }
        Ok(fit)
    }
}

/// Fits the model to `curve`, weighted by its stderr.
///
/// `N_tot` and `b_over_i` enter only through `(1−b)²/N`, so `b_over_i`
/// must be fixed (from a measured background) for `N_tot` to be
/// identifiable; leaving it free yields a rank-deficiency error.
/// Without `init` the fit starts from [`heuristic_init`] and a small grid of
/// triplet and diffusion guesses and keeps the lowest χ².
/// A free `s` whose joint fit is singular (as it is at `s = 1`) is fitted by
/// a χ² profile over fixed-`s` fits instead.
pub fn fit_fcs(curve: &CorrelationCurve, init: Option<FcsModelParams>, fixed: FcsFixed) -> Result<FcsFit> {
    curve.validate()?;
    let sigma_all = point_sigmas(curve);
    let keep: Vec<usize> = (0..curve.len()).filter(|&i| sigma_all[i].is_finite()).collect();
    if keep.len() < 7 {
        return Err(Error::Fit("fewer than 7 usable lags".into()));
    }
    let lags: Vec<f64> = keep.iter().map(|&i| curve.lags[i]).collect();
    let y: Vec<f64> = keep.iter().map(|&i| curve.g2[i]).collect();
    let sigma: Vec<f64> = keep.iter().map(|&i| sigma_all[i]).collect();
    let model = FcsModel { lags: &lags };

    let b = fixed.b_over_i.unwrap_or(0.0);
    let s_fixed = fixed.s;
    let (t_min, t_max) = (lags[0], lags[lags.len() - 1]);
    let tb_lo = fixed.tau_bt_min.unwrap_or(t_min).max(t_min);
    let tb_hi = fixed.tau_bt_max.unwrap_or(t_max).min(t_max);
    if !(tb_lo < tb_hi) {
        return Err(Error::config(format!("empty blinking-time range [{tb_lo:e}, {tb_hi:e}] s")));
    }
    let data = FitData { model: &model, y: &y, sigma: &sigma, b, b_fixed: fixed.b_over_i.is_some(), bounds: (tb_lo, tb_hi), init };
    let mut fit = match data.fit_at(s_fixed) {
        Err(Error::RankDeficient { direction }) if s_fixed.is_none() && involves_s(&direction) => data.profile_s()?,
        other => other?,
    };
    if s_fixed.is_none() {
        if let Some(w) = data.mirror_warning(&fit) {
            fit.warnings.push(w);
        }
    }
    let params = FcsModelParams::from_array(&fit.params);
    if params.amplitude() <= 0.0 {
        return Err(Error::Fit("fitted amplitude is not positive".into()));
    }
    let mut warnings = fit.warnings.clone();
    if params.tau_d < 3.0 * params.tau_bt {
        warnings.push(format!(
            "triplet-diffusion degeneracy: tau_d/tau_bT = {:.2} < 3",
            params.tau_d / params.tau_bt
        ));
    }
    if t_min > params.tau_bt / 3.0 || t_max < 10.0 * params.tau_d {
        warnings.push("curve does not span tau_bT/3 .. 10 tau_d".to_string());
    }
    Ok(FcsFit { params, errors: FcsModelParams::from_array(&fit.errors), fit, warnings })
}
