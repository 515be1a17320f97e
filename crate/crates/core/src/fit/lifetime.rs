//! Lifetime fit of an exponential decay convolved with an exponential IRF.
//!
//! A photon delay is the sum of an IRF delay `Exp(τ0)` and a molecular delay
//! `Exp(τ)`, with density `(e^{−t/τ} − e^{−t/τ0}) / (τ − τ0)`. Bins are
//! integrated exactly through the survival function
//! `S(t) = (τ e^{−t/τ} − τ0 e^{−t/τ0}) / (τ − τ0)`.
//!
//! The density is symmetric under `τ ↔ τ0`; with `τ0` fixed the molecular
//! lifetime is the free one, and the sign of the unnormalized amplitude
//! `A = B/(τ − τ0)` tells whether it is the long or the short branch.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::lm::{nlls, FitOptions, FitResult, Model};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::solver::Measured;

/// Relative distance `|τ − τ0|/τ0` below which the near-degenerate form is used.
pub const DEGENERATE_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayHistogram {
    /// Bin edges [ns], strictly increasing.
    pub edges: Vec<f64>,
    pub counts: Vec<f64>,
    /// IRF time constant [ns].
    pub tau0: f64,
    /// Uncertainty of `tau0` [ns].
    #[serde(default)]
    pub tau0_sigma: f64,
}

impl DecayHistogram {
    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.edges.len() != self.counts.len() + 1 || self.counts.len() < 4 {
            return Err(Error::data("histogram needs at least 4 bins and one more edge than bins"));
        }
        if self.edges.windows(2).any(|w| !(w[1] > w[0])) || self.edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::data("bin edges must be finite and strictly increasing"));
        }
        if self.counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::data("counts must be finite and >= 0"));
        }
        if !(self.tau0 > 0.0 && self.tau0.is_finite()) {
            return Err(Error::data("tau0 must be positive"));
        }
        if self.total() <= 0.0 {
            return Err(Error::data("histogram is empty"));
        }
        Ok(())
    }

    /// `t_start_ns,t_end_ns,counts` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_start_ns,t_end_ns,counts\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.edges[i], self.edges[i + 1], c));
        }
        out
    }

    pub fn from_csv(text: &str, tau0: f64) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("t_start_ns,t_end_ns,counts") {
            return Err(Error::Format("expected header `t_start_ns,t_end_ns,counts`".into()));
        }
        let mut edges = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in lines.enumerate() {
            let v: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("row {}: {e}", i + 1)))?;
            if v.len() != 3 {
                return Err(Error::Format(format!("row {}: expected 3 fields", i + 1)));
            }
            if let Some(&last) = edges.last() {
                if v[0] != last {
                    return Err(Error::Format(format!("row {}: bins must be contiguous", i + 1)));
                }
            } else {
                edges.push(v[0]);
            }
            edges.push(v[1]);
            counts.push(v[2]);
        }
        let h = DecayHistogram { edges, counts, tau0, tau0_sigma: 0.0 };
        h.validate()?;
        Ok(h)
    }
}

/// Survival `S(x)` and its derivatives in `x` and `τ`, for `x ≥ 0`.
struct Survival {
    s: f64,
    /// `−dS/dx`, the density.
    density: f64,
    d_tau: f64,
}

fn survival(x: f64, tau: f64, tau0: f64) -> Survival {
    if x <= 0.0 {
        return Survival { s: 1.0, density: 0.0, d_tau: 0.0 };
    }
    if (tau - tau0).abs() > DEGENERATE_TOLERANCE * tau0 {
        survival_exact(x, tau, tau0)
    } else {
        survival_midpoint(x, tau, tau0)
    }
}

fn survival_exact(x: f64, tau: f64, tau0: f64) -> Survival {
    let d = tau - tau0;
    let (e, e0) = ((-x / tau).exp(), (-x / tau0).exp());
    let s = (tau * e - tau0 * e0) / d;
    // h(τ) = τ e^{−x/τ}, h'(τ) = e^{−x/τ}(1 + x/τ)
    let h1 = e * (1.0 + x / tau);
    Survival { s, density: (e - e0) / d, d_tau: (h1 - s) / d }
}

/// Divided differences expanded about the midpoint m = τ0 + d/2:
/// (h(τ) − h(τ0))/d = h'(m) + d² h'''(m)/24 + O(d⁴).
fn survival_midpoint(x: f64, tau: f64, tau0: f64) -> Survival {
    let d = tau - tau0;
    let m = tau0 + 0.5 * d;
    let e = (-x / m).exp();
    let r = x / m;
    let h1 = e * (1.0 + r);
    let h2 = e * r * r / m;
    let h3 = e * r * r * (r - 3.0) / (m * m);
    let h4 = e * r * r * (r * r - 8.0 * r + 12.0) / (m * m * m);
    // k(τ) = e^{−x/τ}: k' = r e/m, k''' = r e (r² − 6r + 6)/m³
    let k1 = r * e / m;
    let k3 = r * e * (r * r - 6.0 * r + 6.0) / (m * m * m);
    Survival {
        s: h1 + d * d * h3 / 24.0,
        density: k1 + d * d * k3 / 24.0,
        d_tau: 0.5 * h2 + d * h3 / 12.0 + d * d * h4 / 48.0,
    }
}

/// Expected counts per bin for parameters `[B, τ, t0]`.
struct DecayModel<'a> {
    edges: &'a [f64],
    tau0: f64,
}

impl Model for DecayModel<'_> {
    fn param_names(&self) -> Vec<String> {
        vec!["total".into(), "tau_tot".into(), "t0".into()]
    }

    fn n_points(&self) -> usize {
        self.edges.len() - 1
    }

    fn eval(&self, p: &[f64]) -> Vec<f64> {
        let sv: Vec<f64> = self.edges.iter().map(|&t| survival(t - p[2], p[1], self.tau0).s).collect();
        sv.windows(2).map(|w| p[0] * (w[0] - w[1])).collect()
    }

    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let sv: Vec<Survival> = self.edges.iter().map(|&t| survival(t - p[2], p[1], self.tau0)).collect();
        DMatrix::from_fn(self.n_points(), 3, |i, k| {
            let (a, b) = (&sv[i], &sv[i + 1]);
            match k {
                0 => a.s - b.s,
                1 => p[0] * (a.d_tau - b.d_tau),
                // ∂S(t − t0)/∂t0 = density(t − t0)
                _ => p[0] * (a.density - b.density),
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifetimeBranch {
    /// `τ > τ0`, `A > 0`.
    Long,
    /// `τ < τ0`, `A < 0`.
    Short,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifetimeFit {
    /// Molecular lifetime [ns].
    pub tau_tot: Measured,
    /// Amplitude of `A[e^{−t/τ} − e^{−t/τ0}]` [counts/ns].
    pub amplitude: Measured,
    /// Time origin [ns].
    pub t0: Measured,
    pub branch: LifetimeBranch,
    /// `|τ − τ0|` below 1% of `τ0`: the near-degenerate form was used.
    pub degenerate: bool,
    /// `|τ − τ0|` within three combined standard deviations.
    pub ambiguous: bool,
    pub fit: FitResult,
    pub warnings: Vec<String>,
}

impl LifetimeFit {
    /// Total deexcitation rate `1/τ` [s⁻¹].
    pub fn k_tot(&self) -> Measured {
        let k = 1e9 / self.tau_tot.value;
        Measured::new(k, k * self.tau_tot.relative())
    }
}

fn fit_once(h: &DecayHistogram, model: &DecayModel, init: &[f64], sigma: &[f64]) -> Result<FitResult> {
    let bin_min = h.edges.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let span = h.edges[h.edges.len() - 1] - h.edges[0];
    let opts = FitOptions {
        lower: vec![0.0, 1e-3 * bin_min, h.edges[0] - span],
        upper: vec![f64::INFINITY, 100.0 * span, h.edges[h.edges.len() - 1]],
        ..FitOptions::default()
    };
    nlls(model, &h.counts, sigma, init, &opts)
}

/// Fits `τ_tot`, the total count and the time origin with `τ0` fixed.
///
/// Neyman weights (√counts) give the first estimate, which is refined once
/// with Pearson weights (√model).
pub fn fit_lifetime(h: &DecayHistogram) -> Result<LifetimeFit> {
    h.validate()?;
    let peak = h
        .counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    if peak == 0 {
        return Err(Error::data("histogram peak is in the first bin; the rise is not resolved"));
    }
    let model = DecayModel { edges: &h.edges, tau0: h.tau0 };
    let total = h.total();
    let mids: Vec<f64> = h.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let mean = mids.iter().zip(&h.counts).map(|(t, c)| t * c).sum::<f64>() / total;
    let t0 = h.edges[0].max(0.0).min(mids[peak]);
    let guess = (mean - t0 - h.tau0).max(0.05 * h.tau0);

    let neyman: Vec<f64> = h.counts.iter().map(|c| c.max(1.0).sqrt()).collect();
    let mut best: Option<FitResult> = None;
    for scale in [1.0, 0.5, 2.0, 0.1] {
        let mut tau = guess * scale;
        if (tau - h.tau0).abs() <= 2.0 * DEGENERATE_TOLERANCE * h.tau0 {
            tau *= 1.2;
        }
        if let Ok(fit) = fit_once(h, &model, &[total, tau, t0], &neyman) {
            if best.as_ref().is_none_or(|b| fit.chi2 < b.chi2) {
                best = Some(fit);
            }
        }
    }
    let first = best.ok_or_else(|| Error::Fit("lifetime fit failed from every start".into()))?;
    let expected = model.eval(&first.params);
    let pearson: Vec<f64> = expected.iter().map(|m| m.max(1.0).sqrt()).collect();
    let fit = fit_once(h, &model, &first.params, &pearson)?;

    let (b, tau, t0) = (fit.params[0], fit.params[1], fit.params[2]);
    let tau_err = fit.errors[1];
    let d = tau - h.tau0;
    let degenerate = d.abs() <= DEGENERATE_TOLERANCE * h.tau0;
    let combined = tau_err.hypot(h.tau0_sigma);
    let ambiguous = d.abs() < 3.0 * combined;
    let mut warnings = fit.warnings.clone();
    if degenerate {
        warnings.push("tau_tot within 1% of tau0: degenerate form A·t·exp(−t/τ0) used".into());
    } else if ambiguous {
        warnings.push("tau_tot and tau0 are not separated by 3 combined σ".into());
    }
    let amplitude = if degenerate {
        // the limit B t e^{−t/τ0}/τ0² has no finite A; report B/τ0²
        Measured::new(b / (h.tau0 * h.tau0), fit.errors[0] / (h.tau0 * h.tau0))
    } else {
        let a = b / d;
        let rel = (fit.errors[0] / b).hypot(tau_err / d);
        Measured::new(a, (a * rel).abs())
    };
    Ok(LifetimeFit {
        tau_tot: Measured::new(tau, tau_err),
        amplitude,
        t0: Measured::new(t0, fit.errors[2]),
        branch: if d >= 0.0 { LifetimeBranch::Long } else { LifetimeBranch::Short },
        degenerate,
        ambiguous,
        fit,
        warnings,
    })
}

/// Histogram of `n_photons` delays `Exp(τ0) + Exp(τ_tot)` over
/// `[0, 20 max(τ_tot, τ0))`.
pub fn simulate_decay(tau_tot: f64, tau0: f64, n_photons: u64, bin_width: f64, seed: u64) -> Result<DecayHistogram> {
    if !(tau_tot > 0.0 && tau0 > 0.0 && bin_width > 0.0) {
        return Err(Error::domain("lifetimes and bin width must be positive"));
    }
    let range = 20.0 * tau_tot.max(tau0);
    let n_bins = (range / bin_width).ceil() as usize;
    if n_bins < 4 || n_bins > 10_000_000 {
        return Err(Error::domain(format!("{n_bins} bins; choose a bin width giving 4..1e7 bins")));
    }
    let mut rng = substream(seed, 0);
    let (e0, e1) = (Exp::new(1.0 / tau0).unwrap(), Exp::new(1.0 / tau_tot).unwrap());
    let mut counts = vec![0.0; n_bins];
    for _ in 0..n_photons {
        let t = e0.sample(&mut rng) + e1.sample(&mut rng);
        let i = (t / bin_width) as usize;
        if i < n_bins {
            counts[i] += 1.0;
        }
    }
    let edges = (0..=n_bins).map(|i| i as f64 * bin_width).collect();
    Ok(DecayHistogram { edges, counts, tau0, tau0_sigma: 0.0 })
}

/// Time of the maximum of the noiseless decay, `ln(τ/τ0) τ τ0/(τ − τ0)`.
pub fn peak_time(tau_tot: f64, tau0: f64) -> f64 {
    if (tau_tot - tau0).abs() <= 1e-12 * tau0 {
        return tau0;
    }
    (tau_tot / tau0).ln() * tau_tot * tau0 / (tau_tot - tau0)
}
