//! Inversion of the measurable saturation coefficients into photokinetic rates.
//!
//! With `D = 1 - α_T I_s`:
//!
//! ```text
//! σ      = k_tot D / I_s
//! k_rad  = (α_F / κ) I_s / D
//! k_isc  = α_{1/τ} I_s / D
//! k_ph   = α_{1/τ} / α_T
//! k_nrad = k_tot - k_rad - k_isc
//! ```
//!
//! σ and k_rad are exact under the three-level model; k_isc and k_ph carry a
//! relative bias of `k_isc / (k_rad + k_nrad)` because α_{1/τ} is the low
//! intensity slope of the triplet relaxation rate.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ExcitationContext, IntensityUnit, RateSet, SaturationCoefficients};
use crate::rng::substream;

/// A value with its 1σ uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Measured {
    pub value: f64,
    #[serde(default)]
    pub sigma: f64,
}

impl Measured {
    pub fn new(value: f64, sigma: f64) -> Self {
        Measured { value, sigma }
    }

    pub fn exact(value: f64) -> Self {
        Measured { value, sigma: 0.0 }
    }

    pub fn relative(&self) -> f64 {
        if self.value == 0.0 {
            0.0
        } else {
            (self.sigma / self.value).abs()
        }
    }

    /// Ratio of two independent quantities, uncertainties added in quadrature.
    pub fn ratio(num: Measured, den: Measured) -> Measured {
        let value = num.value / den.value;
        let rel = num.relative().hypot(den.relative());
        Measured::new(value, (value * rel).abs())
    }
}

/// Saturation coefficients with per-field uncertainties, all in `unit`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasuredCoefficients {
    #[serde(rename = "alpha_F")]
    pub alpha_f: Measured,
    #[serde(rename = "alpha_T")]
    pub alpha_t: Measured,
    pub alpha_invtau: Measured,
    #[serde(rename = "I_s")]
    pub i_s: Measured,
    pub unit: IntensityUnit,
}

impl MeasuredCoefficients {
    pub fn central(&self) -> SaturationCoefficients {
        SaturationCoefficients {
            alpha_f: self.alpha_f.value,
            alpha_t: self.alpha_t.value,
            alpha_invtau: self.alpha_invtau.value,
            i_s: self.i_s.value,
            unit: self.unit,
        }
    }

    pub fn from_exact(c: &SaturationCoefficients) -> Self {
        MeasuredCoefficients {
            alpha_f: Measured::exact(c.alpha_f),
            alpha_t: Measured::exact(c.alpha_t),
            alpha_invtau: Measured::exact(c.alpha_invtau),
            i_s: Measured::exact(c.i_s),
            unit: c.unit,
        }
    }

    /// Same coefficients expressed in another unit (uncertainties scale alike).
    pub fn to_unit(&self, unit: IntensityUnit, ctx: &ExcitationContext) -> Self {
        let v = self.central().to_unit(unit, ctx);
        let s = SaturationCoefficients {
            alpha_f: self.alpha_f.sigma,
            alpha_t: self.alpha_t.sigma,
            alpha_invtau: self.alpha_invtau.sigma,
            i_s: self.i_s.sigma,
            unit: self.unit,
        }
        .to_unit(unit, ctx);
        MeasuredCoefficients {
            alpha_f: Measured::new(v.alpha_f, s.alpha_f),
            alpha_t: Measured::new(v.alpha_t, s.alpha_t),
            alpha_invtau: Measured::new(v.alpha_invtau, s.alpha_invtau),
            i_s: Measured::new(v.i_s, s.i_s),
            unit,
        }
    }
}

/// Everything the inversion consumes: FCS coefficients, lifetime and collection efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasuredInputs {
    pub coeffs: MeasuredCoefficients,
    /// Total deexcitation rate from the lifetime fit [s⁻¹].
    pub k_tot: Measured,
    pub kappa: Measured,
    pub context: ExcitationContext,
}

impl MeasuredInputs {
    pub fn validate(&self) -> Result<()> {
        self.context.validate()?;
        self.coeffs.central().validate()?;
        let all = [
            ("alpha_F", self.coeffs.alpha_f),
            ("alpha_T", self.coeffs.alpha_t),
            ("alpha_invtau", self.coeffs.alpha_invtau),
            ("I_s", self.coeffs.i_s),
            ("k_tot", self.k_tot),
            ("kappa", self.kappa),
        ];
        for (name, m) in all {
            if !(m.sigma.is_finite() && m.sigma >= 0.0) {
                return Err(Error::domain(format!("uncertainty of {name} must be >= 0")));
            }
        }
        if !(self.k_tot.value > 0.0 && self.k_tot.value.is_finite()) {
            return Err(Error::domain("k_tot must be positive"));
        }
        if !(self.kappa.value > 0.0 && self.kappa.value <= 1.0) {
            return Err(Error::domain("kappa must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Point estimate of the rates; `k_nrad` may be negative (see [`SolveFlag::Unphysical`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub sigma: f64,
    pub k_tot: f64,
    pub k_rad: f64,
    pub k_nrad: f64,
    pub k_isc: f64,
    pub k_ph: f64,
    pub phi: f64,
}

impl RateEstimate {
    fn to_array(self) -> [f64; 7] {
        [self.sigma, self.k_tot, self.k_rad, self.k_nrad, self.k_isc, self.k_ph, self.phi]
    }

    fn from_array(a: [f64; 7]) -> Self {
        RateEstimate {
            sigma: a[0],
            k_tot: a[1],
            k_rad: a[2],
            k_nrad: a[3],
            k_isc: a[4],
            k_ph: a[5],
            phi: a[6],
        }
    }

    /// The estimate as a [`RateSet`], failing when it violates the rate invariants.
    pub fn to_rate_set(&self, kappa: f64) -> Result<RateSet> {
        let r = RateSet {
            sigma: self.sigma,
            k_rad: self.k_rad,
            k_nrad: self.k_nrad,
            k_isc: self.k_isc,
            k_ph: self.k_ph,
            kappa,
        };
        r.validate()?;
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "flag", rename_all = "snake_case")]
pub enum SolveFlag {
    /// `k_rad + k_isc > k_tot`; k_nrad is reported negative, not clamped.
    Unphysical { k_nrad: f64 },
    /// Monte-Carlo and linearized uncertainties disagree by more than 30 %.
    Nonlinear { quantity: String, monte_carlo: f64, linearized: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyMethod {
    Linearized,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolvedRates {
    pub central: RateEstimate,
    /// 1σ uncertainty per field of `central`.
    pub uncertainty: RateEstimate,
    pub kappa: f64,
    pub method: UncertaintyMethod,
    pub flags: Vec<SolveFlag>,
}

impl SolvedRates {
    pub fn is_unphysical(&self) -> bool {
        self.flags.iter().any(|f| matches!(f, SolveFlag::Unphysical { .. }))
    }

    fn measured(&self, pick: fn(&RateEstimate) -> f64) -> Measured {
        Measured::new(pick(&self.central), pick(&self.uncertainty))
    }
}

/// Inputs as a flat vector: α_F, α_T, α_{1/τ}, I_s, k_tot, κ.
fn input_vector(m: &MeasuredInputs) -> ([f64; 6], [f64; 6]) {
    let c = &m.coeffs;
    (
        [c.alpha_f.value, c.alpha_t.value, c.alpha_invtau.value, c.i_s.value, m.k_tot.value, m.kappa.value],
        [c.alpha_f.sigma, c.alpha_t.sigma, c.alpha_invtau.sigma, c.i_s.sigma, m.k_tot.sigma, m.kappa.sigma],
    )
}

/// Rates in canonical units from coefficients in `unit`.
fn invert_point(x: &[f64; 6], unit: IntensityUnit, ctx: &ExcitationContext) -> Result<RateEstimate> {
    let [alpha_f, alpha_t, alpha_invtau, i_s, k_tot, kappa] = *x;
    let product = alpha_t * i_s;
    if !(product < 1.0) {
        return Err(Error::SaturationInconsistency { product });
    }
    let d = 1.0 - product;
    // I_s in photon flux for the cross-section; every rate is unit independent.
    let i_s_flux = match unit {
        IntensityUnit::PhotonFlux => i_s,
        IntensityUnit::Microwatt => i_s * ctx.power_to_intensity,
    };
    let sigma = k_tot * d / i_s_flux;
    let k_rad = alpha_f / kappa * i_s / d;
    let k_isc = alpha_invtau * i_s / d;
    let k_ph = alpha_invtau / alpha_t;
    let k_nrad = k_tot - k_rad - k_isc;
    Ok(RateEstimate {
        sigma,
        k_tot,
        k_rad,
        k_nrad,
        k_isc,
        k_ph,
        phi: k_rad / k_tot,
    })
}

fn flags_for(central: &RateEstimate) -> Vec<SolveFlag> {
    if central.k_nrad < 0.0 {
        vec![SolveFlag::Unphysical { k_nrad: central.k_nrad }]
    } else {
        Vec::new()
    }
}

/// Linear (first-order) propagation through central finite differences.
fn linearized(m: &MeasuredInputs) -> Result<RateEstimate> {
    let (x, s) = input_vector(m);
    let mut var = [0.0f64; 7];
    for j in 0..6 {
        if s[j] == 0.0 {
            continue;
        }
        let h = 1e-6 * x[j].abs().max(s[j]);
        let mut up = x;
        let mut down = x;
        up[j] += h;
        down[j] -= h;
        let fu = invert_point(&up, m.coeffs.unit, &m.context)?.to_array();
        let fd = invert_point(&down, m.coeffs.unit, &m.context)?.to_array();
        for k in 0..7 {
            let g = (fu[k] - fd[k]) / (2.0 * h);
            var[k] += (g * s[j]).powi(2);
        }
    }
    Ok(RateEstimate::from_array(var.map(f64::sqrt)))
}

/// Closed-form inversion with linearized uncertainties.
pub fn invert(m: &MeasuredInputs) -> Result<SolvedRates> {
    m.validate()?;
    let (x, _) = input_vector(m);
    let central = invert_point(&x, m.coeffs.unit, &m.context)?;
    let uncertainty = linearized(m)?;
    Ok(SolvedRates {
        flags: flags_for(&central),
        central,
        uncertainty,
        kappa: m.kappa.value,
        method: UncertaintyMethod::Linearized,
    })
}

/// Monte-Carlo uncertainty propagation with independent Gaussian inputs.
///
/// Draws outside the validity region (non-positive value, κ > 1 or
/// `α_T I_s >= 1`) are rejected. Draw `i` uses substream `i` of `seed`, so the
/// result is bit-identical for any thread count.
pub fn propagate_uncertainty(m: &MeasuredInputs, n_draws: usize, seed: u64) -> Result<SolvedRates> {
    if n_draws < 1000 {
        return Err(Error::domain(format!("n_draws = {n_draws}: at least 1000 draws required")));
    }
    let mut solved = invert(m)?;
    let (x, s) = input_vector(m);
    let unit = m.coeffs.unit;
    let ctx = m.context;

    let draws: Vec<Option<[f64; 7]>> = (0..n_draws as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i);
            let mut y = x;
            for j in 0..6 {
                let z: f64 = StandardNormal.sample(&mut rng);
                y[j] = x[j] + s[j] * z;
            }
            let valid = y.iter().enumerate().all(|(j, &v)| match j {
                1 | 2 => v >= 0.0,
                _ => v > 0.0,
            }) && y[5] <= 1.0;
            if !valid {
                return None;
            }
            invert_point(&y, unit, &ctx).ok().map(|r| r.to_array())
        })
        .collect();

    let accepted: Vec<[f64; 7]> = draws.into_iter().flatten().collect();
    let rejected = n_draws - accepted.len();
    if 2 * rejected > n_draws {
        return Err(Error::Uncertainty { rejected, total: n_draws });
    }

    // Deviations from the central value keep zero-width inputs exactly zero.
    let c = solved.central.to_array();
    let n = accepted.len() as f64;
    let mut std = [0.0; 7];
    for k in 0..7 {
        let mean_dev = accepted.iter().map(|a| a[k] - c[k]).sum::<f64>() / n;
        let ss = accepted.iter().map(|a| (a[k] - c[k] - mean_dev).powi(2)).sum::<f64>();
        std[k] = (ss / (n - 1.0)).sqrt();
    }
    let mc = RateEstimate::from_array(std);

    const NAMES: [&str; 7] = ["sigma", "k_tot", "k_rad", "k_nrad", "k_isc", "k_ph", "phi"];
    let lin = solved.uncertainty.to_array();
    for k in 0..7 {
        let (a, b) = (std[k], lin[k]);
        if a.max(b) > 0.0 && (a - b).abs() > 0.3 * a.max(b) {
            solved.flags.push(SolveFlag::Nonlinear {
                quantity: NAMES[k].to_string(),
                monte_carlo: a,
                linearized: b,
            });
        }
    }
    solved.uncertainty = mc;
    solved.method = UncertaintyMethod::MonteCarlo;
    Ok(solved)
}

/// Collection efficiency that makes the inversion return quantum yield `phi_ref`.
///
/// `κ = α_F / (φ σ)` with σ expressed per unit of the coefficients.
pub fn calibrate_kappa(phi_ref: f64, m: &MeasuredInputs) -> Result<Measured> {
    if !(phi_ref > 0.0 && phi_ref <= 1.0) {
        return Err(Error::domain(format!("reference quantum yield {phi_ref} outside (0, 1]")));
    }
    m.coeffs.central().validate()?;
    let kappa_of = |x: &[f64; 6]| -> Result<f64> {
        let [alpha_f, alpha_t, _, i_s, k_tot, _] = *x;
        let product = alpha_t * i_s;
        if !(product < 1.0) {
            return Err(Error::SaturationInconsistency { product });
        }
        let sigma_per_unit = k_tot * (1.0 - product) / i_s;
        Ok(alpha_f / (phi_ref * sigma_per_unit))
    };
    let (x, s) = input_vector(m);
    let value = kappa_of(&x)?;
    let mut var = 0.0;
    for j in [0, 1, 3, 4] {
        if s[j] == 0.0 {
            continue;
        }
        let h = 1e-6 * x[j].abs().max(s[j]);
        let mut up = x;
        let mut down = x;
        up[j] += h;
        down[j] -= h;
        let g = (kappa_of(&up)? - kappa_of(&down)?) / (2.0 * h);
        var += (g * s[j]).powi(2);
    }
    Ok(Measured::new(value, var.sqrt()))
}

/// One column of a comparison: what went in and what came out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolvedColumn {
    pub inputs: MeasuredInputs,
    pub solved: SolvedRates,
}

impl SolvedColumn {
    pub fn solve(inputs: MeasuredInputs) -> Result<Self> {
        let solved = invert(&inputs)?;
        Ok(SolvedColumn { inputs, solved })
    }
}

/// Aperture-over-solution ratios of every coefficient and rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancementReport {
    /// Brightness enhancement, ratio of the low-power slopes α_F.
    pub eta_f: Measured,
    pub eta_kappa: Measured,
    pub eta_phi: Measured,
    /// Excitation-rate enhancement at equal power, ratio of σ.
    pub eta_sigma_ie: Measured,
    /// `η_κ η_φ η_σIe`; equals `eta_f` exactly by construction of the inversion.
    pub eta_product: Measured,
    pub alpha_t: Measured,
    pub alpha_invtau: Measured,
    pub i_s: Measured,
    pub k_tot: Measured,
    pub k_rad: Measured,
    pub k_nrad: Measured,
    pub k_isc: Measured,
    pub k_ph: Measured,
}

pub fn enhancement(sol: &SolvedColumn, aper: &SolvedColumn) -> Result<EnhancementReport> {
    let (cs, ca) = (&sol.inputs.context, &aper.inputs.context);
    let rel = (cs.power_to_intensity - ca.power_to_intensity).abs() / cs.power_to_intensity;
    if rel > 1e-12 {
        return Err(Error::domain("columns were solved in different excitation contexts"));
    }
    for col in [sol, aper] {
        let c = &col.solved.central;
        for (name, v) in [("k_rad", c.k_rad), ("k_nrad", c.k_nrad), ("k_isc", c.k_isc), ("k_ph", c.k_ph), ("sigma", c.sigma)] {
            if !(v > 0.0) {
                return Err(Error::domain(format!("cannot form ratio: {name} = {v} in a column")));
            }
        }
    }
    let unit = IntensityUnit::Microwatt;
    let a_s = sol.inputs.coeffs.to_unit(unit, cs);
    let a_a = aper.inputs.coeffs.to_unit(unit, cs);
    let ratio_rate = |pick: fn(&RateEstimate) -> f64| {
        Measured::ratio(aper.solved.measured(pick), sol.solved.measured(pick))
    };
    let eta_kappa = Measured::ratio(aper.inputs.kappa, sol.inputs.kappa);
    let eta_phi = ratio_rate(|r| r.phi);
    let eta_sigma_ie = ratio_rate(|r| r.sigma);
    let product = eta_kappa.value * eta_phi.value * eta_sigma_ie.value;
    let product_rel = eta_kappa.relative().hypot(eta_phi.relative()).hypot(eta_sigma_ie.relative());
    Ok(EnhancementReport {
        eta_f: Measured::ratio(a_a.alpha_f, a_s.alpha_f),
        eta_kappa,
        eta_phi,
        eta_sigma_ie,
        eta_product: Measured::new(product, product * product_rel),
        alpha_t: Measured::ratio(a_a.alpha_t, a_s.alpha_t),
        alpha_invtau: Measured::ratio(a_a.alpha_invtau, a_s.alpha_invtau),
        i_s: Measured::ratio(a_a.i_s, a_s.i_s),
        k_tot: ratio_rate(|r| r.k_tot),
        k_rad: ratio_rate(|r| r.k_rad),
        k_nrad: ratio_rate(|r| r.k_nrad),
        k_isc: ratio_rate(|r| r.k_isc),
        k_ph: ratio_rate(|r| r.k_ph),
    })
}
