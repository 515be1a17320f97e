//! Three-level fluorophore (S0, S1, T) under continuous excitation.
//!
//! Canonical units: seconds, s⁻¹, cm² and photons·s⁻¹·cm⁻² for intensity.
//! Laser power in µW is accepted at the boundary through
//! [`ExcitationContext::power_to_intensity`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PLANCK: f64 = 6.626_070_15e-34;
const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

/// Photokinetic rates of the three-level scheme plus the collection efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSet {
    /// Excitation cross-section [cm²].
    pub sigma: f64,
    /// Radiative rate S1 → S0 [s⁻¹].
    pub k_rad: f64,
    /// Internal conversion S1 → S0 [s⁻¹].
    pub k_nrad: f64,
    /// Intersystem crossing S1 → T [s⁻¹].
    pub k_isc: f64,
    /// Triplet deexcitation T → S0 [s⁻¹].
    pub k_ph: f64,
    /// Collection efficiency, in (0, 1].
    pub kappa: f64,
}

impl RateSet {
    pub fn k_tot(&self) -> f64 {
        self.k_rad + self.k_nrad + self.k_isc
    }

    /// Quantum yield `k_rad / k_tot`.
    pub fn phi(&self) -> f64 {
        self.k_rad / self.k_tot()
    }

    /// Singlet decay back to the ground state, `k_rad + k_nrad`.
    pub fn k_singlet(&self) -> f64 {
        self.k_rad + self.k_nrad
    }

    /// Checks finiteness and the sign constraints.
    ///
    /// `k_isc` may be zero (no triplet channel); every other field must be
    /// strictly positive and `kappa <= 1`.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("sigma", self.sigma),
            ("k_rad", self.k_rad),
            ("k_nrad", self.k_nrad),
            ("k_isc", self.k_isc),
            ("k_ph", self.k_ph),
            ("kappa", self.kappa),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::domain(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        for (name, v) in [("sigma", self.sigma), ("k_rad", self.k_rad), ("kappa", self.kappa)] {
            if v == 0.0 {
                return Err(Error::domain(format!("{name} must be strictly positive")));
            }
        }
        if self.k_ph == 0.0 {
            return Err(Error::domain("k_ph = 0: saturation intensity undefined"));
        }
        if self.kappa > 1.0 {
            return Err(Error::domain(format!("kappa = {} exceeds 1", self.kappa)));
        }
        Ok(())
    }

    /// Saturation intensity in photons·s⁻¹·cm⁻².
    pub fn saturation_intensity(&self) -> f64 {
        (self.k_tot() / self.sigma) / (1.0 + self.k_isc / self.k_ph)
    }
}

/// Unit in which excitation intensity is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityUnit {
    /// Laser power at the focus, µW.
    Microwatt,
    /// Photon flux density, photons·s⁻¹·cm⁻².
    PhotonFlux,
}

/// How a quantity scales with the intensity unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntensityDimension {
    /// An intensity (I_e, I_s).
    Intensity,
    /// A slope per unit intensity (α_F, α_T, α_{1/τ}).
    PerIntensity,
}

/// Low-intensity slopes and saturation intensity of the three observables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaturationCoefficients {
    /// Brightness slope [counts·s⁻¹ per unit].
    #[serde(rename = "alpha_F")]
    pub alpha_f: f64,
    /// Triplet-fraction slope [per unit].
    #[serde(rename = "alpha_T")]
    pub alpha_t: f64,
    /// Triplet-rate slope [s⁻¹ per unit].
    pub alpha_invtau: f64,
    /// Saturation intensity [unit].
    #[serde(rename = "I_s")]
    pub i_s: f64,
    pub unit: IntensityUnit,
}

impl SaturationCoefficients {
    /// `alpha_T * I_s`, dimensionless; equals `r / (1 + r)` with `r = k_isc / k_ph`.
    pub fn triplet_saturation(&self) -> f64 {
        self.alpha_t * self.i_s
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("alpha_F", self.alpha_f),
            ("alpha_T", self.alpha_t),
            ("alpha_invtau", self.alpha_invtau),
            ("I_s", self.i_s),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::domain(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        if self.alpha_f == 0.0 || self.i_s == 0.0 {
            return Err(Error::domain("alpha_F and I_s must be strictly positive"));
        }
        let product = self.triplet_saturation();
        if product >= 1.0 {
            return Err(Error::SaturationInconsistency { product });
        }
        Ok(())
    }

    /// Re-expresses every coefficient in `unit`.
    pub fn to_unit(&self, unit: IntensityUnit, ctx: &ExcitationContext) -> SaturationCoefficients {
        use IntensityDimension::*;
        let per = |x| convert_units(x, PerIntensity, self.unit, unit, ctx);
        SaturationCoefficients {
            alpha_f: per(self.alpha_f),
            alpha_t: per(self.alpha_t),
            alpha_invtau: per(self.alpha_invtau),
            i_s: convert_units(self.i_s, Intensity, self.unit, unit, ctx),
            unit,
        }
    }
}

/// Optical context bridging laser power and photon flux density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "ExcitationContextRepr")]
pub struct ExcitationContext {
    /// Excitation wavelength [nm].
    pub wavelength: f64,
    /// Beam waist [nm].
    pub waist: f64,
    /// Photons·s⁻¹·cm⁻² per µW.
    pub power_to_intensity: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExcitationContextRepr {
    wavelength: f64,
    waist: f64,
    #[serde(default)]
    power_to_intensity: Option<f64>,
}

impl From<ExcitationContextRepr> for ExcitationContext {
    fn from(r: ExcitationContextRepr) -> Self {
        match r.power_to_intensity {
            Some(c) => ExcitationContext {
                wavelength: r.wavelength,
                waist: r.waist,
                power_to_intensity: c,
            },
            None => ExcitationContext::from_optics(r.wavelength, r.waist),
        }
    }
}

impl ExcitationContext {
    /// `c_I = 1 µW / (E_photon · π w²)` with `E_photon = h c / λ`.
    pub fn from_optics(wavelength_nm: f64, waist_nm: f64) -> Self {
        let photon_energy = PLANCK * SPEED_OF_LIGHT / (wavelength_nm * 1e-9);
        let waist_cm = waist_nm * 1e-7;
        let area = std::f64::consts::PI * waist_cm * waist_cm;
        ExcitationContext {
            wavelength: wavelength_nm,
            waist: waist_nm,
            power_to_intensity: 1e-6 / (photon_energy * area),
        }
    }

    /// The 488 nm, 220 nm-waist confocal setup.
    pub fn confocal_488() -> Self {
        Self::from_optics(488.0, 220.0)
    }

    pub fn with_power_to_intensity(mut self, c: f64) -> Self {
        self.power_to_intensity = c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.power_to_intensity.is_finite() && self.power_to_intensity > 0.0) {
            return Err(Error::domain("power_to_intensity must be positive"));
        }
        Ok(())
    }

    /// Photon flux density at the focus for a laser power in µW.
    pub fn intensity_from_power(&self, power_uw: f64) -> f64 {
        power_uw * self.power_to_intensity
    }
}

/// Converts `x` between intensity units; per-intensity quantities scale inversely.
pub fn convert_units(
    x: f64,
    dim: IntensityDimension,
    from: IntensityUnit,
    to: IntensityUnit,
    ctx: &ExcitationContext,
) -> f64 {
    use IntensityUnit::*;
    let c = ctx.power_to_intensity;
    // factor: intensity expressed in `to` per intensity expressed in `from`
    let factor = match (from, to) {
        (Microwatt, PhotonFlux) => c,
        (PhotonFlux, Microwatt) => 1.0 / c,
        _ => 1.0,
    };
    match dim {
        IntensityDimension::Intensity => x * factor,
        IntensityDimension::PerIntensity => x / factor,
    }
}

/// Occupation probabilities (S0, S1, T).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeLevelState {
    pub p_s0: f64,
    pub p_s1: f64,
    pub p_t: f64,
}

fn check_intensity(i_e: f64) -> Result<()> {
    if !i_e.is_finite() || i_e < 0.0 {
        return Err(Error::domain(format!("excitation intensity {i_e} must be finite and >= 0")));
    }
    Ok(())
}

/// Stationary distribution of the three-level rate equations at intensity `i_e`
/// (photons·s⁻¹·cm⁻²).
pub fn steady_state(rates: &RateSet, i_e: f64) -> Result<ThreeLevelState> {
    rates.validate()?;
    check_intensity(i_e)?;
    let k_e = rates.sigma * i_e;
    // Balance: p_T k_ph = p_S1 k_isc, p_S0 k_e = p_S1 k_tot.
    let denom = rates.k_tot() + k_e * (1.0 + rates.k_isc / rates.k_ph);
    let p_s1 = k_e / denom;
    let p_t = p_s1 * rates.k_isc / rates.k_ph;
    let p_s0 = rates.k_tot() / denom;
    Ok(ThreeLevelState { p_s0, p_s1, p_t })
}

/// Detected count rate per molecule, `κ φ σ I / (1 + I/I_s)`.
pub fn forward_brightness(rates: &RateSet, i_e: f64) -> Result<f64> {
    rates.validate()?;
    check_intensity(i_e)?;
    let i_s = rates.saturation_intensity();
    Ok(rates.kappa * rates.phi() * rates.sigma * i_e / (1.0 + i_e / i_s))
}

/// Identifies the measurable coefficients of a rate set, expressed in `unit`.
pub fn forward_saturation(
    rates: &RateSet,
    unit: IntensityUnit,
    ctx: &ExcitationContext,
) -> Result<SaturationCoefficients> {
    rates.validate()?;
    ctx.validate()?;
    let k_tot = rates.k_tot();
    let flux = SaturationCoefficients {
        alpha_f: rates.kappa * rates.phi() * rates.sigma,
        alpha_t: rates.sigma * rates.k_isc / (rates.k_ph * k_tot),
        alpha_invtau: rates.sigma * rates.k_isc / rates.k_singlet(),
        i_s: rates.saturation_intensity(),
        unit: IntensityUnit::PhotonFlux,
    };
    Ok(flux.to_unit(unit, ctx))
}

/// Steady-state triplet occupancy `α_T I / (1 + I/I_s)`.
pub fn triplet_fraction(rates: &RateSet, i_e: f64) -> Result<f64> {
    rates.validate()?;
    check_intensity(i_e)?;
    let alpha_t = rates.sigma * rates.k_isc / (rates.k_ph * rates.k_tot());
    Ok(alpha_t * i_e / (1.0 + i_e / rates.saturation_intensity()))
}

/// Triplet relaxation rate `k_ph + σI k_isc / (σI + k_rad + k_nrad)`.
///
/// This is the closed form used for fitting; [`exact_triplet_eigenrate`]
/// gives the exact relaxation rate of the full rate matrix.
pub fn triplet_rate(rates: &RateSet, i_e: f64) -> Result<f64> {
    rates.validate()?;
    check_intensity(i_e)?;
    let k_e = rates.sigma * i_e;
    Ok(rates.k_ph + k_e * rates.k_isc / (k_e + rates.k_singlet()))
}

/// The two nonzero relaxation rates of the three-level kinetic matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletEigenrates {
    /// Smaller magnitude: triplet blinking relaxation.
    pub slow: f64,
    /// Larger magnitude: singlet (antibunching) relaxation.
    pub fast: f64,
    /// Set when the two rates coincide within 1e-9 relative.
    pub degenerate: bool,
}

/// Nonzero eigenvalues (as positive rates) of the generator
/// `{S0→S1: σI, S1→S0: k_rad+k_nrad, S1→T: k_isc, T→S0: k_ph}`.
pub fn exact_triplet_eigenrate(rates: &RateSet, i_e: f64) -> Result<TripletEigenrates> {
    rates.validate()?;
    check_intensity(i_e)?;
    let k_e = rates.sigma * i_e;
    // Characteristic polynomial λ² - bλ + c after factoring out the zero mode.
    let b = k_e + rates.k_tot() + rates.k_ph;
    let c = k_e * (rates.k_isc + rates.k_ph) + rates.k_tot() * rates.k_ph;
    let disc = (b * b - 4.0 * c).max(0.0);
    let root = disc.sqrt();
    let fast = 0.5 * (b + root);
    let slow = c / fast;
    Ok(TripletEigenrates {
        slow,
        fast,
        degenerate: (fast - slow).abs() <= 1e-9 * fast,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3, Vector3};

    pub(crate) fn table1_solution_rates() -> RateSet {
        RateSet {
            sigma: 1.55e-16,
            k_rad: 0.55e8,
            k_nrad: 2.1e8,
            k_isc: 0.8e6,
            k_ph: 1.3e6,
            kappa: 1.3e-3,
        }
    }

    /// Independent route: solve M p = 0 with the normalization row substituted.
    fn linear_solve_oracle(r: &RateSet, i_e: f64) -> Vector3<f64> {
        let k_e = r.sigma * i_e;
        let m = Matrix3::new(
            1.0, 1.0, 1.0,
            k_e, -r.k_tot(), 0.0,
            0.0, r.k_isc, -r.k_ph,
        );
        m.lu().solve(&Vector3::new(1.0, 0.0, 0.0)).unwrap()
    }

    #[test]
    fn dark_state_is_ground() {
        let s = steady_state(&table1_solution_rates(), 0.0).unwrap();
        assert_eq!((s.p_s0, s.p_s1, s.p_t), (1.0, 0.0, 0.0));
    }

    #[test]
    fn saturated_branch_ratio() {
        let r = table1_solution_rates();
        let s = steady_state(&r, 1e35).unwrap();
        assert_relative_eq!(s.p_s1 / s.p_t, r.k_ph / r.k_isc, max_relative = 1e-9);
    }

    #[test]
    fn half_saturation_matches_linear_solve() {
        let r = table1_solution_rates();
        let i_s = 1.05e24;
        let s = steady_state(&r, i_s).unwrap();
        let oracle = linear_solve_oracle(&r, i_s);
        assert_relative_eq!(s.p_s1, oracle[1], max_relative = 1e-12);
        assert_relative_eq!(s.p_t, oracle[2], max_relative = 1e-12);
        // I_s of these rates is 1.00e24, close to the tabulated 1.05e24
        assert!((s.p_s1 - 0.307).abs() < 0.01, "p_S1 = {}", s.p_s1);
        let cross_check = r.sigma * i_s / r.k_tot();
        assert!((cross_check - 0.61).abs() < 0.02);
    }

    #[test]
    fn brightness_limits() {
        let r = table1_solution_rates();
        assert_eq!(forward_brightness(&r, 0.0).unwrap(), 0.0);
        let small = 1e15;
        let slope = r.kappa * r.phi() * r.sigma;
        assert_relative_eq!(forward_brightness(&r, small).unwrap() / small, slope, max_relative = 1e-8);
        let i_s = r.saturation_intensity();
        assert_relative_eq!(forward_brightness(&r, i_s).unwrap(), slope * i_s / 2.0, max_relative = 1e-14);
    }

    #[test]
    fn brightness_at_300_microwatt() {
        // Tabulated α_F = 68 s⁻¹µW⁻¹ and I_s = 1.05e24 through the default c_I.
        let ctx = ExcitationContext::confocal_488();
        let i_s_uw = convert_units(
            1.05e24,
            IntensityDimension::Intensity,
            IntensityUnit::PhotonFlux,
            IntensityUnit::Microwatt,
            &ctx,
        );
        assert!((i_s_uw - 650.0).abs() < 5.0, "{i_s_uw}");
        let fm = 68.0 * 300.0 / (1.0 + 300.0 / i_s_uw);
        assert!((fm - 1.39e4).abs() < 100.0, "{fm}");
    }

    #[test]
    fn no_triplet_coefficients() {
        let mut r = table1_solution_rates();
        r.k_isc = 0.0;
        let c = forward_saturation(&r, IntensityUnit::PhotonFlux, &ExcitationContext::confocal_488()).unwrap();
        assert_eq!(c.alpha_t, 0.0);
        assert_eq!(c.alpha_invtau, 0.0);
        assert_relative_eq!(c.i_s, r.k_tot() / r.sigma, max_relative = 1e-15);
    }

    #[test]
    fn zero_k_ph_is_rejected() {
        let mut r = table1_solution_rates();
        r.k_ph = 0.0;
        let err = forward_saturation(&r, IntensityUnit::PhotonFlux, &ExcitationContext::confocal_488());
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn negative_or_nan_rates_are_domain_errors() {
        let mut r = table1_solution_rates();
        r.k_nrad = -1.0;
        assert!(steady_state(&r, 1.0).is_err());
        r.k_nrad = f64::NAN;
        assert!(steady_state(&r, 1.0).is_err());
        assert!(steady_state(&table1_solution_rates(), -1.0).is_err());
    }

    #[test]
    fn tabulated_rates_reproduce_coefficients() {
        // Table 1 solution column, measured rows with their ± in µW units.
        let r = table1_solution_rates();
        let ctx = ExcitationContext::confocal_488();
        let c = forward_saturation(&r, IntensityUnit::Microwatt, &ctx).unwrap();
        let flux = forward_saturation(&r, IntensityUnit::PhotonFlux, &ctx).unwrap();
        // κ is calibrated rather than tabulated; 1.3e-3 gives α_F close to 68.
        assert!((c.alpha_f - 68.0).abs() < 2.0, "alpha_F {}", c.alpha_f);
        assert!((c.alpha_t - 0.62e-3).abs() < 0.05e-3, "alpha_T {}", c.alpha_t);
        assert!((c.alpha_invtau - 780.0).abs() < 50.0, "alpha_invtau {}", c.alpha_invtau);
        assert!((flux.i_s - 1.05e24).abs() < 0.05e24, "I_s {}", flux.i_s);
    }

    #[test]
    fn triplet_limits() {
        let r = table1_solution_rates();
        assert_eq!(triplet_fraction(&r, 0.0).unwrap(), 0.0);
        assert_eq!(triplet_rate(&r, 0.0).unwrap(), r.k_ph);
        let big = 1e40;
        let a = forward_saturation(&r, IntensityUnit::PhotonFlux, &ExcitationContext::confocal_488()).unwrap();
        assert_relative_eq!(triplet_fraction(&r, big).unwrap(), a.alpha_t * a.i_s, max_relative = 1e-9);
        assert_relative_eq!(triplet_rate(&r, big).unwrap(), r.k_ph + r.k_isc, max_relative = 1e-9);
    }

    #[test]
    fn triplet_fraction_at_saturation() {
        let r = table1_solution_rates();
        let t = triplet_fraction(&r, r.saturation_intensity()).unwrap();
        assert!((t - 0.20).abs() < 0.02, "{t}");
    }

    #[test]
    fn eigenrate_limits() {
        let mut r = table1_solution_rates();
        r.k_isc = 0.0;
        let e = exact_triplet_eigenrate(&r, 1e24).unwrap();
        assert_relative_eq!(e.slow, r.k_ph, max_relative = 1e-12);

        let mut sym = table1_solution_rates();
        sym.k_isc = 1e6;
        sym.k_ph = 1e6;
        let e = exact_triplet_eigenrate(&sym, 1e30).unwrap();
        assert_relative_eq!(e.slow, 2.0 * sym.k_ph, max_relative = 1e-4);
    }

    #[test]
    fn eigenrate_matches_matrix_eigenvalues() {
        let r = table1_solution_rates();
        let i_e = 7e23;
        let k_e = r.sigma * i_e;
        let m = Matrix3::new(
            -k_e, r.k_singlet(), r.k_ph,
            k_e, -r.k_tot(), 0.0,
            0.0, r.k_isc, -r.k_ph,
        );
        let mut ev: Vec<f64> = m.complex_eigenvalues().iter().map(|z| -z.re).collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let e = exact_triplet_eigenrate(&r, i_e).unwrap();
        assert!(ev[0].abs() < 1e-6 * ev[2]);
        assert_relative_eq!(e.slow, ev[1], max_relative = 1e-6);
        assert_relative_eq!(e.fast, ev[2], max_relative = 1e-9);
    }

    #[test]
    fn default_power_conversion() {
        let ctx = ExcitationContext::confocal_488();
        assert!((ctx.power_to_intensity - 1.62e21).abs() < 0.01e21, "{}", ctx.power_to_intensity);
        let unit = ctx.with_power_to_intensity(1.0);
        for dim in [IntensityDimension::Intensity, IntensityDimension::PerIntensity] {
            assert_eq!(
                convert_units(3.5, dim, IntensityUnit::Microwatt, IntensityUnit::PhotonFlux, &unit),
                3.5
            );
        }
    }

    #[test]
    fn context_json_computes_missing_conversion() {
        let ctx: ExcitationContext = serde_json::from_str(r#"{"wavelength":488,"waist":220}"#).unwrap();
        assert_eq!(ctx, ExcitationContext::confocal_488());
        let ctx: ExcitationContext =
            serde_json::from_str(r#"{"wavelength":488,"waist":220,"power_to_intensity":2.0}"#).unwrap();
        assert_eq!(ctx.power_to_intensity, 2.0);
    }
}
