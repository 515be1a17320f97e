//! Reference measurements for rhodamine 6G in water:glycerol (3:1), in open
//! solution and inside a 150 nm aluminium aperture, 488 nm excitation.
//!
//! Coefficients are stored in the units they were reported in; constructors
//! convert them into a single unit through the default power bridge.

use crate::model::{
    convert_units, ExcitationContext, IntensityDimension, IntensityUnit, RateSet,
};
use crate::solver::{calibrate_kappa, Measured, MeasuredCoefficients, MeasuredInputs};

/// Quantum yield used to calibrate the solution collection efficiency.
pub const PHI_SOLUTION: f64 = 0.21;
/// Collection-efficiency gain of the aperture.
pub const KAPPA_GAIN: Measured = Measured { value: 1.25, sigma: 0.2 };
/// IRF time constant of the lifetime setup [ns].
pub const TAU_IRF_NS: f64 = 0.85;
/// Typical background count rate [counts/s].
pub const BACKGROUND_CPS: f64 = 12_000.0;

/// One column of reported coefficients.
#[derive(Debug, Clone, Copy)]
pub struct ReportedColumn {
    /// counts·s⁻¹·µW⁻¹
    pub alpha_f: Measured,
    /// µW⁻¹
    pub alpha_t: Measured,
    /// s⁻¹·µW⁻¹
    pub alpha_invtau: Measured,
    /// photons·s⁻¹·cm⁻²
    pub i_s: Measured,
    /// s⁻¹
    pub k_tot: Measured,
}

/// Derived rows as reported: σ [cm²], k_rad, k_nrad, k_isc, k_ph [s⁻¹], φ.
#[derive(Debug, Clone, Copy)]
pub struct ReportedRates {
    pub sigma: Measured,
    pub k_rad: Measured,
    pub k_nrad: Measured,
    pub k_isc: Measured,
    pub k_ph: Measured,
    pub phi: Measured,
}

pub const SOLUTION: ReportedColumn = ReportedColumn {
    alpha_f: Measured { value: 0.068e3, sigma: 0.002e3 },
    alpha_t: Measured { value: 0.62e-3, sigma: 0.05e-3 },
    alpha_invtau: Measured { value: 0.78e3, sigma: 0.05e3 },
    i_s: Measured { value: 1.05e24, sigma: 0.05e24 },
    k_tot: Measured { value: 2.65e8, sigma: 0.10e8 },
};

pub const APERTURE: ReportedColumn = ReportedColumn {
    alpha_f: Measured { value: 1.03e3, sigma: 0.03e3 },
    alpha_t: Measured { value: 1.20e-3, sigma: 0.05e-3 },
    alpha_invtau: Measured { value: 2.5e3, sigma: 0.1e3 },
    i_s: Measured { value: 1.03e24, sigma: 0.05e24 },
    k_tot: Measured { value: 33e8, sigma: 3e8 },
};

pub const SOLUTION_RATES: ReportedRates = ReportedRates {
    sigma: Measured { value: 1.55e-16, sigma: 0.15e-16 },
    k_rad: Measured { value: 0.55e8, sigma: 0.05e8 },
    k_nrad: Measured { value: 2.1e8, sigma: 0.3e8 },
    k_isc: Measured { value: 0.8e6, sigma: 0.1e6 },
    k_ph: Measured { value: 1.3e6, sigma: 0.1e6 },
    phi: Measured { value: 0.21, sigma: 0.02 },
};

pub const APERTURE_RATES: ReportedRates = ReportedRates {
    sigma: Measured { value: 8.7e-16, sigma: 1.7e-16 },
    k_rad: Measured { value: 15e8, sigma: 3e8 },
    k_nrad: Measured { value: 18e8, sigma: 5e8 },
    k_isc: Measured { value: 5.7e6, sigma: 1.1e6 },
    k_ph: Measured { value: 2.1e6, sigma: 0.2e6 },
    phi: Measured { value: 0.45, sigma: 0.1 },
};

/// Reported aperture/solution ratios, in report row order
/// (α_F, α_T, α_{1/τ}, I_s, σ, k_tot, k_rad, k_nrad, k_isc, k_ph, φ).
pub const ENHANCEMENT: [Measured; 11] = [
    Measured { value: 15.1, sigma: 0.6 },
    Measured { value: 1.9, sigma: 0.2 },
    Measured { value: 3.2, sigma: 0.2 },
    Measured { value: 0.98, sigma: 0.07 },
    Measured { value: 5.6, sigma: 1.2 },
    Measured { value: 12.5, sigma: 1.2 },
    Measured { value: 27.0, sigma: 6.0 },
    Measured { value: 8.6, sigma: 2.7 },
    Measured { value: 7.1, sigma: 1.6 },
    Measured { value: 1.6, sigma: 0.2 },
    Measured { value: 2.2, sigma: 0.4 },
];

pub fn context() -> ExcitationContext {
    ExcitationContext::confocal_488()
}

/// Solution rates as a [`RateSet`] with the calibrated κ ≈ 1.3e-3.
pub fn solution_rate_set() -> RateSet {
    RateSet {
        sigma: SOLUTION_RATES.sigma.value,
        k_rad: SOLUTION_RATES.k_rad.value,
        k_nrad: SOLUTION_RATES.k_nrad.value,
        k_isc: SOLUTION_RATES.k_isc.value,
        k_ph: SOLUTION_RATES.k_ph.value,
        kappa: 1.3e-3,
    }
}

/// Aperture rates as a [`RateSet`] with κ = 1.25 × 1.3e-3.
pub fn aperture_rate_set() -> RateSet {
    RateSet {
        sigma: APERTURE_RATES.sigma.value,
        k_rad: APERTURE_RATES.k_rad.value,
        k_nrad: APERTURE_RATES.k_nrad.value,
        k_isc: APERTURE_RATES.k_isc.value,
        k_ph: APERTURE_RATES.k_ph.value,
        kappa: 1.25 * 1.3e-3,
    }
}

/// Coefficients of a column in µW units, I_s converted with the context's c_I.
pub fn coefficients(col: &ReportedColumn, ctx: &ExcitationContext) -> MeasuredCoefficients {
    let to_uw = |x: f64| {
        convert_units(
            x,
            IntensityDimension::Intensity,
            IntensityUnit::PhotonFlux,
            IntensityUnit::Microwatt,
            ctx,
        )
    };
    MeasuredCoefficients {
        alpha_f: col.alpha_f,
        alpha_t: col.alpha_t,
        alpha_invtau: col.alpha_invtau,
        i_s: Measured::new(to_uw(col.i_s.value), to_uw(col.i_s.sigma)),
        unit: IntensityUnit::Microwatt,
    }
}

fn inputs_with_kappa(col: &ReportedColumn, kappa: Measured) -> MeasuredInputs {
    let ctx = context();
    MeasuredInputs {
        coeffs: coefficients(col, &ctx),
        k_tot: col.k_tot,
        kappa,
        context: ctx,
    }
}

/// κ of the solution column calibrated so that φ = 0.21.
///
/// The calibration is treated as exact: its spread already lives in the
/// coefficients it was computed from.
pub fn solution_kappa() -> Measured {
    let probe = inputs_with_kappa(&SOLUTION, Measured::exact(1.0));
    let k = calibrate_kappa(PHI_SOLUTION, &probe).expect("reference coefficients are consistent");
    Measured::exact(k.value)
}

pub fn solution_inputs() -> MeasuredInputs {
    inputs_with_kappa(&SOLUTION, solution_kappa())
}

/// Aperture inputs with κ_aper = 1.25 κ_sol.
pub fn aperture_inputs() -> MeasuredInputs {
    let k = solution_kappa().value;
    inputs_with_kappa(
        &APERTURE,
        Measured::new(KAPPA_GAIN.value * k, KAPPA_GAIN.sigma * k),
    )
}
