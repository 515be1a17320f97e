//! Randomized invariants shared by the property tests and the acceptance run.

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed, TestCaseError, TestRunner};

use nanofcs::io;
use nanofcs::model::{
    exact_triplet_eigenrate, forward_brightness, forward_saturation, steady_state, triplet_fraction, triplet_rate,
};
use nanofcs::solver::{enhancement, invert, propagate_uncertainty, Measured, MeasuredCoefficients, SolvedColumn};
use nanofcs::{ExcitationContext, IntensityUnit, MeasuredInputs, RateSet};

pub const MASTER_SEED: u64 = 20_240_601;

fn log_uniform(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo.ln()..hi.ln()).prop_map(f64::exp)
}

/// Physical rate sets spanning dyes in solution and near metal.
pub fn rate_set() -> impl Strategy<Value = RateSet> {
    (
        log_uniform(1e-17, 1e-14),
        log_uniform(1e7, 5e9),
        log_uniform(1e6, 5e9),
        log_uniform(1e3, 1e7),
        log_uniform(1e3, 1e7),
        log_uniform(1e-4, 0.5),
    )
        .prop_map(|(sigma, k_rad, k_nrad, k_isc, k_ph, kappa)| RateSet { sigma, k_rad, k_nrad, k_isc, k_ph, kappa })
}

/// Rate sets whose triplet rates are at most 1% of `k_tot`.
pub fn slow_triplet_rate_set() -> impl Strategy<Value = RateSet> {
    (rate_set(), 1e-4f64..1e-2, 1e-4f64..1e-2).prop_map(|(mut r, fi, fp)| {
        let k_s = r.k_rad + r.k_nrad;
        r.k_isc = fi * k_s;
        r.k_ph = fp * (k_s + r.k_isc);
        r
    })
}

/// Rate sets in the regime of the leading-order inversion: `k_isc` at most
/// 1% of the singlet decay and below half of `k_nrad`.
pub fn physical_rate_set() -> impl Strategy<Value = RateSet> {
    (rate_set(), 1e-6f64..1e-2).prop_map(|(mut r, f)| {
        r.k_isc = (f * (r.k_rad + r.k_nrad)).min(0.5 * r.k_nrad);
        r
    })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn exact_inputs(r: &RateSet, ctx: ExcitationContext) -> MeasuredInputs {
    let c = forward_saturation(r, IntensityUnit::Microwatt, &ctx).unwrap();
    MeasuredInputs {
        coeffs: MeasuredCoefficients::from_exact(&c),
        k_tot: Measured::exact(r.k_tot()),
        kappa: Measured::exact(r.kappa),
        context: ctx,
    }
}

pub fn normalization(r: RateSet, x: f64) -> Result<(), TestCaseError> {
    let i = x * r.saturation_intensity();
    let s = steady_state(&r, i).unwrap();
    prop_assert!((s.p_s0 + s.p_s1 + s.p_t - 1.0).abs() <= 1e-12);
    prop_assert!(s.p_s0 >= 0.0 && s.p_s1 >= 0.0 && s.p_t >= 0.0);
    Ok(())
}

pub fn closed_form_brightness(r: RateSet, x: f64) -> Result<(), TestCaseError> {
    let i = x * r.saturation_intensity();
    let f = forward_brightness(&r, i).unwrap();
    let s = steady_state(&r, i).unwrap();
    prop_assert!(rel(f, r.kappa * r.k_rad * s.p_s1) <= 1e-12, "{f}");
    Ok(())
}

pub fn half_saturation(r: RateSet) -> Result<(), TestCaseError> {
    let i_s = r.saturation_intensity();
    let alpha_f = r.kappa * r.phi() * r.sigma;
    prop_assert!(rel(forward_brightness(&r, i_s).unwrap(), alpha_f * i_s / 2.0) <= 1e-14);
    Ok(())
}

pub fn monotonicity(r: RateSet, x1: f64, x2: f64) -> Result<(), TestCaseError> {
    let (lo, hi) = if x1 < x2 { (x1, x2) } else { (x2, x1) };
    prop_assume!(hi > lo * (1.0 + 1e-6));
    let i_s = r.saturation_intensity();
    let (a, b) = (lo * i_s, hi * i_s);
    prop_assert!(forward_brightness(&r, b).unwrap() > forward_brightness(&r, a).unwrap());
    prop_assert!(triplet_fraction(&r, b).unwrap() > triplet_fraction(&r, a).unwrap());
    let (ta, tb) = (triplet_rate(&r, a).unwrap(), triplet_rate(&r, b).unwrap());
    prop_assert!(tb >= ta);
    prop_assert!(tb <= (r.k_ph + r.k_isc) * (1.0 + 1e-15));
    Ok(())
}

pub fn triplet_rate_approximation(r: RateSet, x: f64) -> Result<(), TestCaseError> {
    let i = x * r.saturation_intensity();
    let exact = exact_triplet_eigenrate(&r, i).unwrap().slow;
    prop_assert!(rel(triplet_rate(&r, i).unwrap(), exact) <= 0.05);
    Ok(())
}

/// σ and k_rad exactly; k_isc, k_ph and k_nrad within `k_isc/k_tot`,
/// relative to the recovered value.
pub fn inversion_round_trip(r: RateSet) -> Result<(), TestCaseError> {
    let s = invert(&exact_inputs(&r, ExcitationContext::confocal_488())).unwrap().central;
    prop_assert!(rel(s.sigma, r.sigma) <= 1e-10, "sigma {} vs {}", s.sigma, r.sigma);
    prop_assert!(rel(s.k_rad, r.k_rad) <= 1e-10, "k_rad {} vs {}", s.k_rad, r.k_rad);
    let bound = r.k_isc / r.k_tot() + 1e-10;
    prop_assert!(rel(r.k_isc, s.k_isc) <= bound, "k_isc {} vs {}", s.k_isc, r.k_isc);
    prop_assert!(rel(r.k_ph, s.k_ph) <= bound, "k_ph {} vs {}", s.k_ph, r.k_ph);
    prop_assert!(rel(r.k_nrad, s.k_nrad) <= bound, "k_nrad {} vs {}", s.k_nrad, r.k_nrad);
    Ok(())
}

pub fn power_bridge_covariance(r: RateSet, lambda: f64) -> Result<(), TestCaseError> {
    let ctx = ExcitationContext::confocal_488();
    let base = exact_inputs(&r, ctx);
    let scaled = MeasuredInputs { context: ctx.with_power_to_intensity(ctx.power_to_intensity * lambda), ..base.clone() };
    let (a, b) = (invert(&base).unwrap().central, invert(&scaled).unwrap().central);
    for (x, y) in [(a.k_rad, b.k_rad), (a.k_nrad, b.k_nrad), (a.k_isc, b.k_isc), (a.k_ph, b.k_ph), (a.phi, b.phi)] {
        prop_assert!(rel(y, x) <= 1e-12, "{x} vs {y}");
    }
    prop_assert!(rel(b.sigma * lambda, a.sigma) <= 1e-12);
    Ok(())
}

pub fn enhancement_factorization(s: RateSet, a: RateSet) -> Result<(), TestCaseError> {
    let ctx = ExcitationContext::confocal_488();
    let cs = SolvedColumn::solve(exact_inputs(&s, ctx)).unwrap();
    let ca = SolvedColumn::solve(exact_inputs(&a, ctx)).unwrap();
    let e = enhancement(&cs, &ca).unwrap();
    let alpha_ratio = ca.inputs.coeffs.alpha_f.value / cs.inputs.coeffs.alpha_f.value;
    prop_assert!(rel(e.eta_f.value, alpha_ratio) <= 1e-12);
    let product = (a.kappa / s.kappa) * (ca.solved.central.phi / cs.solved.central.phi)
        * (ca.solved.central.sigma / cs.solved.central.sigma);
    prop_assert!(rel(e.eta_product.value, product) <= 1e-12);
    prop_assert!(rel(e.eta_product.value, e.eta_f.value) <= 1e-10);
    Ok(())
}

pub fn monte_carlo_determinism(r: RateSet, seed: u64) -> Result<(), TestCaseError> {
    let mut m = exact_inputs(&r, ExcitationContext::confocal_488());
    let spread = |v: Measured| Measured::new(v.value, 0.02 * v.value);
    m.coeffs.alpha_f = spread(m.coeffs.alpha_f);
    m.coeffs.i_s = spread(m.coeffs.i_s);
    m.k_tot = spread(m.k_tot);
    let (Ok(a), Ok(b)) = (propagate_uncertainty(&m, 64, seed), propagate_uncertainty(&m, 64, seed)) else {
        return Ok(());
    };
    prop_assert_eq!(a, b);
    Ok(())
}

pub fn emitted_json_revalidates(r: RateSet) -> Result<(), TestCaseError> {
    let col = SolvedColumn::solve(exact_inputs(&r, ExcitationContext::confocal_488())).unwrap();
    let back: SolvedColumn = io::parse_json(&io::to_json_pretty(&col)).unwrap();
    prop_assert_eq!(back, col);
    Ok(())
}

fn runner(cases: u32, salt: u64) -> TestRunner {
    TestRunner::new(Config { cases, rng_seed: RngSeed::Fixed(MASTER_SEED ^ salt), failure_persistence: None, ..Config::default() })
}

/// Runs one named property; `Err` carries the minimal failing case.
pub fn check(name: &str, cases: u32) -> Result<(), String> {
    let salt = name.bytes().fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
    let mut run = runner(cases, salt);
    let unit = 0.0f64..2.0;
    let result = match name {
        "normalization" => run.run(&(rate_set(), log_uniform(1e-6, 1e3)), |(r, x)| normalization(r, x)).map_err(|e| e.to_string()),
        "closed_form_brightness" => run.run(&(rate_set(), log_uniform(1e-6, 1e3)), |(r, x)| closed_form_brightness(r, x)).map_err(|e| e.to_string()),
        "half_saturation" => run.run(&rate_set(), half_saturation).map_err(|e| e.to_string()),
        "monotonicity" => run.run(&(rate_set(), log_uniform(1e-4, 10.0), log_uniform(1e-4, 10.0)), |(r, a, b)| monotonicity(r, a, b)).map_err(|e| e.to_string()),
        "triplet_rate_approximation" => run.run(&(slow_triplet_rate_set(), unit), |(r, x)| triplet_rate_approximation(r, x)).map_err(|e| e.to_string()),
        "inversion_round_trip" => run.run(&physical_rate_set(), inversion_round_trip).map_err(|e| e.to_string()),
        "power_bridge_covariance" => run.run(&(rate_set(), log_uniform(0.01, 100.0)), |(r, l)| power_bridge_covariance(r, l)).map_err(|e| e.to_string()),
        "enhancement_factorization" => run.run(&(physical_rate_set(), physical_rate_set()), |(s, a)| enhancement_factorization(s, a)).map_err(|e| e.to_string()),
        "monte_carlo_determinism" => run.run(&(rate_set(), any::<u64>()), |(r, s)| monte_carlo_determinism(r, s)).map_err(|e| e.to_string()),
        "emitted_json_revalidates" => run.run(&rate_set(), emitted_json_revalidates).map_err(|e| e.to_string()),
        other => return Err(format!("unknown property {other}")),
    };
    result
}

pub const PROPERTIES: [&str; 10] = [
    "normalization",
    "closed_form_brightness",
    "half_saturation",
    "monotonicity",
    "triplet_rate_approximation",
    "inversion_round_trip",
    "power_bridge_covariance",
    "enhancement_factorization",
    "monte_carlo_determinism",
    "emitted_json_revalidates",
];
