//! Estimator consistency: fitted parameters approach the generating values
//! as the synthetic noise shrinks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use nanofcs::correlator::{eval_model, CorrelationCurve, FcsModelParams};
use nanofcs::fit::{fit_fcs, fit_lifetime, fit_power_series, simulate_decay, FcsFixed, PowerFitOptions, PowerRow, PowerSeriesData};
use nanofcs::solver::Measured;
use nanofcs::IntensityUnit;

const NOISE: [f64; 3] = [0.03, 0.01, 0.003];
const SEEDS: u64 = 6;

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Mean over seeds of the largest relative parameter error, per noise level.
fn error_ladder(mut worst: impl FnMut(f64, u64) -> f64) -> Vec<f64> {
    NOISE
        .iter()
        .map(|&noise| (0..SEEDS).map(|seed| worst(noise, seed)).sum::<f64>() / SEEDS as f64)
        .collect()
}

fn assert_consistent(name: &str, ladder: &[f64], final_bound: f64) {
    assert!(ladder.windows(2).all(|w| w[1] < w[0]), "{name}: {ladder:?}");
    assert!(ladder[2] <= final_bound, "{name}: {ladder:?}");
}

#[test]
fn fcs_fit_is_consistent() {
    let truth = FcsModelParams { n_tot: 2.0, n_t: 0.25, tau_bt: 1e-6, tau_d: 1.7e-4, s: 0.2, b_over_i: 0.1 };
    let lags: Vec<f64> = (0..150).map(|i| 1e-8 * 10f64.powf(i as f64 / 25.0)).collect();
    let clean = eval_model(&truth, &lags).unwrap();
    let ladder = error_ladder(|noise, seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stderr: Vec<f64> = clean.iter().map(|g| noise * (g - 1.0).max(1e-3)).collect();
        let mut csv = String::from("lag_s,g2,stderr\n");
        for ((t, g), e) in lags.iter().zip(&clean).zip(&stderr) {
            csv.push_str(&format!("{t:e},{:e},{e:e}\n", g + e * gauss(&mut rng)));
        }
        let curve = CorrelationCurve::from_csv(&csv).unwrap();
        let f = fit_fcs(&curve, None, FcsFixed { b_over_i: Some(0.1), ..Default::default() }).unwrap();
        let (got, want) = (f.params.to_array(), truth.to_array());
        (0..5).map(|k| rel(got[k], want[k])).fold(0.0, f64::max)
    });
    assert_consistent("fcs", &ladder, 0.05);
}

#[test]
fn power_fit_is_consistent() {
    // per-µW coefficients in the regime of the reference solution column
    let (alpha_f, alpha_t, alpha, u, k_ph) = (68.0, 5.8e-4, 780.0, 1.0 / 656.0, 1.3e6);
    let powers = [50.0, 100.0, 200.0, 300.0, 450.0, 600.0, 800.0, 1000.0];
    let ladder = error_ladder(|noise, seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut noisy = |v: f64| Measured::new(v * (1.0 + noise * gauss(&mut rng)), noise * v);
        let rows = powers
            .iter()
            .map(|&x| PowerRow {
                x,
                f_m: noisy(alpha_f * x / (1.0 + u * x)),
                t_eq: noisy(alpha_t * x / (1.0 + u * x)),
                inv_tau: noisy(k_ph + alpha * x / (1.0 + x * (u - alpha_t))),
            })
            .collect();
        let data = PowerSeriesData { rows, unit: IntensityUnit::Microwatt };
        let f = fit_power_series(&data, PowerFitOptions::default()).unwrap();
        let c = &f.coeffs;
        [
            rel(c.alpha_f.value, alpha_f),
            rel(c.alpha_t.value, alpha_t),
            rel(c.alpha_invtau.value, alpha),
            rel(c.i_s.value, 1.0 / u),
            rel(f.k_ph.value, k_ph),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    });
    assert_consistent("power series", &ladder, 0.25);
}

#[test]
fn lifetime_fit_is_consistent() {
    // Poisson noise of the peak bins falls with the photon count
    let photons = [10_000u64, 100_000, 1_000_000];
    let ladder: Vec<f64> = photons
        .iter()
        .map(|&n| {
            (0..SEEDS)
                .map(|seed| {
                    let h = simulate_decay(3.8, 0.85, n, 0.01, 200 + seed).unwrap();
                    rel(fit_lifetime(&h).unwrap().tau_tot.value, 3.8)
                })
                .sum::<f64>()
                / SEEDS as f64
        })
        .collect();
    assert_consistent("lifetime", &ladder, 0.005);
}
