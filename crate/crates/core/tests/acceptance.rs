//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

mod common;

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nanofcs::correlator::{correlate, correlate_stream, eval_model, FcsModelParams, MultiTauScheme};
use nanofcs::fit::{fit_fcs, fit_lifetime, simulate_decay, FcsFixed};
use nanofcs::io;
use nanofcs::model::{exact_triplet_eigenrate, forward_saturation, triplet_rate};
use nanofcs::pipeline::{self, KappaConfig, PipelineConfig, Scenario, ScenarioConfig};
use nanofcs::reference::{self, ReportedRates};
use nanofcs::sim::{simulate, PhotonStream, SimConfig};
use nanofcs::solver::{enhancement, Measured, SolvedColumn};
use nanofcs::IntensityUnit;

type Outcome = Result<String, String>;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn timed(limit: Duration, started: Instant, detail: String, ok: bool) -> Outcome {
    let elapsed = started.elapsed();
    let detail = format!("{detail}; {:.2} s (limit {} s)", elapsed.as_secs_f64(), limit.as_secs());
    if ok && elapsed <= limit {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn solve_cli(dir: &Path) -> Result<(SolvedColumn, SolvedColumn), String> {
    let bin = env!("CARGO_BIN_EXE_nanofcs");
    let sol_in = dir.join("solution_inputs.json");
    let aper_in = dir.join("aperture_inputs.json");
    let sol_out = dir.join("solution.json");
    let aper_out = dir.join("aperture.json");
    io::write_json(&sol_in, &reference::solution_inputs()).map_err(|e| e.to_string())?;
    io::write_json(&aper_in, &reference::aperture_inputs()).map_err(|e| e.to_string())?;
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin).args(args).output().map_err(|e| e.to_string())?;
        if out.status.success() {
            Ok(())
        } else {
            Err(String::from_utf8_lossy(&out.stderr).into_owned())
        }
    };
    let p = |x: &Path| x.to_str().unwrap().to_owned();
    run(&["solve-rates", "--input", &p(&sol_in), "--calibrate-phi", "0.21", "--out", &p(&sol_out)])?;
    run(&[
        "solve-rates",
        "--input",
        &p(&aper_in),
        "--kappa-from",
        &p(&sol_out),
        "--kappa-gain",
        "1.25",
        "--kappa-gain-sigma",
        "0.2",
        "--out",
        &p(&aper_out),
    ])?;
    let read = |x: &Path| io::read_json::<SolvedColumn>(x).map_err(|e| e.to_string());
    Ok((read(&sol_out)?, read(&aper_out)?))
}

fn derived_rows(col: &SolvedColumn, table: &ReportedRates) -> Vec<(&'static str, f64, Measured)> {
    let c = &col.solved.central;
    vec![
        ("sigma", c.sigma, table.sigma),
        ("k_rad", c.k_rad, table.k_rad),
        ("k_nrad", c.k_nrad, table.k_nrad),
        ("k_isc", c.k_isc, table.k_isc),
        ("k_ph", c.k_ph, table.k_ph),
        ("phi", c.phi, table.phi),
    ]
}

fn criterion_1(dir: &Path) -> (Outcome, Option<(SolvedColumn, SolvedColumn)>) {
    let started = Instant::now();
    let (sol, aper) = match solve_cli(dir) {
        Ok(c) => c,
        Err(e) => return (Err(format!("solve-rates failed: {e}")), None),
    };
    let mut misses = Vec::new();
    for (name, col, table) in [("solution", &sol, &reference::SOLUTION_RATES), ("aperture", &aper, &reference::APERTURE_RATES)] {
        for (row, got, want) in derived_rows(col, table) {
            let tol = want.sigma.max(0.2 * want.value.abs());
            if !((got - want.value).abs() <= tol) {
                misses.push(format!("{name}.{row} = {got:.4e} vs {:.4e} ± {tol:.2e}", want.value));
            }
        }
    }
    let detail = if misses.is_empty() {
        "12 derived rows within max(±, 20%)".to_owned()
    } else {
        misses.join(", ")
    };
    (timed(Duration::from_secs(1), started, detail, misses.is_empty()), Some((sol, aper)))
}

fn criterion_2(cols: Option<&(SolvedColumn, SolvedColumn)>) -> Outcome {
    let (sol, aper) = cols.ok_or("no criterion 1 output")?;
    let e = enhancement(sol, aper).map_err(|e| e.to_string())?;
    let checks = [
        ("eta_F", e.eta_f.value, 15.1, 0.6),
        ("eta_sigmaIe", e.eta_sigma_ie.value, 5.6, 1.2),
        ("eta_phi", e.eta_phi.value, 2.2, 0.4),
        ("k_rad ratio", e.k_rad.value, 27.0, 6.0),
        ("k_tot ratio", e.k_tot.value, 12.5, 1.2),
    ];
    let mut parts: Vec<String> = Vec::new();
    let mut ok = true;
    for (name, got, want, pm) in checks {
        ok &= (got - want).abs() <= pm;
        parts.push(format!("{name} {got:.3}"));
    }
    let product = e.eta_kappa.value * e.eta_phi.value * e.eta_sigma_ie.value;
    ok &= (13.0..=17.0).contains(&product);
    parts.push(format!("product {product:.3}"));
    let detail = parts.join(", ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_3() -> Outcome {
    let started = Instant::now();
    let res = common::check("inversion_round_trip", 1000);
    let detail = match &res {
        Ok(()) => "1000 random rate sets recovered".to_owned(),
        Err(e) => e.clone(),
    };
    timed(Duration::from_secs(5), started, detail, res.is_ok())
}

fn criterion_4(dir: &Path) -> Outcome {
    let started = Instant::now();
    let cfg = PipelineConfig {
        scenarios: vec![ScenarioConfig {
            scenario: Scenario::Solution,
            sim: Default::default(),
            occupancy: Some(2.0),
            box_margin: 10.0,
            kappa: KappaConfig::Calibrate { phi: reference::PHI_SOLUTION },
            fcs: None,
            lifetime: Default::default(),
        }],
        powers: vec![100.0, 200.0, 300.0, 400.0, 500.0, 600.0],
        context: reference::context(),
        seed: 2024,
        repeats: 3,
        correlator: MultiTauScheme::default(),
        power_fit: Default::default(),
        output_dir: None,
    };
    let result = pipeline::run(&cfg, &dir.join("pipeline")).map_err(|e| e.to_string())?;
    let fitted = &result.scenario(Scenario::Solution).ok_or("no solution result")?.power_fit.coeffs;
    let truth = forward_saturation(&reference::solution_rate_set(), IntensityUnit::Microwatt, &reference::context())
        .map_err(|e| e.to_string())?;
    let span = (cfg.powers[0] / truth.i_s, cfg.powers[5] / truth.i_s);
    let checks = [
        ("alpha_F", fitted.alpha_f, truth.alpha_f, 0.15),
        ("alpha_T", fitted.alpha_t, truth.alpha_t, 0.15),
        ("alpha_1/tau", fitted.alpha_invtau, truth.alpha_invtau, 0.15),
        ("I_s", fitted.i_s, truth.i_s, 0.25),
    ];
    let mut ok = true;
    let mut parts = vec![format!("P/I_s {:.2}..{:.2}", span.0, span.1)];
    for (name, got, want, tol) in checks {
        let r = rel(got.value, want);
        ok &= r <= tol;
        parts.push(format!("{name} {:.4e} ± {:.1e} vs {want:.4e} ({:.1}%, limit {:.0}%)", got.value, got.sigma, 100.0 * r, 100.0 * tol));
    }
    timed(Duration::from_secs(600), started, parts.join(", "), ok)
}

/// Dense-array correlation of two tick lists at one bin width.
fn dense_oracle(a: &[u64], b: &[u64], length: u64, width: u64, lags: &[u64]) -> Vec<f64> {
    let n = (length / width) as usize;
    let bin = |ticks: &[u64]| {
        let mut v = vec![0u32; n];
        for &t in ticks {
            if let Some(c) = v.get_mut((t / width) as usize) {
                *c += 1;
            }
        }
        v
    };
    let (na, nb) = (bin(a), bin(b));
    lags.iter()
        .map(|&k| {
            let k = k as usize;
            let m = n - k;
            let product: u64 = na[..m].iter().zip(&nb[k..]).map(|(&x, &y)| x as u64 * y as u64).sum();
            let head: u64 = na[..m].iter().map(|&x| x as u64).sum();
            let tail: u64 = nb[k..].iter().map(|&x| x as u64).sum();
            product as f64 * m as f64 / (head as f64 * tail as f64)
        })
        .collect()
}

fn solution_sim(power_uw: f64, duration: f64, seed: u64, split: bool) -> SimConfig {
    let base = Scenario::Solution.default_sim().with_occupancy(2.0, 10.0);
    SimConfig {
        i_peak: reference::context().intensity_from_power(power_uw),
        duration,
        seed,
        split,
        ..base
    }
}

fn criterion_5() -> Outcome {
    let probe = simulate(&solution_sim(300.0, 1.0, 5, true)).map_err(|e| e.to_string())?;
    let duration = (0.95e6 / probe.len() as f64).min(60.0);
    let stream = simulate(&solution_sim(300.0, duration, 5, true)).map_err(|e| e.to_string())?;
    let (a, b) = (stream.channel(0), stream.channel(1));
    let scheme = MultiTauScheme { base_width: 1000, ..Default::default() };
    let cross = correlate(&a, &b, &scheme).map_err(|e| e.to_string())?;

    let tick = stream.tick_seconds();
    let length = a.duration.min(b.duration);
    let mut worst = 0.0f64;
    let mut shared = 0;
    for (stage, k) in scheme.lag_grid() {
        let width = scheme.base_width << stage;
        let lag = (k * width) as f64 * tick;
        let Some(i) = cross.lags.iter().position(|&l| rel(l, lag) < 1e-9) else { continue };
        let oracle = dense_oracle(&a.timestamps, &b.timestamps, length, width, &[k])[0];
        worst = worst.max(rel(cross.g2[i], oracle));
        shared += 1;
    }

    let merged: PhotonStream = stream.merged();
    let auto = correlate(&merged, &merged, &scheme).map_err(|e| e.to_string())?;
    let from_stream = correlate_stream(&stream, &scheme).map_err(|e| e.to_string())?;
    let mut outside = 0;
    let mut compared = 0;
    for (i, &lag) in cross.lags.iter().enumerate() {
        let Some(j) = auto.lags.iter().position(|&l| l == lag) else { continue };
        if lag <= 10.0 * tick {
            continue;
        }
        compared += 1;
        let se = cross.stderr[i].hypot(auto.stderr[j]);
        if (cross.g2[i] - auto.g2[j]).abs() > se {
            outside += 1;
        }
    }
    let consistent = from_stream.g2 == cross.g2;
    // Gaussian 1σ coverage of the combined error is 68%; require the bulk of lags inside it.
    let agree = compared > 0 && (outside as f64) <= 0.32 * compared as f64 + 2.0;
    let ok = shared > 0 && worst <= 0.01 && agree && consistent;
    let detail = format!(
        "{} events, {shared} shared lags, worst oracle deviation {:.2e}; cross vs auto outside 1σ at {outside}/{compared} lags",
        stream.len(),
        worst
    );
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_6() -> Outcome {
    let p = FcsModelParams { n_tot: 1.7, n_t: 0.3, tau_bt: 2e-6, tau_d: 1e-4, s: 0.2, b_over_i: 0.15 };
    let g = eval_model(&p, &[1e-300, 1e30]).map_err(|e| e.to_string())?;
    let amp = 1.0 + (1.0 + p.n_t) * (1.0 - p.b_over_i).powi(2) / p.n_tot;
    let identities = rel(g[0], amp) <= 1e-15 && (g[1] - 1.0).abs() <= 1e-15;

    let base = Scenario::Nanoaperture.default_sim().with_occupancy(2.0, 10.0);
    let sim = SimConfig { i_peak: reference::context().intensity_from_power(300.0), seed: 66, ..base };
    let stream = simulate(&sim).map_err(|e| e.to_string())?;
    let curve = correlate_stream(&stream, &MultiTauScheme::default()).map_err(|e| e.to_string())?;
    let rate = stream.len() as f64 / stream.duration_seconds();
    let fixed = FcsFixed { b_over_i: Some(sim.background / rate), s: None, tau_bt_min: Some(2e-8), tau_bt_max: Some(2e-5) };
    let fit = fit_fcs(&curve, None, fixed).map_err(|e| e.to_string())?;
    let s = fit.params.s;
    let ok = identities && (0.7..=1.3).contains(&s);
    let detail = format!(
        "g2(0+) - amplitude {:.1e}, g2(inf) - 1 {:.1e}, fitted s {s:.3} ± {:.3}",
        g[0] - amp,
        g[1] - 1.0,
        fit.errors.s
    );
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_7() -> Outcome {
    let tau0 = reference::TAU_IRF_NS;
    let fit = |tau: f64, seed: u64| -> Result<f64, String> {
        let h = simulate_decay(tau, tau0, 1_000_000, 0.01, seed).map_err(|e| e.to_string())?;
        Ok(fit_lifetime(&h).map_err(|e| e.to_string())?.tau_tot.value)
    };
    let long = fit(3.8, 71)?;
    let short = fit(0.3, 72)?;
    let ratio = long / short;
    let ok = rel(long, 3.8) <= 0.02 && rel(short, 0.3) <= 0.15 && rel(ratio, 12.0) <= 0.20;
    let detail = format!(
        "3.8 ns -> {long:.4} ns ({:.2}%), 0.3 ns -> {short:.4} ns ({:.2}%), ratio {ratio:.2} ({:.1}% from 12)",
        100.0 * rel(long, 3.8),
        100.0 * rel(short, 0.3),
        100.0 * rel(ratio, 12.0)
    );
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_8() -> Outcome {
    let r = reference::solution_rate_set();
    let i_s = r.saturation_intensity();
    let mut worst = 0.0f64;
    for i in 0..=400 {
        let x = 2.0 * i_s * i as f64 / 400.0;
        let approx = triplet_rate(&r, x).map_err(|e| e.to_string())?;
        let exact = exact_triplet_eigenrate(&r, x).map_err(|e| e.to_string())?.slow;
        worst = worst.max(rel(approx, exact));
    }
    let detail = format!("largest relative deviation {:.3}% over [0, 2 I_s]", 100.0 * worst);
    if worst <= 0.05 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_9() -> Outcome {
    let started = Instant::now();
    let failures: Vec<String> = common::PROPERTIES
        .iter()
        .filter_map(|name| common::check(name, 1000).err().map(|e| format!("{name}: {e}")))
        .collect();
    let detail = if failures.is_empty() {
        format!("{} properties × 1000 cases", common::PROPERTIES.len())
    } else {
        failures.join("; ")
    };
    timed(Duration::from_secs(300), started, detail, failures.is_empty())
}

fn report(n: usize, outcome: &Outcome) {
    let line = match outcome {
        Ok(d) => format!("criterion {n}: PASS ({d})\n"),
        Err(d) => format!("criterion {n}: FAIL ({d})\n"),
    };
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut outcomes = Vec::new();
    let (c1, cols) = criterion_1(dir.path());
    report(1, &c1);
    outcomes.push(c1);
    let c2 = criterion_2(cols.as_ref());
    report(2, &c2);
    outcomes.push(c2);
    let rest: [(usize, &dyn Fn() -> Outcome); 7] = [
        (3, &criterion_3),
        (4, &|| criterion_4(dir.path())),
        (5, &criterion_5),
        (6, &criterion_6),
        (7, &criterion_7),
        (8, &criterion_8),
        (9, &criterion_9),
    ];
    for (n, f) in rest {
        let o = f();
        report(n, &o);
        outcomes.push(o);
    }
    let failed = outcomes.iter().filter(|o| o.is_err()).count();
    let _ = writeln!(std::io::stderr(), "acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
