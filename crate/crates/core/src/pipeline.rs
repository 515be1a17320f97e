//! End-to-end analysis: simulated acquisitions at several excitation powers
//! are correlated and fitted, the per-power results are fitted against power,
//! a lifetime histogram is fitted, and the coefficients are inverted into
//! rates. Two scenarios (solution and nanoaperture) additionally yield the
//! enhancement table.
//!
//! Output directory layout:
//!
//! ```text
//! <out>/<scenario>/curves/P<power>_r<repeat>.csv
//! <out>/<scenario>/fcs/P<power>_r<repeat>.json
//! <out>/<scenario>/power_series.csv
//! <out>/<scenario>/power_fit.json
//! <out>/<scenario>/lifetime.csv
//! <out>/<scenario>/lifetime_fit.json
//! <out>/<scenario>/solved.json
//! <out>/enhancement.json
//! <out>/report.md
//! <out>/report.csv
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::correlator::{correlate_stream, CorrelationCurve, MultiTauScheme};
use crate::error::{Error, Result};
use crate::fit::{
    fit_fcs, fit_lifetime, fit_power_series, simulate_decay, DecayHistogram, FcsFit, FcsFixed, LifetimeFit,
    PowerFitOptions, PowerRow, PowerSeriesData, PowerSeriesFit,
};
use crate::io;
use crate::model::{ExcitationContext, IntensityUnit};
use crate::reference;
use crate::report::RateTable;
use crate::rng::derive_seed;
use crate::sim::{simulate, sha256_hex, ExcitationProfile, Mde, Placement, SimConfig, TripletScheme};
use crate::solver::{calibrate_kappa, enhancement, EnhancementReport, Measured, MeasuredInputs, SolvedColumn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Solution,
    Nanoaperture,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Solution => "solution",
            Scenario::Nanoaperture => "nanoaperture",
        }
    }

    /// Simulation defaults before overrides; `I_peak`, `duration` and `seed`
    /// are set per acquisition.
    ///
    /// The simulated κ is the reference κ divided by the Gaussian-volume
    /// factor γ = 2^{-3/2}, so the brightness seen through the correlation
    /// amplitude reproduces the reference α_F.
    pub fn default_sim(self) -> SimConfig {
        let gamma = 2f64.powf(-1.5);
        let (rates, mde, dt) = match self {
            Scenario::Solution => (reference::solution_rate_set(), Mde { w_xy: 220.0, s: 0.2 }, 2e-6),
            Scenario::Nanoaperture => (reference::aperture_rate_set(), Mde { w_xy: 150.0, s: 1.0 }, 1e-6),
        };
        let rates = crate::model::RateSet { kappa: rates.kappa / gamma, ..rates };
        SimConfig {
            diffusion: 120.0,
            box_size: [0.0; 3],
            n_molecules: 1,
            mde,
            rates,
            i_peak: 0.0,
            background: reference::BACKGROUND_CPS,
            dt,
            duration: 10.0,
            seed: 0,
            split: false,
            excitation: ExcitationProfile::Uniform,
            triplet_scheme: TripletScheme::Exact,
            placement: Placement::Uniform,
        }
    }
}

/// Collection efficiency used by the inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum KappaConfig {
    /// κ such that the solved quantum yield equals `phi`.
    Calibrate { phi: f64 },
    /// κ of the solution scenario times `gain`.
    Gain(Measured),
    Fixed(Measured),
}

/// Correlation-fit settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FcsSettings {
    /// Fixed aspect ratio; `None` fits it.
    #[serde(default)]
    pub s: Option<f64>,
    /// Blinking-time window [s].
    #[serde(default = "default_tau_bt_range")]
    pub tau_bt_range: [f64; 2],
}

fn default_tau_bt_range() -> [f64; 2] {
    [2e-8, 2e-5]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifetimeSettings {
    #[serde(default = "default_lifetime_photons")]
    pub photons: u64,
    /// Histogram bin width [ns].
    #[serde(default = "default_lifetime_bin")]
    pub bin_width_ns: f64,
    /// IRF time constant [ns].
    #[serde(default = "default_tau0")]
    pub tau0_ns: f64,
}

fn default_lifetime_photons() -> u64 {
    1_000_000
}

fn default_lifetime_bin() -> f64 {
    0.01
}

fn default_tau0() -> f64 {
    reference::TAU_IRF_NS
}

impl Default for LifetimeSettings {
    fn default() -> Self {
        LifetimeSettings {
            photons: default_lifetime_photons(),
            bin_width_ns: default_lifetime_bin(),
            tau0_ns: default_tau0(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Fields merged over [`Scenario::default_sim`].
    #[serde(default)]
    pub sim: Map<String, Value>,
    /// Mean number of molecules in the effective volume; sets the box to
    /// `box_margin` MDE extents and the molecule count accordingly.
    #[serde(default = "default_occupancy")]
    pub occupancy: Option<f64>,
    #[serde(default = "default_margin")]
    pub box_margin: f64,
    pub kappa: KappaConfig,
    /// Defaults to the MDE aspect ratio for the solution and a free fit
    /// for the nanoaperture.
    #[serde(default)]
    pub fcs: Option<FcsSettings>,
    #[serde(default)]
    pub lifetime: LifetimeSettings,
}

fn default_occupancy() -> Option<f64> {
    Some(2.0)
}

fn default_margin() -> f64 {
    10.0
}

fn default_repeats() -> usize {
    1
}

fn default_context() -> ExcitationContext {
    reference::context()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub scenarios: Vec<ScenarioConfig>,
    /// Excitation powers [µW], ascending.
    pub powers: Vec<f64>,
    #[serde(default = "default_context")]
    pub context: ExcitationContext,
    pub seed: u64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub correlator: MultiTauScheme,
    #[serde(default)]
    pub power_fit: PowerFitOptions,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.powers.is_empty() {
            return Err(Error::config("powers must not be empty"));
        }
        if self.powers.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::config("powers must be positive"));
        }
        if self.powers.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("powers must be strictly ascending"));
        }
        if self.repeats == 0 {
            return Err(Error::config("repeats must be at least 1"));
        }
        if self.scenarios.is_empty() {
            return Err(Error::config("at least one scenario is required"));
        }
        for (i, s) in self.scenarios.iter().enumerate() {
            if self.scenarios[..i].iter().any(|o| o.scenario == s.scenario) {
                return Err(Error::config(format!("scenario {} listed twice", s.scenario.name())));
            }
            if let KappaConfig::Gain(_) = s.kappa {
                if !self.scenarios.iter().any(|o| o.scenario == Scenario::Solution) {
                    return Err(Error::config("kappa gain needs a solution scenario"));
                }
            }
            s.base_sim()?;
        }
        self.context.validate()?;
        self.correlator.validate()
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

impl ScenarioConfig {
    /// Scenario defaults with overrides and occupancy applied.
    pub fn base_sim(&self) -> Result<SimConfig> {
        let mut value = serde_json::to_value(self.scenario.default_sim()).expect("config serializes");
        let obj = value.as_object_mut().expect("object");
        for (k, v) in &self.sim {
            obj.insert(k.clone(), v.clone());
        }
        let mut cfg: SimConfig = io::parse_json(&value.to_string()).map_err(|e| match e {
            Error::Schema { path, message } => Error::Schema {
                path: path.replacen('$', &format!("$.scenarios[{}].sim", self.scenario.name()), 1),
                message,
            },
            other => other,
        })?;
        if let Some(n) = self.occupancy {
            if !(n.is_finite() && n > 0.0) {
                return Err(Error::config("occupancy must be positive"));
            }
            cfg = cfg.with_occupancy(n, self.box_margin);
        }
        Ok(cfg)
    }

    fn fcs_settings(&self, sim: &SimConfig) -> FcsSettings {
        self.fcs.unwrap_or(match self.scenario {
            Scenario::Solution => FcsSettings { s: Some(sim.mde.s), tau_bt_range: default_tau_bt_range() },
            Scenario::Nanoaperture => FcsSettings { s: None, tau_bt_range: default_tau_bt_range() },
        })
    }
}

/// One acquisition: its correlation fit and derived observables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acquisition {
    pub power_uw: f64,
    pub repeat: usize,
    pub seed: u64,
    pub mean_rate: f64,
    pub background: f64,
    pub fcs: FcsFit,
    /// Count rate per molecule [counts/s].
    pub f_m: Measured,
    pub t_eq: Measured,
    /// Inverse triplet blinking time [s⁻¹].
    pub inv_tau: Measured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub sim_hash: String,
    pub acquisitions: Vec<Acquisition>,
    pub series: PowerSeriesData,
    pub power_fit: PowerSeriesFit,
    pub lifetime: LifetimeFit,
    pub solved: SolvedColumn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub config_hash: String,
    pub seed: u64,
    pub scenarios: Vec<ScenarioResult>,
    pub enhancement: Option<EnhancementReport>,
}

impl PipelineResult {
    pub fn scenario(&self, s: Scenario) -> Option<&ScenarioResult> {
        self.scenarios.iter().find(|r| r.scenario == s)
    }

    pub fn table(&self) -> Option<RateTable> {
        let sol = self.scenario(Scenario::Solution).or(self.scenarios.first())?;
        let aper = self.scenario(Scenario::Nanoaperture).filter(|a| a.scenario != sol.scenario);
        Some(RateTable::new(&sol.solved, aper.map(|a| &a.solved), self.enhancement.as_ref()))
    }

    pub fn report_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# Photokinetic rates\n");
        let _ = writeln!(out, "- config sha256: `{}`", self.config_hash);
        let _ = writeln!(out, "- seed: {}", self.seed);
        for s in &self.scenarios {
            let _ = writeln!(
                out,
                "- {}: {} acquisitions, simulation sha256 `{}`",
                s.scenario.name(),
                s.acquisitions.len(),
                s.sim_hash
            );
        }
        out.push('\n');
        if let Some(t) = self.table() {
            out.push_str(&t.to_markdown());
        }
        let warnings: Vec<String> = self
            .scenarios
            .iter()
            .flat_map(|s| {
                s.power_fit
                    .warnings
                    .iter()
                    .chain(&s.lifetime.warnings)
                    .map(move |w| format!("- {}: {w}", s.scenario.name()))
            })
            .collect();
        if !warnings.is_empty() {
            let _ = writeln!(out, "\n## Warnings\n");
            for w in warnings {
                let _ = writeln!(out, "{w}");
            }
        }
        out
    }

    pub fn report_csv(&self) -> String {
        self.table().map(|t| t.to_csv()).unwrap_or_default()
    }
}

fn power_tag(p: f64) -> String {
    let s = format!("{p}");
    s.replace('.', "p")
}

/// Mean over repeats; the error is the larger of the standard error of the
/// mean and the fit errors combined.
fn aggregate(values: &[Measured]) -> Measured {
    let n = values.len() as f64;
    let mean = values.iter().map(|m| m.value).sum::<f64>() / n;
    let from_fits = values.iter().map(|m| m.sigma * m.sigma).sum::<f64>().sqrt() / n;
    let sem = if values.len() > 1 {
        let var = values.iter().map(|m| (m.value - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Measured::new(mean, sem.max(from_fits))
}

fn acquire(
    cfg: &PipelineConfig,
    sc: &ScenarioConfig,
    base: &SimConfig,
    power: f64,
    repeat: usize,
    seed: u64,
) -> Result<(Acquisition, CorrelationCurve)> {
    let sim = SimConfig {
        i_peak: cfg.context.intensity_from_power(power),
        seed,
        ..base.clone()
    };
    let stream = simulate(&sim).map_err(|e| e.in_stage("simulate"))?;
    let curve = correlate_stream(&stream, &cfg.correlator).map_err(|e| e.in_stage("correlate"))?;
    let mean_rate = stream.len() as f64 / stream.duration_seconds();
    if !(mean_rate > sim.background) {
        return Err(Error::data("no fluorescence above background").in_stage("fit_fcs"));
    }
    let b = sim.background / mean_rate;
    let settings = sc.fcs_settings(&sim);
    let fixed = FcsFixed {
        b_over_i: Some(b),
        s: settings.s,
        tau_bt_min: Some(settings.tau_bt_range[0]),
        tau_bt_max: Some(settings.tau_bt_range[1]),
    };
    let fcs = fit_fcs(&curve, None, fixed).map_err(|e| e.in_stage("fit_fcs"))?;
    let p = &fcs.params;
    let e = &fcs.errors;
    let f_m = fcs.brightness(mean_rate);
    let acq = Acquisition {
        power_uw: power,
        repeat,
        seed,
        mean_rate,
        background: sim.background,
        f_m: Measured::new(f_m, f_m * e.n_tot / p.n_tot),
        t_eq: Measured::new(p.n_t / (1.0 + p.n_t), e.n_t / (1.0 + p.n_t).powi(2)),
        inv_tau: Measured::new(1.0 / p.tau_bt, e.tau_bt / (p.tau_bt * p.tau_bt)),
        fcs,
    };
    Ok((acq, curve))
}

fn run_scenario(
    cfg: &PipelineConfig,
    index: usize,
    sc: &ScenarioConfig,
    solution_kappa: Option<Measured>,
    out: &Path,
) -> Result<ScenarioResult> {
    let name = sc.scenario.name();
    let stage = |s: &str| format!("{name}/{s}");
    let dir = out.join(name);
    let base = sc.base_sim().map_err(|e| e.in_stage(stage("config")))?;
    base.validate().map_err(|e| e.in_stage(stage("config")))?;
    let scenario_seed = derive_seed(cfg.seed, index as u64);

    let jobs: Vec<(usize, usize)> = (0..cfg.powers.len())
        .flat_map(|p| (0..cfg.repeats).map(move |r| (p, r)))
        .collect();
    let results: Vec<Result<(Acquisition, CorrelationCurve)>> = jobs
        .par_iter()
        .map(|&(p, r)| {
            let seed = derive_seed(derive_seed(scenario_seed, p as u64), r as u64);
            acquire(cfg, sc, &base, cfg.powers[p], r, seed)
        })
        .collect();
    let mut acquisitions = Vec::with_capacity(results.len());
    for res in results {
        let (acq, curve) = res.map_err(|e| match e {
            Error::Stage { stage: s, source } => Error::Stage { stage: stage(&s), source },
            other => other.in_stage(stage("acquire")),
        })?;
        let tag = format!("P{}_r{}", power_tag(acq.power_uw), acq.repeat);
        io::write_text(&dir.join("curves").join(format!("{tag}.csv")), &curve.to_csv())?;
        io::write_json(&dir.join("fcs").join(format!("{tag}.json")), &acq)?;
        acquisitions.push(acq);
    }

    let rows = cfg
        .powers
        .iter()
        .map(|&p| {
            let at: Vec<&Acquisition> = acquisitions.iter().filter(|a| a.power_uw == p).collect();
            PowerRow {
                x: p,
                f_m: aggregate(&at.iter().map(|a| a.f_m).collect::<Vec<_>>()),
                t_eq: aggregate(&at.iter().map(|a| a.t_eq).collect::<Vec<_>>()),
                inv_tau: aggregate(&at.iter().map(|a| a.inv_tau).collect::<Vec<_>>()),
            }
        })
        .collect();
    let series = PowerSeriesData { rows, unit: IntensityUnit::Microwatt };
    io::write_text(&dir.join("power_series.csv"), &series.to_csv())?;
    let power_fit = fit_power_series(&series, cfg.power_fit).map_err(|e| e.in_stage(stage("fit_power_series")))?;
    io::write_json(&dir.join("power_fit.json"), &power_fit)?;

    let tau_tot_ns = 1e9 / base.rates.k_tot();
    let lt = sc.lifetime;
    let hist: DecayHistogram = simulate_decay(tau_tot_ns, lt.tau0_ns, lt.photons, lt.bin_width_ns, derive_seed(scenario_seed, u64::MAX))
        .map_err(|e| e.in_stage(stage("simulate_decay")))?;
    io::write_text(&dir.join("lifetime.csv"), &hist.to_csv())?;
    let lifetime = fit_lifetime(&hist).map_err(|e| e.in_stage(stage("fit_lifetime")))?;
    io::write_json(&dir.join("lifetime_fit.json"), &lifetime)?;

    let mut inputs = MeasuredInputs {
        coeffs: power_fit.coeffs,
        k_tot: lifetime.k_tot(),
        kappa: Measured::exact(1.0),
        context: cfg.context,
    };
    inputs.kappa = match sc.kappa {
        KappaConfig::Fixed(k) => k,
        KappaConfig::Calibrate { phi } => {
            let k = calibrate_kappa(phi, &inputs).map_err(|e| e.in_stage(stage("calibrate_kappa")))?;
            Measured::exact(k.value)
        }
        KappaConfig::Gain(g) => {
            let k = solution_kappa.ok_or_else(|| Error::config("kappa gain needs the solution kappa").in_stage(stage("invert")))?;
            Measured::new(g.value * k.value, g.sigma * k.value)
        }
    };
    let solved = SolvedColumn::solve(inputs).map_err(|e| e.in_stage(stage("invert")))?;
    io::write_json(&dir.join("solved.json"), &solved)?;

    Ok(ScenarioResult {
        scenario: sc.scenario,
        sim_hash: base.hash(),
        acquisitions,
        series,
        power_fit,
        lifetime,
        solved,
    })
}

/// Runs every scenario and writes artifacts and the report under `out`.
pub fn run(cfg: &PipelineConfig, out: &Path) -> Result<PipelineResult> {
    cfg.validate()?;
    // solution first: the nanoaperture κ may depend on it
    let mut order: Vec<usize> = (0..cfg.scenarios.len()).collect();
    order.sort_by_key(|&i| cfg.scenarios[i].scenario);
    let mut scenarios = Vec::new();
    let mut solution_kappa = None;
    for i in order {
        let r = run_scenario(cfg, i, &cfg.scenarios[i], solution_kappa, out)?;
        if r.scenario == Scenario::Solution {
            solution_kappa = Some(r.solved.inputs.kappa);
        }
        scenarios.push(r);
    }
    let enhancement = match (
        scenarios.iter().find(|s| s.scenario == Scenario::Solution),
        scenarios.iter().find(|s| s.scenario == Scenario::Nanoaperture),
    ) {
        (Some(s), Some(a)) => {
            let e = enhancement(&s.solved, &a.solved).map_err(|e| e.in_stage("enhancement"))?;
            io::write_json(&out.join("enhancement.json"), &e)?;
            Some(e)
        }
        _ => None,
    };
    let result = PipelineResult { config_hash: cfg.hash(), seed: cfg.seed, scenarios, enhancement };
    io::write_text(&out.join("report.md"), &result.report_markdown())?;
    io::write_text(&out.join("report.csv"), &result.report_csv())?;
    Ok(result)
}
