//! Monte-Carlo photon source: molecules diffusing in a periodic box through
//! a Gaussian detection profile, with triplet blinking and Poisson background.
//!
//! Singlet dynamics (ns) are adiabatically eliminated: within a step the
//! excited fraction of a non-triplet molecule is the quasi-stationary
//! `p̂ = σI / (σI + k_tot)`. The triplet state is an explicit telegraph
//! process with entry rate `k_isc p̂` and exit rate `k_ph`. With this choice
//! the long-run brightness and triplet occupancy equal the steady-state
//! three-level values exactly.
//!
//! A molecule far from the focus cannot emit. It moves by walk on spheres:
//! to a uniform point on the largest ball that stays clear of the emission
//! region, after a first-exit time drawn from the exact distribution, while
//! its triplet state is propagated with the two-state transition
//! probabilities.

mod exit;
mod stream;

pub use stream::{sha256_hex, PhotonStream, StreamMeta, FORMAT_VERSION, MAGIC};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward_brightness, RateSet};
use crate::rng::{substream, BACKGROUND_SPLIT_STREAM, BACKGROUND_STREAM};

/// Squared normalized radius beyond which emission is ignored.
/// The neglected fraction of the detected signal is below 4e-6.
const EMISSION_REGION_Q: f64 = 14.0;

/// Gaussian detection profile `exp(-2(x²+y²)/w² - 2 s² z²/w²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mde {
    /// Lateral 1/e² radius [nm].
    pub w_xy: f64,
    /// Aspect ratio lateral/axial (axial radius = w_xy / s).
    pub s: f64,
}

impl Mde {
    pub fn w_xy_um(&self) -> f64 {
        self.w_xy * 1e-3
    }

    /// Lateral and axial extents [µm].
    pub fn extents_um(&self) -> [f64; 3] {
        let w = self.w_xy_um();
        [w, w, w / self.s]
    }

    /// Effective volume `π^{3/2} w³ / s` [µm³].
    pub fn effective_volume(&self) -> f64 {
        std::f64::consts::PI.powf(1.5) * self.w_xy_um().powi(3) / self.s
    }

    /// Integral of the profile, `(π/2)^{3/2} w³ / s` [µm³].
    pub fn integral(&self) -> f64 {
        (std::f64::consts::PI / 2.0).powf(1.5) * self.w_xy_um().powi(3) / self.s
    }

    /// `∫W² / ∫W`; the apparent brightness `F / N_tot` of a uniform emitter
    /// is its peak brightness times this factor (2^{-3/2}).
    pub fn gamma(&self) -> f64 {
        2f64.powf(-1.5)
    }

    /// Diffusion time `w² / 4D` [s] for D in µm²/s.
    pub fn diffusion_time(&self, d: f64) -> f64 {
        self.w_xy_um().powi(2) / (4.0 * d)
    }
}

/// Where the Gaussian profile comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcitationProfile {
    /// Excitation follows the profile; collection is uniform.
    #[default]
    Gaussian,
    /// Excitation is uniform at `I_peak`; collection follows the profile.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripletScheme {
    /// Exact telegraph switching within each step.
    #[default]
    Exact,
    /// One switching trial per step with probabilities `k dt`.
    Hazard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Uniformly distributed in the box.
    #[default]
    Uniform,
    /// All molecules start at the focus.
    Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Diffusion coefficient [µm²/s].
    #[serde(rename = "D")]
    pub diffusion: f64,
    /// Periodic box edge lengths [µm].
    #[serde(rename = "box")]
    pub box_size: [f64; 3],
    #[serde(rename = "N_molecules")]
    pub n_molecules: usize,
    pub mde: Mde,
    pub rates: RateSet,
    /// Peak excitation intensity [photons·s⁻¹·cm⁻²].
    #[serde(rename = "I_peak")]
    pub i_peak: f64,
    /// Background count rate [counts/s].
    pub background: f64,
    /// Time step [s].
    pub dt: f64,
    /// Acquisition length [s].
    pub duration: f64,
    pub seed: u64,
    /// Emit two detector channels through a 50/50 split.
    #[serde(default)]
    pub split: bool,
    #[serde(default)]
    pub excitation: ExcitationProfile,
    #[serde(default)]
    pub triplet_scheme: TripletScheme,
    #[serde(default)]
    pub placement: Placement,
}

impl SimConfig {
    /// Box of `margin` extents per axis holding on average `n_in_volume`
    /// molecules inside the effective volume.
    pub fn with_occupancy(mut self, n_in_volume: f64, margin: f64) -> Self {
        let ext = self.mde.extents_um();
        self.box_size = ext.map(|e| e * margin);
        let v_box: f64 = self.box_size.iter().product();
        self.n_molecules = (n_in_volume * v_box / self.mde.effective_volume()).round().max(1.0) as usize;
        self
    }

    pub fn box_volume(&self) -> f64 {
        self.box_size.iter().product()
    }

    /// Mean number of molecules inside the effective volume.
    pub fn mean_occupancy(&self) -> f64 {
        self.n_molecules as f64 * self.mde.effective_volume() / self.box_volume()
    }

    fn singlet_excited_fraction(&self, intensity: f64) -> f64 {
        let k_e = self.rates.sigma * intensity;
        k_e / (k_e + self.rates.k_tot())
    }

    /// Checks every bound; the message names the violated one.
    pub fn validate(&self) -> Result<()> {
        self.rates.validate().map_err(|e| Error::config(format!("rates: {e}")))?;
        let positive = [
            ("dt", self.dt),
            ("duration", self.duration),
            ("mde.w_xy", self.mde.w_xy),
            ("mde.s", self.mde.s),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} = {v} must be positive")));
            }
        }
        let non_negative = [("D", self.diffusion), ("I_peak", self.i_peak), ("background", self.background)];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} = {v} must be >= 0")));
            }
        }
        if self.duration < self.dt {
            return Err(Error::config("duration must be at least one time step"));
        }
        if self.n_molecules == 0 {
            return Err(Error::config("N_molecules must be at least 1"));
        }
        let w = self.mde.w_xy_um();
        if self.diffusion > 0.0 {
            let bound = w * w / self.diffusion / 100.0;
            if self.dt > bound {
                return Err(Error::config(format!(
                    "diffusion bound violated: dt = {:e} s > (w_xy²/D)/100 = {bound:e} s",
                    self.dt
                )));
            }
        }
        let ext = self.mde.extents_um();
        for (axis, (&l, &e)) in ["x", "y", "z"].iter().zip(self.box_size.iter().zip(ext.iter())) {
            if !(l >= 10.0 * e) {
                return Err(Error::config(format!(
                    "box bound violated: box.{axis} = {l} µm < 10 × MDE extent {e} µm"
                )));
            }
        }
        if self.triplet_scheme == TripletScheme::Hazard {
            let fastest = (self.rates.k_isc * self.singlet_excited_fraction(self.i_peak)).max(self.rates.k_ph);
            let bound = 0.1 / fastest;
            if self.dt > bound {
                return Err(Error::config(format!(
                    "triplet bound violated: dt = {:e} s > 0.1/max(k_isc p_S1, k_ph) = {bound:e} s",
                    self.dt
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    fn n_steps(&self) -> u64 {
        (self.duration / self.dt).round().max(1.0) as u64
    }
}

/// Aggregates collected while simulating.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SimDiagnostics {
    /// Molecule-seconds spent in the triplet state (expected value over
    /// unresolved jumps).
    pub triplet_time: f64,
    /// Molecule-seconds simulated.
    pub molecule_time: f64,
    pub fluorescence_photons: u64,
    pub background_photons: u64,
}

impl SimDiagnostics {
    pub fn triplet_fraction(&self) -> f64 {
        self.triplet_time / self.molecule_time
    }
}

struct Derived {
    step_sd: f64,
    /// Normalization of each axis onto the unit-Gaussian coordinate.
    axis_scale: [f64; 3],
    half_box: [f64; 3],
    max_scale: f64,
    n_steps: u64,
}

impl Derived {
    fn new(cfg: &SimConfig) -> Self {
        let w = cfg.mde.w_xy_um();
        let lat = std::f64::consts::SQRT_2 / w;
        let axis_scale = [lat, lat, lat * cfg.mde.s];
        Derived {
            step_sd: (2.0 * cfg.diffusion * cfg.dt).sqrt(),
            axis_scale,
            half_box: cfg.box_size.map(|l| 0.5 * l),
            max_scale: axis_scale.iter().cloned().fold(0.0, f64::max),
            n_steps: cfg.n_steps(),
        }
    }

    fn q(&self, pos: &[f64; 3]) -> f64 {
        pos.iter().zip(&self.axis_scale).map(|(p, a)| (p * a).powi(2)).sum()
    }

    fn wrap(&self, pos: &mut [f64; 3]) {
        for (p, &h) in pos.iter_mut().zip(&self.half_box) {
            let l = 2.0 * h;
            if *p >= h || *p < -h {
                *p -= l * ((*p + h) / l).floor();
            }
        }
    }
}

/// Telegraph rates and emission rate at a given normalized radius.
struct LocalRates {
    on: f64,
    off: f64,
    emission: f64,
}

fn local_rates(cfg: &SimConfig, q: f64) -> LocalRates {
    let profile = (-q).exp();
    let (intensity, collection) = match cfg.excitation {
        ExcitationProfile::Gaussian => (cfg.i_peak * profile, 1.0),
        ExcitationProfile::Uniform => (cfg.i_peak, profile),
    };
    let p_hat = cfg.singlet_excited_fraction(intensity);
    LocalRates {
        on: cfg.rates.k_isc * p_hat,
        off: cfg.rates.k_ph,
        emission: cfg.rates.kappa * cfg.rates.k_rad * p_hat * collection,
    }
}

/// Samples the triplet state after `span` seconds; returns the expected
/// triplet dwell time over the span as well.
fn propagate_telegraph(rng: &mut ChaCha8Rng, triplet: &mut bool, r: &LocalRates, span: f64) -> f64 {
    let total = r.on + r.off;
    if total == 0.0 {
        return if *triplet { span } else { 0.0 };
    }
    let eq = r.on / total;
    let decay = (-total * span).exp();
    let p0 = if *triplet { 1.0 } else { 0.0 };
    let p_end = eq + (p0 - eq) * decay;
    let dwell = eq * span + (p0 - eq) * (1.0 - decay) / total;
    *triplet = rng.random::<f64>() < p_end;
    dwell
}

/// Small means by sequential inversion; large ones through `rand_distr`.
fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean < 10.0 {
        let mut p = (-mean).exp();
        let mut cdf = p;
        let u: f64 = rng.random();
        let mut n = 0;
        while u > cdf && p > 0.0 {
            n += 1;
            p *= mean / n as f64;
            cdf += p;
        }
        return n;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

fn unit_exp(rng: &mut ChaCha8Rng) -> f64 {
    Exp1.sample(rng)
}

struct MoleculeOutput {
    photons: Vec<(f64, u8)>,
    triplet_time: f64,
}

/// Per-molecule stochastic state.
struct Molecule {
    pos: [f64; 3],
    triplet: bool,
    /// Integrated hazard left until the next triplet switch.
    switch_budget: f64,
    /// Integrated emission hazard left until the next photon.
    photon_budget: f64,
}

fn simulate_molecule(cfg: &SimConfig, d: &Derived, index: u64) -> MoleculeOutput {
    let mut rng = substream(cfg.seed, index);
    let pos = match cfg.placement {
        Placement::Uniform => {
            let mut p = [0.0; 3];
            for (x, &h) in p.iter_mut().zip(&d.half_box) {
                *x = rng.random_range(-h..h);
            }
            p
        }
        Placement::Origin => [0.0; 3],
    };
    let init = local_rates(cfg, d.q(&pos));
    let triplet = init.on + init.off > 0.0 && rng.random::<f64>() < init.on / (init.on + init.off);
    let mut m = Molecule { pos, triplet, switch_budget: unit_exp(&mut rng), photon_budget: unit_exp(&mut rng) };
    let mut out = MoleculeOutput { photons: Vec::new(), triplet_time: 0.0 };
    let region_radius = EMISSION_REGION_Q.sqrt();
    let end = d.n_steps as f64 * cfg.dt;
    // A walk-on-spheres move is worth it once its mean duration exceeds a step.
    let min_ball = (6.0 * cfg.diffusion * cfg.dt).sqrt();

    let mut t = 0.0;
    while t < end {
        let q = d.q(&m.pos);
        let rates = local_rates(cfg, q);
        if q > EMISSION_REGION_Q {
            // Largest ball around the molecule that stays outside the region.
            let ball = (q.sqrt() - region_radius) / d.max_scale;
            if cfg.diffusion == 0.0 || ball >= min_ball {
                let span = if cfg.diffusion == 0.0 {
                    end - t
                } else {
                    (exit::sample(&mut rng) * ball * ball / cfg.diffusion).min(end - t)
                };
                out.triplet_time += propagate_telegraph(&mut rng, &mut m.triplet, &rates, span);
                m.switch_budget = unit_exp(&mut rng);
                if cfg.diffusion > 0.0 {
                    move_to_sphere(&mut rng, &mut m.pos, d, ball);
                }
                t += span;
                continue;
            }
        }
        let span = cfg.dt.min(end - t);
        match cfg.triplet_scheme {
            TripletScheme::Exact => exact_step(&mut rng, &mut m, &rates, t, span, cfg.split, &mut out),
            TripletScheme::Hazard => hazard_step(&mut rng, &mut m, &rates, t, span, cfg.split, &mut out),
        }
        displace(&mut rng, &mut m.pos, d, (span / cfg.dt).sqrt());
        t += span;
    }
    out
}

/// Piecewise-constant rates over `[t0, t0 + span)`: triplet switches and
/// photon arrivals fire when their integrated hazards are used up.
fn exact_step(
    rng: &mut ChaCha8Rng,
    m: &mut Molecule,
    r: &LocalRates,
    t0: f64,
    span: f64,
    split: bool,
    out: &mut MoleculeOutput,
) {
    let mut t = 0.0;
    while t < span {
        let rate = if m.triplet { r.off } else { r.on };
        let to_switch = if rate > 0.0 { m.switch_budget / rate } else { f64::INFINITY };
        let switches = t + to_switch < span;
        let seg_end = if switches { t + to_switch } else { span };
        if m.triplet {
            out.triplet_time += seg_end - t;
        } else if r.emission > 0.0 {
            let mut s = t;
            loop {
                let wait = m.photon_budget / r.emission;
                if s + wait < seg_end {
                    s += wait;
                    out.photons.push((t0 + s, channel(rng, split)));
                    m.photon_budget = unit_exp(rng);
                } else {
                    m.photon_budget -= r.emission * (seg_end - s);
                    break;
                }
            }
        }
        if switches {
            m.triplet = !m.triplet;
            m.switch_budget = unit_exp(rng);
        } else {
            m.switch_budget -= rate * (seg_end - t);
        }
        t = seg_end;
    }
}

/// First-order scheme: the state is frozen for the step, then switches
/// with probability `rate · dt`.
fn hazard_step(
    rng: &mut ChaCha8Rng,
    m: &mut Molecule,
    r: &LocalRates,
    t0: f64,
    span: f64,
    split: bool,
    out: &mut MoleculeOutput,
) {
    if m.triplet {
        out.triplet_time += span;
    } else {
        for _ in 0..poisson(rng, r.emission * span) {
            let at = rng.random::<f64>() * span;
            out.photons.push((t0 + at, channel(rng, split)));
        }
    }
    let p = if m.triplet { r.off } else { r.on } * span;
    if rng.random::<f64>() < p {
        m.triplet = !m.triplet;
    }
}

fn channel(rng: &mut ChaCha8Rng, split: bool) -> u8 {
    if split {
        rng.random::<bool>() as u8
    } else {
        0
    }
}

fn displace(rng: &mut ChaCha8Rng, pos: &mut [f64; 3], d: &Derived, scale: f64) {
    if d.step_sd == 0.0 {
        return;
    }
    let sd = d.step_sd * scale;
    for p in pos.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *p += sd * z;
    }
    d.wrap(pos);
}

/// Moves to a uniform point on the sphere of radius `r` [µm].
fn move_to_sphere(rng: &mut ChaCha8Rng, pos: &mut [f64; 3], d: &Derived, r: f64) {
    let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for (p, x) in pos.iter_mut().zip(v) {
        *p += r * x / norm;
    }
    d.wrap(pos);
}

fn background_photons(cfg: &SimConfig) -> Vec<(f64, u8)> {
    let mut out = Vec::new();
    if cfg.background <= 0.0 {
        return out;
    }
    let mut rng = substream(cfg.seed, BACKGROUND_STREAM);
    let mut split_rng = substream(cfg.seed, BACKGROUND_SPLIT_STREAM);
    let gap = Exp::new(cfg.background).expect("positive background");
    let end = cfg.n_steps() as f64 * cfg.dt;
    let mut t = gap.sample(&mut rng);
    while t < end {
        out.push((t, channel(&mut split_rng, cfg.split)));
        t += gap.sample(&mut rng);
    }
    out
}

/// Runs the simulation and returns the photon stream.
pub fn simulate(cfg: &SimConfig) -> Result<PhotonStream> {
    simulate_with_diagnostics(cfg).map(|(s, _)| s)
}

pub fn simulate_with_diagnostics(cfg: &SimConfig) -> Result<(PhotonStream, SimDiagnostics)> {
    cfg.validate()?;
    let d = Derived::new(cfg);
    let molecules: Vec<MoleculeOutput> = (0..cfg.n_molecules as u64)
        .into_par_iter()
        .map(|i| simulate_molecule(cfg, &d, i))
        .collect();
    let background = background_photons(cfg);

    let sim_time = d.n_steps as f64 * cfg.dt;
    let duration = (sim_time * 1e9).round() as u64;
    let mut diag = SimDiagnostics {
        molecule_time: sim_time * cfg.n_molecules as f64,
        background_photons: background.len() as u64,
        ..Default::default()
    };
    let total: usize = molecules.iter().map(|m| m.photons.len()).sum::<usize>() + background.len();
    let mut events: Vec<(u64, u8)> = Vec::with_capacity(total);
    for m in &molecules {
        diag.triplet_time += m.triplet_time;
        diag.fluorescence_photons += m.photons.len() as u64;
        events.extend(m.photons.iter().map(|&(t, c)| (to_tick(t, duration), c)));
    }
    events.extend(background.iter().map(|&(t, c)| (to_tick(t, duration), c)));
    events.sort_unstable();
    let (timestamps, channels) = events.into_iter().unzip();
    let stream = PhotonStream {
        tick_ns: 1,
        duration,
        n_channels: if cfg.split { 2 } else { 1 },
        timestamps,
        channels,
        config: Some(cfg.to_json()),
    };
    Ok((stream, diag))
}

fn to_tick(t: f64, duration: u64) -> u64 {
    ((t * 1e9).floor() as u64).min(duration.saturating_sub(1))
}

/// Expected fluorescence count rate of the whole box (background excluded).
///
/// Integrates the steady-state brightness over the detection profile for a
/// uniform molecule density `N / V_box`, using the radial symmetry of the
/// normalized Gaussian coordinates.
pub fn expected_brightness_check(cfg: &SimConfig) -> Result<f64> {
    cfg.validate()?;
    let density = cfg.n_molecules as f64 / cfg.box_volume();
    let w = cfg.mde.w_xy_um();
    let jacobian = w.powi(3) / (2.0 * std::f64::consts::SQRT_2 * cfg.mde.s);
    let peak = forward_brightness(&cfg.rates, cfg.i_peak)?;
    let radial = |rho: f64| -> Result<f64> {
        let profile = (-rho * rho).exp();
        let b = match cfg.excitation {
            ExcitationProfile::Gaussian => forward_brightness(&cfg.rates, cfg.i_peak * profile)?,
            ExcitationProfile::Uniform => peak * profile,
        };
        Ok(4.0 * std::f64::consts::PI * rho * rho * b)
    };
    // Composite Simpson on [0, 7]; the integrand is below e^-49 beyond.
    let n = 4000;
    let h = 7.0 / n as f64;
    let mut sum = radial(0.0)? + radial(7.0)?;
    for i in 1..n {
        let wgt = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += wgt * radial(i as f64 * h)?;
    }
    Ok(density * jacobian * sum * h / 3.0)
}

/// Unwrapped positions of molecule `index` over `n_steps` plain steps.
pub fn trace_positions(cfg: &SimConfig, index: u64, n_steps: usize) -> Vec<[f64; 3]> {
    let mut rng = substream(cfg.seed, index);
    let sd = (2.0 * cfg.diffusion * cfg.dt).sqrt();
    let mut pos = [0.0; 3];
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(pos);
    for _ in 0..n_steps {
        for p in pos.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *p += sd * z;
        }
        out.push(pos);
    }
    out
}
