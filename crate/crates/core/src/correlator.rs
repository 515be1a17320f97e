//! Multi-tau correlation of photon streams and the FCS model function.
//!
//! Stage `s` bins the stream at width `base · 2^s`. Stage 0 contributes lags
//! `1..=m` bins, every later stage lags `m/2+1..=m`, so the lag grid is
//! quasi-logarithmic with `m/2` points per octave. Each lag uses the
//! symmetric normalization
//!
//! ```text
//! g2(k) = (Σ n_i m_{i+k} / M) / ((Σ_{i<M} n_i / M) (Σ_{i≥k} m_i / M)),  M = n_bins − k
//! ```
//!
//! The standard error comes from the spread of the same estimator over
//! equal time segments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::PhotonStream;

/// Multi-tau layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiTauScheme {
    /// Linear channels per stage (even).
    pub channels_per_stage: u32,
    pub stages: u32,
    /// Bin width of stage 0 in stream ticks.
    #[serde(default = "default_base_width")]
    pub base_width: u64,
    /// Segments used for the standard error.
    #[serde(default = "default_segments")]
    pub segments: u32,
}

fn default_base_width() -> u64 {
    1
}

fn default_segments() -> u32 {
    10
}

impl Default for MultiTauScheme {
    fn default() -> Self {
        MultiTauScheme { channels_per_stage: 16, stages: 20, base_width: 1, segments: 10 }
    }
}

impl MultiTauScheme {
    pub fn validate(&self) -> Result<()> {
        let m = self.channels_per_stage;
        if m < 2 || m % 2 != 0 {
            return Err(Error::config(format!("channels_per_stage = {m} must be even and >= 2")));
        }
        if self.stages == 0 || self.stages > 40 {
            return Err(Error::config(format!("stages = {} must be in 1..=40", self.stages)));
        }
        if self.base_width == 0 {
            return Err(Error::config("base_width must be at least one tick"));
        }
        if self.segments < 2 {
            return Err(Error::config("at least two segments are needed for an error estimate"));
        }
        Ok(())
    }

    /// `(stage, k)` pairs in increasing lag order.
    pub fn lag_grid(&self) -> Vec<(u32, u64)> {
        let m = self.channels_per_stage as u64;
        let mut out = Vec::new();
        for s in 0..self.stages {
            let first = if s == 0 { 1 } else { m / 2 + 1 };
            out.extend((first..=m).map(|k| (s, k)));
        }
        out
    }

    /// Lag in ticks of each grid point.
    pub fn lag_ticks(&self) -> Vec<u64> {
        self.lag_grid()
            .into_iter()
            .map(|(s, k)| k * (self.base_width << s))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveSource {
    Auto,
    Cross,
}

/// Input file reference recorded in curve metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMeta {
    pub scheme: MultiTauScheme,
    pub duration_s: f64,
    /// Mean count rate of the first and second stream [counts/s].
    pub rate_a: f64,
    pub rate_b: f64,
    #[serde(default)]
    pub inputs: Vec<InputRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    /// Lag times [s], strictly increasing.
    pub lags: Vec<f64>,
    pub g2: Vec<f64>,
    pub stderr: Vec<f64>,
    pub norm: Normalization,
    pub source: CurveSource,
    pub meta: CurveMeta,
}

impl CorrelationCurve {
    pub fn len(&self) -> usize {
        self.lags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lags.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.lags.len();
        if self.g2.len() != n || self.stderr.len() != n {
            return Err(Error::data("lags, g2 and stderr differ in length"));
        }
        if self.lags.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::data("lags must be positive and finite"));
        }
        if self.lags.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::data("lags must be strictly increasing"));
        }
        if self.g2.iter().any(|g| !g.is_finite()) {
            return Err(Error::data("g2 must be finite"));
        }
        if self.stderr.iter().any(|e| e.is_nan() || *e < 0.0) {
            return Err(Error::data("stderr must be non-negative"));
        }
        Ok(())
    }

    /// `lag_s,g2,stderr` with one row per lag.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lag_s,g2,stderr\n");
        for i in 0..self.lags.len() {
            out.push_str(&format!("{:.9e},{:.12e},{:.6e}\n", self.lags[i], self.g2[i], self.stderr[i]));
        }
        out
    }

    /// Parses the CSV form; metadata other than the values is left empty.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "lag_s,g2,stderr" => {}
            _ => return Err(Error::Format("expected header `lag_s,g2,stderr`".into())),
        }
        let (mut lags, mut g2, mut stderr) = (Vec::new(), Vec::new(), Vec::new());
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::Format(format!("line {}: expected 3 fields", i + 2)));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("line {}: {e}", i + 2)))
            };
            lags.push(parse(fields[0])?);
            g2.push(parse(fields[1])?);
            stderr.push(parse(fields[2])?);
        }
        let c = CorrelationCurve {
            lags,
            g2,
            stderr,
            norm: Normalization::Symmetric,
            source: CurveSource::Auto,
            meta: CurveMeta {
                scheme: MultiTauScheme::default(),
                duration_s: f64::NAN,
                rate_a: f64::NAN,
                rate_b: f64::NAN,
                inputs: Vec::new(),
            },
        };
        c.validate()?;
        Ok(c)
    }
}

/// Raw sums of the estimator at one lag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LagSums {
    lag: u64,
    width: u64,
    /// Σ n_i m_{i+k}
    product: u64,
    /// Σ_{i<M} n_i
    head: u64,
    /// Σ_{i≥k} m_i
    tail: u64,
    /// M
    overlap: u64,
}

impl LagSums {
    fn g2(&self) -> Option<f64> {
        if self.head == 0 || self.tail == 0 {
            return None;
        }
        Some(self.product as f64 * self.overlap as f64 / (self.head as f64 * self.tail as f64))
    }
}

fn sparse_bins(ticks: &[u64], width: u64) -> Vec<(u64, u64)> {
    let mut out: Vec<(u64, u64)> = Vec::new();
    for &t in ticks {
        let i = t / width;
        match out.last_mut() {
            Some((j, c)) if *j == i => *c += 1,
            _ => out.push((i, 1)),
        }
    }
    out
}

fn coarsen(bins: &[(u64, u64)]) -> Vec<(u64, u64)> {
    let mut out: Vec<(u64, u64)> = Vec::with_capacity(bins.len());
    for &(i, c) in bins {
        let j = i >> 1;
        match out.last_mut() {
            Some((k, n)) if *k == j => *n += c,
            _ => out.push((j, c)),
        }
    }
    out
}

/// Estimator sums for all lags of `scheme` with `max_lag` ticks or less, for
/// sorted ticks in `[0, length)`.
fn multitau_sums(a: &[u64], b: &[u64], length: u64, scheme: &MultiTauScheme, max_lag: u64) -> Vec<LagSums> {
    let m = scheme.channels_per_stage as u64;
    let mut out = Vec::new();
    let mut bins_a = sparse_bins(a, scheme.base_width);
    let mut bins_b = sparse_bins(b, scheme.base_width);
    for s in 0..scheme.stages {
        let width = scheme.base_width << s;
        let n_bins = length / width;
        let k_lo = if s == 0 { 1 } else { m / 2 + 1 };
        let k_hi = m;
        if k_lo * width > max_lag || k_lo >= n_bins {
            break;
        }
        let mut products = vec![0u64; (k_hi - k_lo + 1) as usize];
        let mut start = 0usize;
        for &(i, ni) in &bins_a {
            if i + k_lo >= n_bins {
                break;
            }
            while start < bins_b.len() && bins_b[start].0 < i + k_lo {
                start += 1;
            }
            for &(j, mj) in &bins_b[start..] {
                if j > i + k_hi || j >= n_bins {
                    break;
                }
                products[(j - i - k_lo) as usize] += ni * mj;
            }
        }
        for k in k_lo..=k_hi {
            let lag = k * width;
            if lag > max_lag || k >= n_bins {
                break;
            }
            let overlap = n_bins - k;
            let head = a.partition_point(|&t| t < overlap * width) as u64;
            let tail = (b.partition_point(|&t| t < n_bins * width) - b.partition_point(|&t| t < lag)) as u64;
            out.push(LagSums { lag, width, product: products[(k - k_lo) as usize], head, tail, overlap });
        }
        bins_a = coarsen(&bins_a);
        bins_b = coarsen(&bins_b);
    }
    out
}

fn segment(ticks: &[u64], from: u64, to: u64) -> Vec<u64> {
    let lo = ticks.partition_point(|&t| t < from);
    let hi = ticks.partition_point(|&t| t < to);
    ticks[lo..hi].iter().map(|t| t - from).collect()
}

/// Correlates `a` with `b` (pass the same stream twice for an
/// autocorrelation). Lags longer than 1/100 of the acquisition are omitted.
pub fn correlate(a: &PhotonStream, b: &PhotonStream, scheme: &MultiTauScheme) -> Result<CorrelationCurve> {
    scheme.validate()?;
    a.validate()?;
    b.validate()?;
    if a.tick_ns != b.tick_ns {
        return Err(Error::data("streams use different tick lengths"));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::data("cannot correlate an empty stream"));
    }
    let length = a.duration.min(b.duration);
    let max_lag = length / 100;
    let source = if std::ptr::eq(a, b) || a == b { CurveSource::Auto } else { CurveSource::Cross };

    let full = multitau_sums(&a.timestamps, &b.timestamps, length, scheme, max_lag);
    let n_seg = scheme.segments as u64;
    let seg_len = length / n_seg;
    let per_segment: Vec<Vec<LagSums>> = (0..n_seg)
        .into_par_iter()
        .map(|s| {
            let (from, to) = (s * seg_len, (s + 1) * seg_len);
            let sa = segment(&a.timestamps, from, to);
            let sb = segment(&b.timestamps, from, to);
            multitau_sums(&sa, &sb, seg_len, scheme, max_lag)
        })
        .collect();

    let tick = a.tick_seconds();
    let mut curve = CorrelationCurve {
        lags: Vec::new(),
        g2: Vec::new(),
        stderr: Vec::new(),
        norm: Normalization::Symmetric,
        source,
        meta: CurveMeta {
            scheme: *scheme,
            duration_s: length as f64 * tick,
            rate_a: a.len() as f64 / a.duration_seconds(),
            rate_b: b.len() as f64 / b.duration_seconds(),
            inputs: Vec::new(),
        },
    };
    for (idx, sums) in full.iter().enumerate() {
        let Some(g) = sums.g2() else { continue };
        let values: Vec<f64> = per_segment
            .iter()
            .filter_map(|seg| seg.get(idx).filter(|s| s.lag == sums.lag).and_then(LagSums::g2))
            .collect();
        curve.lags.push(sums.lag as f64 * tick);
        curve.g2.push(g);
        curve.stderr.push(standard_error(&values));
    }
    if curve.is_empty() {
        return Err(Error::data("zero mean rate at every lag"));
    }
    Ok(curve)
}

/// Standard error of the mean of `values`; infinite with fewer than two.
fn standard_error(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::INFINITY;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Cross-correlation of the two channels of a split stream, or the
/// autocorrelation of a single-channel stream.
pub fn correlate_stream(stream: &PhotonStream, scheme: &MultiTauScheme) -> Result<CorrelationCurve> {
    match stream.n_channels {
        1 => correlate(stream, stream, scheme),
        2 => correlate(&stream.channel(0), &stream.channel(1), scheme),
        n => Err(Error::data(format!("expected 1 or 2 channels, got {n}"))),
    }
}

/// Parameters of the FCS model with triplet blinking and background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FcsModelParams {
    #[serde(rename = "N_tot")]
    pub n_tot: f64,
    /// Triplet amplitude `T/(1−T)`.
    #[serde(rename = "n_T")]
    pub n_t: f64,
    /// Triplet blinking time [s].
    #[serde(rename = "tau_bT")]
    pub tau_bt: f64,
    /// Diffusion time [s].
    pub tau_d: f64,
    /// Aspect ratio.
    pub s: f64,
    /// Background fraction ⟨b⟩/⟨i⟩.
    pub b_over_i: f64,
}

impl FcsModelParams {
    pub const NAMES: [&'static str; 6] = ["N_tot", "n_T", "tau_bT", "tau_d", "s", "b_over_i"];

    pub fn to_array(&self) -> [f64; 6] {
        [self.n_tot, self.n_t, self.tau_bt, self.tau_d, self.s, self.b_over_i]
    }

    pub fn from_array(p: &[f64]) -> Self {
        FcsModelParams { n_tot: p[0], n_t: p[1], tau_bt: p[2], tau_d: p[3], s: p[4], b_over_i: p[5] }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n_tot > 0.0 && self.n_tot.is_finite()) {
            return Err(Error::domain(format!("N_tot = {} must be positive", self.n_tot)));
        }
        if !(self.n_t >= 0.0 && self.n_t.is_finite()) {
            return Err(Error::domain(format!("n_T = {} must be >= 0", self.n_t)));
        }
        if !(self.tau_bt > 0.0 && self.tau_d > 0.0) {
            return Err(Error::domain("tau_bT and tau_d must be positive"));
        }
        if !(self.s >= 0.0 && self.s.is_finite()) {
            return Err(Error::domain(format!("s = {} must be >= 0", self.s)));
        }
        if !(0.0..1.0).contains(&self.b_over_i) {
            return Err(Error::domain(format!("b_over_i = {} must be in [0, 1)", self.b_over_i)));
        }
        Ok(())
    }

    /// `g2(0⁺) − 1`.
    pub fn amplitude(&self) -> f64 {
        (1.0 + self.n_t) * (1.0 - self.b_over_i).powi(2) / self.n_tot
    }
}

/// `1 + (1−b/i)²/N · (1 + n_T e^{−τ/τ_bT}) / ((1+τ/τ_d) √(1+s²τ/τ_d))`.
pub fn eval_model(p: &FcsModelParams, lags: &[f64]) -> Result<Vec<f64>> {
    p.validate()?;
    Ok(lags.iter().map(|&t| model_point(p, t)).collect())
}

pub(crate) fn model_point(p: &FcsModelParams, t: f64) -> f64 {
    1.0 + model_excess(p, t)
}

/// `g2(τ) − 1`.
pub(crate) fn model_excess(p: &FcsModelParams, t: f64) -> f64 {
    let x = t / p.tau_d;
    let triplet = 1.0 + p.n_t * (-t / p.tau_bt).exp();
    let diffusion = 1.0 / ((1.0 + x) * (1.0 + p.s * p.s * x).sqrt());
    (1.0 - p.b_over_i).powi(2) / p.n_tot * triplet * diffusion
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountRateStats {
    /// Mean count rate [counts/s].
    pub mean_rate: f64,
    /// `Var(n)/⟨n⟩ − 1` of counts in bins of `bin_width_s`.
    pub mandel_q: f64,
    pub bin_width_s: f64,
}

pub fn count_rate_stats(a: &PhotonStream, bin_width_s: f64) -> Result<CountRateStats> {
    a.validate()?;
    if a.is_empty() {
        return Err(Error::data("empty stream"));
    }
    let width = (bin_width_s / a.tick_seconds()).round() as u64;
    if width == 0 {
        return Err(Error::data("bin width shorter than one tick"));
    }
    let n_bins = a.duration / width;
    if n_bins < 2 {
        return Err(Error::data("bin width longer than half the acquisition"));
    }
    let mut counts = vec![0u64; n_bins as usize];
    for &t in &a.timestamps {
        if let Some(c) = counts.get_mut((t / width) as usize) {
            *c += 1;
        }
    }
    let n = n_bins as f64;
    let mean = counts.iter().sum::<u64>() as f64 / n;
    let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(CountRateStats {
        mean_rate: a.len() as f64 / a.duration_seconds(),
        mandel_q: if mean > 0.0 { var / mean - 1.0 } else { 0.0 },
        bin_width_s: width as f64 * a.tick_seconds(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Exp};

    fn poisson_stream(rate: f64, duration_s: f64, seed: u64, stream: u64) -> PhotonStream {
        let mut rng = substream(seed, stream);
        let gap = Exp::new(rate * 1e-9).unwrap();
        let duration = (duration_s * 1e9) as u64;
        let mut t = 0.0;
        let mut ticks = Vec::new();
        loop {
            t += gap.sample(&mut rng);
            if t as u64 >= duration {
                break;
            }
            ticks.push(t as u64);
        }
        PhotonStream::from_ticks(ticks, duration, 1).unwrap()
    }

    /// Dense-array evaluation of the same estimator at one bin width.
    fn dense_g2(a: &[u64], b: &[u64], length: u64, width: u64, k: u64) -> f64 {
        let n = (length / width) as usize;
        let bin = |ticks: &[u64]| {
            let mut v = vec![0u64; n];
            for &t in ticks {
                if let Some(c) = v.get_mut((t / width) as usize) {
                    *c += 1;
                }
            }
            v
        };
        let (na, nb) = (bin(a), bin(b));
        let k = k as usize;
        let m = n - k;
        let product: u64 = (0..m).map(|i| na[i] * nb[i + k]).sum();
        let head: u64 = na[..m].iter().sum();
        let tail: u64 = nb[k..].iter().sum();
        product as f64 * m as f64 / (head as f64 * tail as f64)
    }

    #[test]
    fn lag_grid_layout() {
        let s = MultiTauScheme::default();
        let lags = s.lag_ticks();
        assert_eq!(lags.len(), 16 + 19 * 8);
        assert_eq!(&lags[..3], &[1, 2, 3]);
        assert_eq!(lags[15], 16);
        assert_eq!(lags[16], 18);
        assert_eq!(*lags.last().unwrap(), 16 << 19);
        assert!(lags.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn matches_dense_oracle() {
        let a = poisson_stream(2e5, 0.05, 3, 0);
        let b = poisson_stream(2e5, 0.05, 3, 1);
        let scheme = MultiTauScheme { base_width: 50, ..Default::default() };
        let sums = multitau_sums(&a.timestamps, &b.timestamps, a.duration, &scheme, a.duration / 100);
        assert!(sums.len() > 60);
        for s in &sums {
            let oracle = dense_g2(&a.timestamps, &b.timestamps, a.duration, s.width, s.lag / s.width);
            let got = s.g2().unwrap();
            assert!((got - oracle).abs() <= 1e-12 * oracle, "lag {}: {got} vs {oracle}", s.lag);
        }
    }

    #[test]
    fn independent_poisson_is_flat() {
        let a = poisson_stream(1e5, 2.0, 5, 0);
        let b = poisson_stream(1e5, 2.0, 5, 1);
        let scheme = MultiTauScheme { base_width: 100, ..Default::default() };
        let c = correlate(&a, &b, &scheme).unwrap();
        c.validate().unwrap();
        assert_eq!(c.source, CurveSource::Cross);
        let outliers = c
            .g2
            .iter()
            .zip(&c.stderr)
            .filter(|(g, e)| (*g - 1.0).abs() > 4.0 * *e)
            .count();
        assert!(outliers <= 2, "{outliers} of {}", c.len());
    }

    #[test]
    fn pulse_train_peaks_at_period() {
        let period = 1000u64;
        let ticks: Vec<u64> = (0..20_000).map(|i| i * period + 3).collect();
        let s = PhotonStream::from_ticks(ticks, 20_000 * period, 1).unwrap();
        let scheme = MultiTauScheme { base_width: 125, stages: 6, ..Default::default() };
        let c = correlate(&s, &s, &scheme).unwrap();
        assert_eq!(c.len(), scheme.lag_grid().len());
        for ((stage, k), g) in scheme.lag_grid().into_iter().zip(&c.g2) {
            let width = scheme.base_width << stage;
            if width >= period {
                assert!((g - 1.0).abs() < 1e-3, "width {width}: {g}");
            } else if (k * width) % period == 0 {
                assert!(*g > 1.5, "lag {}: {g}", k * width);
            } else {
                assert_eq!(*g, 0.0, "lag {}", k * width);
            }
        }
    }

    #[test]
    fn empty_or_mismatched_streams_are_errors() {
        let e = PhotonStream::from_ticks(vec![], 1000, 1).unwrap();
        let s = PhotonStream::from_ticks(vec![1, 2], 1000, 1).unwrap();
        assert!(correlate(&e, &s, &MultiTauScheme::default()).is_err());
        let mut t = s.clone();
        t.tick_ns = 2;
        assert!(correlate(&s, &t, &MultiTauScheme::default()).is_err());
        let bad = MultiTauScheme { channels_per_stage: 7, ..Default::default() };
        assert!(correlate(&s, &s, &bad).is_err());
    }

    #[test]
    fn model_amplitude_asymptote_and_value() {
        let p = FcsModelParams { n_tot: 1.0, n_t: 0.3, tau_bt: 2e-6, tau_d: 100e-6, s: 0.2, b_over_i: 0.0 };
        let g = eval_model(&p, &[1e-15, 1e6, 100e-6]).unwrap();
        assert!((g[0] - 2.3).abs() < 1e-9);
        assert!((g[1] - 1.0).abs() < 1e-8);
        let expected = 1.0 + (1.0 + 0.3 * (-50f64).exp()) * 0.5 / 1.04f64.sqrt();
        assert!((g[2] - expected).abs() < 1e-15);
        assert!((g[2] - 1.490).abs() < 1e-3);
    }

    #[test]
    fn invalid_model_params() {
        let p = FcsModelParams { n_tot: 1.0, n_t: 0.0, tau_bt: 1e-6, tau_d: 1e-4, s: 0.2, b_over_i: 1.0 };
        assert!(eval_model(&p, &[1e-6]).is_err());
        assert!(eval_model(&FcsModelParams { n_tot: 0.0, b_over_i: 0.0, ..p }, &[1e-6]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 1000, rng_seed: proptest::test_runner::RngSeed::Fixed(7), ..ProptestConfig::default() })]
        #[test]
        fn model_identities(
            n in 0.05f64..50.0, nt in 0.0f64..2.0, tbt in 1e-8f64..1e-5, ratio in 3.0f64..1e3,
            s in 0.0f64..2.0, b in 0.0f64..0.9,
        ) {
            let p = FcsModelParams { n_tot: n, n_t: nt, tau_bt: tbt, tau_d: tbt * ratio, s, b_over_i: b };
            let lags: Vec<f64> = (0..60).map(|i| tbt * 1e-4 * 10f64.powf(i as f64 / 6.0)).collect();
            let g = eval_model(&p, &lags).unwrap();
            let amp = 1.0 + p.amplitude();
            prop_assert!((model_point(&p, 0.0) - amp).abs() <= 1e-15 * amp);
            prop_assert!((model_point(&p, f64::INFINITY) - 1.0).abs() == 0.0);
            prop_assert!(g.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn csv_roundtrip() {
        let a = poisson_stream(1e5, 0.5, 9, 0);
        let c = correlate(&a, &a, &MultiTauScheme { base_width: 100, ..Default::default() }).unwrap();
        assert_eq!(c.source, CurveSource::Auto);
        let back = CorrelationCurve::from_csv(&c.to_csv()).unwrap();
        assert_eq!(back.len(), c.len());
        for (x, y) in back.g2.iter().zip(&c.g2) {
            assert!((x - y).abs() < 1e-11 * y);
        }
        assert!(CorrelationCurve::from_csv("lag,g\n").is_err());
    }

    #[test]
    fn twelve_thousand_counts_per_second() {
        let ticks: Vec<u64> = (0..120_000u64).map(|i| i * 83_333).collect();
        let s = PhotonStream::from_ticks(ticks, 10_000_000_000, 1).unwrap();
        let st = count_rate_stats(&s, 1e-3).unwrap();
        assert!((st.mean_rate - 12_000.0).abs() < 1e-9);
    }

    #[test]
    fn poisson_has_zero_mandel_q() {
        let s = poisson_stream(5e4, 5.0, 11, 0);
        let st = count_rate_stats(&s, 1e-4).unwrap();
        assert!((st.mean_rate - 5e4).abs() < 4.0 * (5e4f64 / 5.0).sqrt());
        // standard error of Q is about sqrt(2/n_bins)
        assert!(st.mandel_q.abs() < 4.0 * (2.0 / 5e4f64).sqrt(), "{}", st.mandel_q);
    }

    /// Telegraph-modulated Poisson source: `g2 − 1 = ((1−p)/p) e^{−λτ}` and
    /// `Q = 2 r p ∫_0^T (1 − τ/T)(g2 − 1) dτ`.
    #[test]
    fn bunched_stream_mandel_q_matches_g2_integral() {
        let (k_on, k_off, rate) = (2e4, 3e4, 2e5);
        let duration = 20.0;
        let mut rng = substream(13, 0);
        let mut ticks = Vec::new();
        let (mut t, mut on) = (0.0, rng.random::<f64>() < k_on / (k_on + k_off));
        while t < duration {
            let hold = Exp::new(if on { k_off } else { k_on }).unwrap().sample(&mut rng);
            let end = (t + hold).min(duration);
            if on {
                let mut u = t + Exp::new(rate).unwrap().sample(&mut rng);
                while u < end {
                    ticks.push((u * 1e9) as u64);
                    u += Exp::new(rate).unwrap().sample(&mut rng);
                }
            }
            t = end;
            on = !on;
        }
        let s = PhotonStream::from_ticks(ticks, (duration * 1e9) as u64, 1).unwrap();
        let width = 1e-4;
        let st = count_rate_stats(&s, width).unwrap();
        let p = k_on / (k_on + k_off);
        let lambda = k_on + k_off;
        let x = lambda * width;
        let integral = ((1.0 - p) / p) * (1.0 / lambda) * (1.0 - (1.0 - (-x).exp()) / x);
        let q = 2.0 * rate * p * integral;
        assert!(st.mandel_q > 0.0);
        assert!((st.mandel_q - q).abs() / q < 0.05, "{} vs {q}", st.mandel_q);
        let c = correlate(&s, &s, &MultiTauScheme { base_width: 100, ..Default::default() }).unwrap();
        let first = c.g2[0] - 1.0;
        let expected = (1.0 - p) / p * (-lambda * c.lags[0]).exp();
        assert!((first - expected).abs() < 0.05 * expected, "{first} vs {expected}");
    }
}
