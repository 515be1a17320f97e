//! First exit of 3D Brownian motion from a ball, started at the centre.
//!
//! In the dimensionless time `s = D t / r²` the survival function is
//! `S(s) = 2 Σ_{n≥1} (−1)^{n+1} exp(−n²π² s)`, or equivalently
//! `S(s) = 1 − (2/√(πs)) Σ_{k≥0} exp(−(k + ½)²/s)`; the second form is used
//! for small `s` where the first converges slowly. Samples are drawn by
//! inverting a tabulated `S` in `ln s`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::Rng;

const S_MIN: f64 = 0.005;
const S_MAX: f64 = 4.5;
const TABLE_LEN: usize = 8192;

pub(super) fn survival(s: f64) -> f64 {
    if s < 0.2 {
        let mut sum = 0.0;
        for k in 0..6 {
            let a = k as f64 + 0.5;
            sum += (-a * a / s).exp();
        }
        1.0 - 2.0 / (PI * s).sqrt() * sum
    } else {
        let mut sum = 0.0;
        for n in 1..12 {
            let n = n as f64;
            let sign = if n as u32 % 2 == 1 { 1.0 } else { -1.0 };
            sum += sign * (-n * n * PI * PI * s).exp();
        }
        2.0 * sum
    }
}

/// `(ln s_i, S(s_i))` on a log grid; `S` decreases along the table.
fn table() -> &'static [(f64, f64)] {
    static TABLE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let (a, b) = (S_MIN.ln(), S_MAX.ln());
        (0..TABLE_LEN)
            .map(|i| {
                let ls = a + (b - a) * i as f64 / (TABLE_LEN - 1) as f64;
                (ls, survival(ls.exp()))
            })
            .collect()
    })
}

/// Dimensionless exit time `s`.
pub(super) fn sample<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let t = table();
    if u >= t[0].1 {
        return S_MIN;
    }
    let last = t[TABLE_LEN - 1];
    if u <= last.1 {
        // S ≈ 2 exp(−π² s) in the tail
        return (2.0 / u.max(f64::MIN_POSITIVE)).ln() / (PI * PI);
    }
    let i = t.partition_point(|&(_, s)| s > u);
    let ((l0, s0), (l1, s1)) = (t[i - 1], t[i]);
    let f = (s0 - u) / (s0 - s1);
    (l0 + f * (l1 - l0)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn series_forms_agree_and_limits_hold() {
        for s in [0.05, 0.1, 0.15, 0.2, 0.3] {
            let mut a = 0.0;
            for n in 1..40 {
                let n = n as f64;
                a += if n as u32 % 2 == 1 { 2.0 } else { -2.0 } * (-n * n * PI * PI * s).exp();
            }
            assert!((a - survival(s)).abs() < 1e-12, "{s}");
        }
        assert!(1.0 - survival(S_MIN) < 1e-16);
        assert!(survival(S_MAX) < 1e-16);
    }

    #[test]
    fn moments_match() {
        // E[s] = 1/6 and E[s²] = 7/180
        let mut rng = substream(3, 0);
        let n = 1_000_000;
        let (mut m1, mut m2) = (0.0, 0.0);
        for _ in 0..n {
            let s = sample(&mut rng);
            m1 += s;
            m2 += s * s;
        }
        m1 /= n as f64;
        m2 /= n as f64;
        let sd1 = ((7.0 / 180.0 - 1.0 / 36.0) / n as f64).sqrt();
        assert!((m1 - 1.0 / 6.0).abs() < 4.0 * sd1, "{m1}");
        assert!((m2 - 7.0 / 180.0).abs() < 0.01 * 7.0 / 180.0, "{m2}");
    }
}
