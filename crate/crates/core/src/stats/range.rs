//! Distribution of the studentized range of `k` normal means.

use std::sync::OnceLock;

use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use super::quadrature::{gauss_legendre, mapped};
use crate::{Error, Result};

const NODES: usize = 64;
/// Above this many degrees of freedom the scale is treated as known.
const DF_INF: f64 = 1e6;

fn rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(NODES))
}

fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn big_phi(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `P(range of k standard normals ≤ w) = k ∫ φ(z) [Φ(z) − Φ(z − w)]^(k−1) dz`.
fn range_cdf(w: f64, k: usize) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let kf = k as f64;
    let (lo, hi) = (-8.5, w + 8.5);
    // panels no wider than 6 keep the rule accurate for wide ranges
    let panels = ((hi - lo) / 6.0).ceil() as usize;
    let width = (hi - lo) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let a = lo + p as f64 * width;
        for (z, wt) in mapped(rule(), a, a + width) {
            let d = (big_phi(z) - big_phi(z - w)).max(0.0);
            total += wt * phi(z) * d.powi(k as i32 - 1);
        }
    }
    (kf * total).clamp(0.0, 1.0)
}

/// Log density of `u = ln s`, `s = sqrt(χ²_ν/ν)`.
fn log_scale_density(u: f64, df: f64) -> f64 {
    let h = 0.5 * df;
    std::f64::consts::LN_2 + h * h.ln() - ln_gamma(h) + df * u - h * (2.0 * u).exp()
}

/// Point where the log density has dropped by `drop` from its mode at 0.
fn tail(df: f64, drop: f64, dir: f64) -> f64 {
    let g = |u: f64| df * u - 0.5 * df * (2.0 * u).exp() + 0.5 * df + drop;
    let (mut a, mut b) = (0.0, dir);
    while g(b) > 0.0 {
        b *= 2.0;
    }
    for _ in 0..80 {
        let m = 0.5 * (a + b);
        if g(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    b
}

fn check(k: usize, df: f64) -> Result<()> {
    if k < 2 {
        return Err(Error::Param(format!("studentized range needs k ≥ 2, got {k}")));
    }
    if !(df >= 1.0) {
        return Err(Error::Param(format!("degrees of freedom {df} must be at least 1")));
    }
    Ok(())
}

/// `P(Q ≤ q)` for `k` groups and `df` error degrees of freedom.
pub fn studentized_range_cdf(q: f64, k: usize, df: f64) -> Result<f64> {
    check(k, df)?;
    if q.is_nan() {
        return Err(Error::Param("q is NaN".into()));
    }
    if q <= 0.0 {
        return Ok(0.0);
    }
    if q.is_infinite() {
        return Ok(1.0);
    }
    if df > DF_INF {
        return Ok(range_cdf(q, k));
    }
    let (lo, hi) = (tail(df, 45.0, -1.0), tail(df, 45.0, 1.0));
    let mut total = 0.0;
    for (a, b) in [(lo, 0.0), (0.0, hi)] {
        for (u, wt) in mapped(rule(), a, b) {
            total += wt * log_scale_density(u, df).exp() * range_cdf(q * u.exp(), k);
        }
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Upper tail `P(Q > q)`.
pub fn studentized_range_sf(q: f64, k: usize, df: f64) -> Result<f64> {
    Ok((1.0 - studentized_range_cdf(q, k, df)?).max(0.0))
}

/// Quantile: the `q` with `P(Q ≤ q) = p`.
pub fn studentized_range_ppf(p: f64, k: usize, df: f64) -> Result<f64> {
    check(k, df)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Param(format!("probability {p} outside (0, 1)")));
    }
    let cdf = |q: f64| studentized_range_cdf(q, k, df);
    let (mut a, mut b) = (0.0, 4.0);
    while cdf(b)? < p {
        a = b;
        b *= 2.0;
        if b > 1e4 {
            return Err(Error::Param(format!("quantile {p} is beyond reach for df {df}")));
        }
    }
    while b - a > 1e-11 * b.max(1.0) {
        let m = 0.5 * (a + b);
        if cdf(m)? < p {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppf_matches_reference_values() {
        // scipy.stats.studentized_range
        let cases = [
            (0.95, 3, 10.0, 3.876776750013158),
            (0.95, 4, 20.0, 3.9582935609453846),
            (0.95, 2, 5.0, 3.63535169514679),
            (0.95, 7, 203.0, 4.211736330186278),
            (0.99, 5, 30.0, 5.047605131904664),
        ];
        for (p, k, df, want) in cases {
            let got = studentized_range_ppf(p, k, df).unwrap();
            assert!((got - want).abs() < 1e-6, "k {k} df {df}: {got} vs {want}");
        }
    }

    #[test]
    fn sf_matches_reference_values() {
        let cases = [
            (3.0, 3, 10.0, 0.13498341518956258),
            (1.0, 4, 20.0, 0.8930898511217038),
            (5.0, 7, 100.0, 0.010710529274361225),
        ];
        for (q, k, df, want) in cases {
            let got = studentized_range_sf(q, k, df).unwrap();
            assert!((got - want).abs() < 1e-8, "q {q}: {got} vs {want}");
        }
    }

    #[test]
    fn two_groups_reduce_to_a_scaled_normal() {
        // with k = 2 and known scale, Q = |Z1 − Z2| so P(Q ≤ q) = 2Φ(q/√2) − 1
        for q in [0.5, 1.0, 2.77, 4.0] {
            let want = 2.0 * big_phi(q / std::f64::consts::SQRT_2) - 1.0;
            let got = studentized_range_cdf(q, 2, 1e7).unwrap();
            assert!((got - want).abs() < 1e-10, "{q}: {got} vs {want}");
        }
    }

    #[test]
    fn cdf_is_monotone() {
        let mut last = 0.0;
        for i in 1..40 {
            let c = studentized_range_cdf(i as f64 * 0.2, 5, 12.0).unwrap();
            assert!(c >= last);
            last = c;
        }
        // scipy: cdf(7.8, 5, 12) = 0.99898
        assert!((last - 0.9989774051951401).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(studentized_range_cdf(1.0, 1, 10.0).is_err());
        assert!(studentized_range_cdf(1.0, 3, 0.5).is_err());
        assert!(studentized_range_ppf(1.0, 3, 10.0).is_err());
    }
}
