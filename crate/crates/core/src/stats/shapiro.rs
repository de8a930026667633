//! Shapiro-Wilk W with Royston's AS R94 coefficients and p-value.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Antisymmetric coefficients `a_1..a_{n/2}` (for the largest order statistics).
fn coefficients(n: usize) -> Vec<f64> {
    let n2 = n / 2;
    if n == 3 {
        return vec![std::f64::consts::FRAC_1_SQRT_2];
    }
    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    let an = n as f64;
    let nd = std_normal();
    // m_i for the lower half, negative
    let m: Vec<f64> = (1..=n2).map(|i| nd.inverse_cdf((i as f64 - 0.375) / (an + 0.25))).collect();
    let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / an.sqrt();
    let a1 = poly(&C1, rsn) - m[0] / ssumm2;
    let mut a = vec![0.0; n2];
    a[0] = a1;
    let (first, fac) = if n > 5 {
        let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
        a[1] = a2;
        let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2)).sqrt();
        (2, fac)
    } else {
        (1, ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt())
    };
    for i in first..n2 {
        a[i] = -m[i] / fac;
    }
    a
}

/// Returns `(W, p)`. Requires `3 ≤ n ≤ 5000` and a non-constant sample.
pub fn shapiro_wilk(x: &[f64]) -> Result<(f64, f64)> {
    let n = x.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::Degenerate(format!("Shapiro-Wilk needs 3 to 5000 values, got {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("sample contains non-finite values".into()));
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let range = s[n - 1] - s[0];
    if range <= 1e-19 * s[n - 1].abs().max(s[0].abs()).max(1.0) {
        return Err(Error::Degenerate("sample has zero variance".into()));
    }
    // scaled by the range for conditioning; W is scale free
    let s: Vec<f64> = s.iter().map(|v| (v - s[0]) / range).collect();
    let a = coefficients(n);
    let num: f64 = a.iter().enumerate().map(|(i, ai)| ai * (s[n - 1 - i] - s[i])).sum();
    let mean = s.iter().sum::<f64>() / n as f64;
    let ssq: f64 = s.iter().map(|v| (v - mean) * (v - mean)).sum();
    let w = (num * num / ssq).min(1.0);
    Ok((w, p_value(w, n)))
}

fn p_value(w: f64, n: usize) -> f64 {
    if n == 3 {
        const PI6: f64 = 6.0 / std::f64::consts::PI;
        const STQR: f64 = std::f64::consts::FRAC_PI_3;
        return (PI6 * (w.sqrt().asin() - STQR)).clamp(0.0, 1.0);
    }
    const G: [f64; 2] = [-2.273, 0.459];
    const C3: [f64; 4] = [0.5440, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
    let an = n as f64;
    let w1 = 1.0 - w;
    if w1 <= 0.0 {
        return 1.0;
    }
    let mut y = w1.ln();
    let (m, s) = if n <= 11 {
        let gamma = poly(&G, an);
        if y >= gamma {
            return 1e-99;
        }
        y = -(gamma - y).ln();
        (poly(&C3, an), poly(&C4, an).exp())
    } else {
        let xx = an.ln();
        (poly(&C5, xx), poly(&C6, xx).exp())
    };
    1.0 - std_normal().cdf((y - m) / s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matches_reference_values() {
        // scipy.stats.shapiro
        let sine: Vec<f64> = (0..40).map(|i| (i as f64 * 1.3).sin() + i as f64 * 0.05).collect();
        let cases: Vec<(Vec<f64>, f64, f64)> = vec![
            (vec![1.0, 1.0, 1.0, 2.0], 0.629776264554299, 0.0012407259151036264),
            (vec![2.1, 3.4, 1.9, 5.6, 4.4], 0.9320849391953863, 0.6106559022604845),
            (
                vec![0.77, -0.33, 1.2, 2.5, -1.1, 0.05, 0.9, 1.4, -0.6, 0.3, 0.2, 3.1, -2.2, 0.45, 0.8],
                0.9791394281776366,
                0.9632905231986558,
            ),
            (sine, 0.9778304579243962, 0.6094381884577347),
            (vec![1.0, 2.0, 4.0], 0.9642857142857142, 0.6368868450289689),
        ];
        for (x, w, p) in cases {
            let (gw, gp) = shapiro_wilk(&x).unwrap();
            // scipy works in single precision internally
            assert!((gw - w).abs() < 1e-6, "{x:?}: W {gw} vs {w}");
            assert!((gp - p).abs() < 1e-5, "{x:?}: p {gp} vs {p}");
        }
    }

    #[test]
    fn normal_quantiles_fit_almost_perfectly() {
        let nd = std_normal();
        let x: Vec<f64> = (1..=10).map(|i| nd.inverse_cdf((i as f64 - 0.5) / 10.0)).collect();
        assert!(shapiro_wilk(&x).unwrap().0 > 0.99);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(shapiro_wilk(&[1.0, 2.0]), Err(Error::Degenerate(_))));
        assert!(matches!(shapiro_wilk(&[3.0; 6]), Err(Error::Degenerate(_))));
        assert!(shapiro_wilk(&vec![0.0; 5001]).is_err());
    }

    proptest! {
        #[test]
        fn affine_invariance(x in prop::collection::vec(-10.0f64..10.0, 3..60), a in 0.01f64..100.0, b in -50.0f64..50.0) {
            let spread = x.iter().cloned().fold(f64::MIN, f64::max) - x.iter().cloned().fold(f64::MAX, f64::min);
            prop_assume!(spread > 1e-3);
            let (w, _) = shapiro_wilk(&x).unwrap();
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let (wy, _) = shapiro_wilk(&y).unwrap();
            prop_assert!(w > 0.0 && w <= 1.0);
            prop_assert!((w - wy).abs() < 1e-10);
        }
    }
}
