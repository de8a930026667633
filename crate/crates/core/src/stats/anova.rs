use statrs::function::beta::beta_reg;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnovaResult {
    pub f: f64,
    pub p_value: f64,
    pub df_between: f64,
    pub df_within: f64,
    pub ms_within: f64,
}

/// Survival function of the F distribution.
pub fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    beta_reg(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * f))
}

/// One-way ANOVA. Zero within-group variance gives `F = ∞` unless the
/// group means are also equal, in which case F is undefined.
pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<AnovaResult> {
    let k = groups.len();
    if k < 2 {
        return Err(Error::Degenerate(format!("ANOVA needs at least 2 groups, got {k}")));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(Error::Degenerate(format!("ANOVA group of size {} (needs 2)", g.len())));
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ss_between += g.len() as f64 * (m - grand) * (m - grand);
        ss_within += g.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    let df_between = (k - 1) as f64;
    let df_within = (n - k) as f64;
    let ms_within = ss_within / df_within;
    let ms_between = ss_between / df_between;
    // tolerance relative to the data scale, so shifted copies count as constant
    let scale = groups.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    let tiny = (1e-13 * scale).powi(2) * n as f64;
    let f = if ss_within <= tiny {
        if ss_between <= tiny {
            return Err(Error::NoWithinVariance);
        }
        f64::INFINITY
    } else if ss_between <= tiny {
        0.0
    } else {
        ms_between / ms_within
    };
    Ok(AnovaResult {
        f,
        p_value: f_sf(f, df_between, df_within),
        df_between,
        df_within,
        ms_within,
    })
}
