use super::anova::anova_oneway;
use super::range::{studentized_range_ppf, studentized_range_sf};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TukeyPair {
    pub i: usize,
    pub j: usize,
    /// `mean_i − mean_j`
    pub mean_diff: f64,
    pub q: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TukeyTable {
    pub q_crit: f64,
    pub df_within: f64,
    pub ms_within: f64,
    /// Every `i < j`.
    pub pairs: Vec<TukeyPair>,
}

impl TukeyTable {
    pub fn pair(&self, i: usize, j: usize) -> Option<&TukeyPair> {
        let (a, b) = (i.min(j), i.max(j));
        self.pairs.iter().find(|p| p.i == a && p.j == b)
    }
}

/// Tukey-Kramer pairwise comparisons at level `alpha`.
pub fn tukey_hsd(groups: &[Vec<f64>], alpha: f64) -> Result<TukeyTable> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Param(format!("alpha {alpha} outside (0, 1)")));
    }
    let k = groups.len();
    let anova = match anova_oneway(groups) {
        Ok(a) => a,
        Err(Error::NoWithinVariance) => return Err(Error::NoWithinVariance),
        Err(e) => return Err(e),
    };
    if anova.ms_within <= 0.0 || anova.f.is_infinite() {
        return Err(Error::NoWithinVariance);
    }
    let q_crit = studentized_range_ppf(1.0 - alpha, k, anova.df_within)?;
    let means: Vec<f64> = groups.iter().map(|g| g.iter().sum::<f64>() / g.len() as f64).collect();
    let mut pairs = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            let se = (anova.ms_within / 2.0 * (1.0 / groups[i].len() as f64 + 1.0 / groups[j].len() as f64)).sqrt();
            let diff = means[i] - means[j];
            let q = diff.abs() / se;
            pairs.push(TukeyPair {
                i,
                j,
                mean_diff: diff,
                q,
                p_value: studentized_range_sf(q, k, anova.df_within)?,
                significant: q > q_crit,
            });
        }
    }
    Ok(TukeyTable {
        q_crit,
        df_within: anova.df_within,
        ms_within: anova.ms_within,
        pairs,
    })
}
