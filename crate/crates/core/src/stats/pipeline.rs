//! Normality check, ANOVA and Tukey HSD, with a per-dataset follow-up for
//! pairs that do not differ on the whole test set.

use std::fmt::Write as _;

use log::warn;

use super::{anova_oneway, shapiro_wilk, tukey_hsd, AccuracySamples, AnovaResult};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Significance {
    Overall,
    PerDataset,
    NotSignificant,
}

impl Significance {
    fn symbol(self) -> &'static str {
        match self {
            Significance::Overall => "*",
            Significance::PerDataset => "d",
            Significance::NotSignificant => "-",
        }
    }
}

/// Symmetric pairwise table; the diagonal is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceMatrix {
    pub systems: Vec<String>,
    cells: Vec<Vec<Option<Significance>>>,
}

impl SignificanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<Significance> {
        self.cells[i][j]
    }

    pub fn len(&self) -> usize {
        self.systems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.systems.is_empty()
    }
}

/// One Tukey comparison. `scope` is `overall` or a dataset id.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTest {
    pub system_a: String,
    pub system_b: String,
    pub scope: String,
    pub mean_diff: f64,
    pub q: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceReport {
    pub alpha: f64,
    pub means: Vec<f64>,
    /// `(W, p)` per system; `None` when the sample is constant.
    pub normality: Vec<Option<(f64, f64)>>,
    /// `None` when every subset accuracy of every system is the same.
    pub anova: Option<AnovaResult>,
    pub tests: Vec<PairTest>,
    pub matrix: SignificanceMatrix,
}

pub const CSV_HEADER: &str = "system_a,system_b,scope,q,p,significant";

impl SignificanceReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for t in &self.tests {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                t.system_a, t.system_b, t.scope, t.q, t.p_value, t.significant
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        let names = &self.matrix.systems;
        let width = names.iter().map(String::len).max().unwrap_or(0).max(8);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  mean acc  Shapiro-Wilk p", "system");
        for (i, n) in names.iter().enumerate() {
            let sw = self.normality[i].map_or("n/a".to_string(), |(_, p)| format!("{p:.4}"));
            let _ = writeln!(s, "{n:<width$}  {:8.4}  {sw}", self.means[i]);
        }
        match &self.anova {
            Some(a) => {
                let _ = writeln!(
                    s,
                    "\nANOVA: F({}, {}) = {:.4}, p = {:.4e}",
                    a.df_between, a.df_within, a.f, a.p_value
                );
            }
            None => s.push_str("\nANOVA: undefined (no variance)\n"),
        }
        let _ = writeln!(
            s,
            "\nTukey HSD at alpha = {} (* overall, d per dataset, - none)",
            self.alpha
        );
        let _ = write!(s, "{:<width$}", "");
        for n in names {
            let _ = write!(s, " {n:>width$}");
        }
        s.push('\n');
        for (i, n) in names.iter().enumerate() {
            let _ = write!(s, "{n:<width$}");
            for j in 0..names.len() {
                let c = self.matrix.get(i, j).map_or(".", Significance::symbol);
                let _ = write!(s, " {c:>width$}");
            }
            s.push('\n');
        }
        s
    }
}

/// Tukey comparisons for every pair; constant samples fall back to comparing means.
fn pair_tests(samples: &AccuracySamples, scope: &str, alpha: f64) -> Result<Vec<PairTest>> {
    let k = samples.systems.len();
    let name = |i: usize| samples.systems[i].clone();
    match tukey_hsd(&samples.values, alpha) {
        Ok(t) => Ok(t
            .pairs
            .into_iter()
            .map(|p| PairTest {
                system_a: name(p.i),
                system_b: name(p.j),
                scope: scope.to_string(),
                mean_diff: p.mean_diff,
                q: p.q,
                p_value: p.p_value,
                significant: p.significant,
            })
            .collect()),
        Err(Error::NoWithinVariance) => {
            warn!("{scope}: subset accuracies have no spread; comparing means directly");
            let means = samples.means();
            let mut out = Vec::new();
            for i in 0..k {
                for j in i + 1..k {
                    let diff = means[i] - means[j];
                    let differs = diff != 0.0;
                    out.push(PairTest {
                        system_a: name(i),
                        system_b: name(j),
                        scope: scope.to_string(),
                        mean_diff: diff,
                        q: if differs { f64::INFINITY } else { 0.0 },
                        p_value: if differs { 0.0 } else { 1.0 },
                        significant: differs,
                    });
                }
            }
            Ok(out)
        }
        Err(e) => Err(e),
    }
}

fn validate(s: &AccuracySamples, what: &str) -> Result<()> {
    if s.systems.len() < 2 {
        return Err(Error::Degenerate(format!("{what}: at least 2 systems are needed")));
    }
    if s.values.len() != s.systems.len() || s.values.iter().any(|v| v.len() != s.n_subsets) {
        return Err(Error::Shape(format!("{what}: every system needs {} subset accuracies", s.n_subsets)));
    }
    Ok(())
}

pub fn significance_pipeline(
    overall: &AccuracySamples,
    per_dataset: &[(String, AccuracySamples)],
    alpha: f64,
) -> Result<SignificanceReport> {
    validate(overall, "overall")?;
    for (d, s) in per_dataset {
        validate(s, d)?;
        if s.systems != overall.systems {
            return Err(Error::Shape(format!("dataset {d} lists different systems")));
        }
    }
    let k = overall.systems.len();
    let normality: Vec<Option<(f64, f64)>> = overall
        .systems
        .iter()
        .zip(&overall.values)
        .map(|(name, v)| match shapiro_wilk(v) {
            Ok((w, p)) => {
                if p < alpha {
                    warn!("{name}: subset accuracies depart from normality (Shapiro-Wilk p = {p:.4})");
                }
                Ok(Some((w, p)))
            }
            Err(Error::Degenerate(msg)) => {
                warn!("{name}: normality not testable ({msg})");
                Ok(None)
            }
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let anova = match anova_oneway(&overall.values) {
        Ok(a) => Some(a),
        Err(Error::NoWithinVariance) => None,
        Err(e) => return Err(e),
    };

    let mut tests = pair_tests(overall, "overall", alpha)?;
    let mut cells = vec![vec![Some(Significance::NotSignificant); k]; k];
    for (i, row) in cells.iter_mut().enumerate() {
        row[i] = None;
    }
    let index = |n: &str| overall.systems.iter().position(|s| s == n).expect("known system");
    for t in &tests {
        if t.significant {
            let (i, j) = (index(&t.system_a), index(&t.system_b));
            cells[i][j] = Some(Significance::Overall);
            cells[j][i] = Some(Significance::Overall);
        }
    }
    let mut follow_up = Vec::new();
    for (d, s) in per_dataset {
        for t in pair_tests(s, d, alpha)? {
            let (i, j) = (index(&t.system_a), index(&t.system_b));
            if cells[i][j] == Some(Significance::Overall) {
                continue;
            }
            if t.significant {
                cells[i][j] = Some(Significance::PerDataset);
                cells[j][i] = Some(Significance::PerDataset);
            }
            follow_up.push(t);
        }
    }
    tests.extend(follow_up);
    Ok(SignificanceReport {
        alpha,
        means: overall.means(),
        normality,
        anova,
        tests,
        matrix: SignificanceMatrix {
            systems: overall.systems.clone(),
            cells,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{bootstrap_per_dataset, bootstrap_subsets};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Predictions correct with probability `acc`, independently per item.
    fn system(labels: &[u8], acc: f64, seed: u64) -> Vec<u8> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        labels.iter().map(|&l| if rng.gen_bool(acc) { l } else { 1 - l }).collect()
    }

    fn labels(n: usize) -> Vec<u8> {
        (0..n).map(|i| (i % 2) as u8).collect()
    }

    #[test]
    fn identical_systems_are_never_significant() {
        let l = labels(400);
        let p = system(&l, 0.8, 1);
        let sys = vec![("a".to_string(), p.clone()), ("b".to_string(), p)];
        let ds: Vec<String> = (0..400).map(|i| format!("d{}", i % 3)).collect();
        let overall = bootstrap_subsets(&sys, &l, 30, 400, 2).unwrap();
        let per = bootstrap_per_dataset(&sys, &l, &ds, 30, 400, 2).unwrap();
        let r = significance_pipeline(&overall, &per, 0.05).unwrap();
        assert_eq!(r.matrix.get(0, 1), Some(Significance::NotSignificant));
        assert_eq!(r.matrix.get(0, 0), None);
        // one overall row and three per-dataset rows
        assert_eq!(r.tests.len(), 4);
    }

    #[test]
    fn strong_versus_weak() {
        let l = labels(2000);
        let sys = vec![
            ("strong".to_string(), system(&l, 0.9, 3)),
            ("weak".to_string(), system(&l, 0.6, 4)),
        ];
        let overall = bootstrap_subsets(&sys, &l, 30, 1000, 7).unwrap();
        let r = significance_pipeline(&overall, &[], 0.05).unwrap();
        assert_eq!(r.matrix.get(0, 1), Some(Significance::Overall));
        assert_eq!(r.matrix.get(1, 0), Some(Significance::Overall));
        assert!(r.anova.unwrap().p_value < 1e-10);
        let csv = r.to_csv();
        assert!(csv.starts_with("system_a,system_b,scope,q,p,significant\nstrong,weak,overall,"));
        assert!(r.to_text().contains("strong"));
    }

    #[test]
    fn difference_only_in_one_dataset() {
        // equal on the whole set: b gains on dataset x what it loses on y
        let l = labels(3000);
        let ds: Vec<String> = (0..3000).map(|i| if i < 1500 { "x".into() } else { "y".into() }).collect();
        let a = system(&l, 0.8, 5);
        let mut b = system(&l, 0.8, 6);
        let bx = system(&l[..1500], 0.95, 7);
        let by = system(&l[1500..], 0.65, 8);
        b[..1500].copy_from_slice(&bx);
        b[1500..].copy_from_slice(&by);
        let sys = vec![("a".to_string(), a), ("b".to_string(), b)];
        let overall = bootstrap_subsets(&sys, &l, 30, 1000, 9).unwrap();
        let per = bootstrap_per_dataset(&sys, &l, &ds, 30, 1000, 9).unwrap();
        let r = significance_pipeline(&overall, &per, 0.05).unwrap();
        assert_eq!(r.matrix.get(0, 1), Some(Significance::PerDataset));
    }

    #[test]
    fn perfect_systems_compare_by_mean() {
        let l = labels(50);
        let sys = vec![
            ("a".to_string(), l.clone()),
            ("b".to_string(), l.clone()),
            ("c".to_string(), l.iter().map(|v| 1 - v).collect()),
        ];
        let overall = bootstrap_subsets(&sys, &l, 10, 50, 0).unwrap();
        let r = significance_pipeline(&overall, &[], 0.05).unwrap();
        // zero spread within, but the means differ
        assert_eq!(r.anova.unwrap().f, f64::INFINITY);
        assert_eq!(r.matrix.get(0, 1), Some(Significance::NotSignificant));
        assert_eq!(r.matrix.get(0, 2), Some(Significance::Overall));
        assert_eq!(r.normality, vec![None; 3]);
    }

    #[test]
    fn all_constant_and_equal() {
        let l = labels(20);
        let sys = vec![("a".to_string(), l.clone()), ("b".to_string(), l.clone())];
        let overall = bootstrap_subsets(&sys, &l, 5, 20, 0).unwrap();
        let r = significance_pipeline(&overall, &[], 0.05).unwrap();
        assert!(r.anova.is_none());
        assert_eq!(r.matrix.get(1, 0), Some(Significance::NotSignificant));
        assert!(r.to_text().contains("undefined"));
    }

    #[test]
    fn matrix_is_symmetric() {
        let l = labels(600);
        let sys: Vec<(String, Vec<u8>)> = [0.7, 0.72, 0.9, 0.5]
            .iter()
            .enumerate()
            .map(|(i, &a)| (format!("s{i}"), system(&l, a, i as u64)))
            .collect();
        let overall = bootstrap_subsets(&sys, &l, 30, 600, 1).unwrap();
        let r = significance_pipeline(&overall, &[], 0.05).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(r.matrix.get(i, j), r.matrix.get(j, i));
            }
        }
    }

    #[test]
    fn needs_two_systems() {
        let l = labels(10);
        let overall = bootstrap_subsets(&[("a".to_string(), l.clone())], &l, 5, 10, 0).unwrap();
        assert!(significance_pipeline(&overall, &[], 0.05).is_err());
    }
}
