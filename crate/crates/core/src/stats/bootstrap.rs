use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Fraction of positions where `predictions` and `labels` agree.
pub fn accuracy(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Degenerate("accuracy of an empty set".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Subset accuracies per system, all drawn on the same index sets.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracySamples {
    pub systems: Vec<String>,
    /// `values[s][b]`: accuracy of system `s` on subset `b`.
    pub values: Vec<Vec<f64>>,
    pub subset_size: usize,
    pub n_subsets: usize,
}

impl AccuracySamples {
    pub fn means(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect()
    }
}

/// Draws `n_subsets` index sets of `subset_size` with replacement and scores
/// every system on each of them.
pub fn bootstrap_subsets(
    systems: &[(String, Vec<u8>)],
    labels: &[u8],
    n_subsets: usize,
    subset_size: usize,
    seed: u64,
) -> Result<AccuracySamples> {
    bootstrap_stream(systems, labels, n_subsets, subset_size, seed, 0)
}

/// Same as [`bootstrap_subsets`] restricted to the items of each dataset.
/// The subset size is capped at the dataset size.
pub fn bootstrap_per_dataset(
    systems: &[(String, Vec<u8>)],
    labels: &[u8],
    dataset_ids: &[String],
    n_subsets: usize,
    subset_size: usize,
    seed: u64,
) -> Result<Vec<(String, AccuracySamples)>> {
    if dataset_ids.len() != labels.len() {
        return Err(Error::Shape(format!("{} dataset ids for {} labels", dataset_ids.len(), labels.len())));
    }
    let mut names: Vec<&String> = dataset_ids.iter().collect();
    names.sort();
    names.dedup();
    names
        .into_iter()
        .enumerate()
        .map(|(d, name)| {
            let idx: Vec<usize> = (0..labels.len()).filter(|&i| &dataset_ids[i] == name).collect();
            let pick = |v: &[u8]| idx.iter().map(|&i| v[i]).collect::<Vec<u8>>();
            let sub: Vec<(String, Vec<u8>)> = systems
                .iter()
                .map(|(n, p)| Ok((n.clone(), pick(check_len(p, labels)?))))
                .collect::<Result<_>>()?;
            let samples = bootstrap_stream(&sub, &pick(labels), n_subsets, subset_size.min(idx.len()), seed, d as u64 + 1)?;
            Ok((name.clone(), samples))
        })
        .collect()
}

fn check_len<'a>(p: &'a [u8], labels: &[u8]) -> Result<&'a [u8]> {
    if p.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", p.len(), labels.len())));
    }
    Ok(p)
}

fn bootstrap_stream(
    systems: &[(String, Vec<u8>)],
    labels: &[u8],
    n_subsets: usize,
    subset_size: usize,
    seed: u64,
    stream: u64,
) -> Result<AccuracySamples> {
    if n_subsets < 2 || subset_size < 1 {
        return Err(Error::Param(format!(
            "bootstrap needs at least 2 subsets of at least 1 item, got {n_subsets} of {subset_size}"
        )));
    }
    if labels.is_empty() {
        return Err(Error::Degenerate("no test items to resample".into()));
    }
    for (_, p) in systems {
        check_len(p, labels)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut values = vec![Vec::with_capacity(n_subsets); systems.len()];
    let mut idx = vec![0usize; subset_size];
    for _ in 0..n_subsets {
        idx.iter_mut().for_each(|i| *i = rng.gen_range(0..labels.len()));
        for (v, (_, p)) in values.iter_mut().zip(systems) {
            let hits = idx.iter().filter(|&&i| p[i] == labels[i]).count();
            v.push(hits as f64 / subset_size as f64);
        }
    }
    Ok(AccuracySamples {
        systems: systems.iter().map(|(n, _)| n.clone()).collect(),
        values,
        subset_size,
        n_subsets,
    })
}
