//! Stratified train/validation/test assignment.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::csv_err;
use super::ManifestEntry;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split '{other}'"))),
        }
    }
}

/// `(dataset_id, item_id) → split`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitAssignment {
    pub map: BTreeMap<(String, String), Split>,
}

impl SplitAssignment {
    pub fn get(&self, e: &ManifestEntry) -> Option<Split> {
        self.map.get(&(e.dataset_id.clone(), e.item_id.clone())).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn count(&self, split: Split) -> usize {
        self.map.values().filter(|&&s| s == split).count()
    }

    /// Entries in `split`, in manifest order.
    pub fn select<'a>(&self, entries: &'a [ManifestEntry], split: Split) -> Vec<&'a ManifestEntry> {
        entries.iter().filter(|e| self.get(e) == Some(split)).collect()
    }

    /// CSV with header `itemid,dataset,split`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["itemid", "dataset", "split"]).map_err(csv_err)?;
        for ((dataset, item), split) in &self.map {
            w.write_record([item.as_str(), dataset.as_str(), split.name()]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let mut map = BTreeMap::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let field = |k: usize| {
                rec.get(k).ok_or_else(|| Error::Manifest {
                    line: i + 2,
                    msg: "split file rows need itemid,dataset,split".into(),
                })
            };
            let split = field(2)?.parse()?;
            map.insert((field(1)?.to_string(), field(0)?.to_string()), split);
        }
        Ok(Self { map })
    }
}

/// FNV-1a, stable across platforms, to give each cell its own shuffle stream.
fn cell_stream(dataset: &str, label: u8) -> u64 {
    dataset
        .bytes()
        .chain([0xff, label])
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3))
}

/// Within each `(dataset, label)` cell: sort by item id, shuffle with the
/// seed, take `floor(r_val·n)` for validation and `floor(r_test·n)` for test;
/// the rest goes to training.
pub fn stratified_split(entries: &[ManifestEntry], ratios: (f64, f64, f64), seed: u64) -> Result<SplitAssignment> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !(0.0..=1.0).contains(r)) || (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be in [0, 1] and sum to 1")));
    }
    let mut cells: BTreeMap<(&str, u8), Vec<&str>> = BTreeMap::new();
    for e in entries {
        cells.entry((&e.dataset_id, e.has_bird)).or_default().push(&e.item_id);
    }
    for dataset in entries.iter().map(|e| e.dataset_id.as_str()).collect::<std::collections::BTreeSet<_>>() {
        for label in [0, 1] {
            if !cells.contains_key(&(dataset, label)) {
                warn!("dataset {dataset} has no items with label {label}");
            }
        }
    }
    let mut map = BTreeMap::new();
    for ((dataset, label), mut items) in cells {
        items.sort_unstable();
        let before = items.len();
        items.dedup();
        if items.len() != before {
            return Err(Error::Config(format!("duplicate item ids in dataset {dataset}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(cell_stream(dataset, label));
        items.shuffle(&mut rng);
        let n = items.len() as f64;
        let n_val = (va * n + 1e-9).floor() as usize;
        let n_test = (te * n + 1e-9).floor() as usize;
        for (i, item) in items.into_iter().enumerate() {
            let split = if i < n_val {
                Split::Val
            } else if i < n_val + n_test {
                Split::Test
            } else {
                Split::Train
            };
            map.insert((dataset.to_string(), item.to_string()), split);
        }
    }
    Ok(SplitAssignment { map })
}
