//! DCASE-style manifests: one CSV per dataset with `itemid` and `hasbird`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ManifestEntry {
    pub item_id: String,
    pub dataset_id: String,
    pub has_bird: u8,
    pub path: PathBuf,
}

/// Parses manifest text. Audio for item `x` is expected at `audio_dir/x.wav`.
/// Extra columns (such as DCASE's `datasetid`) are ignored.
pub fn parse_manifest(csv_text: &str, dataset_id: &str, audio_dir: &Path) -> Result<Vec<ManifestEntry>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Manifest { line: 1, msg: e.to_string() })?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Manifest {
                line: 1,
                msg: format!("missing '{name}' column"),
            })
    };
    let (id_col, label_col) = (col("itemid")?, col("hasbird")?);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Manifest {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let item = record.get(id_col).unwrap_or("");
        if item.is_empty() {
            return Err(Error::Manifest {
                line,
                msg: "empty item id".into(),
            });
        }
        let has_bird = match record.get(label_col).unwrap_or("") {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Manifest {
                    line,
                    msg: format!("label '{other}' is not 0 or 1"),
                })
            }
        };
        if !seen.insert(item.to_string()) {
            return Err(Error::Manifest {
                line,
                msg: format!("duplicate item id '{item}'"),
            });
        }
        out.push(ManifestEntry {
            item_id: item.to_string(),
            dataset_id: dataset_id.to_string(),
            has_bird,
            path: audio_dir.join(format!("{item}.wav")),
        });
    }
    Ok(out)
}

pub fn load_manifest(path: &Path, dataset_id: &str, audio_dir: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text, dataset_id, audio_dir).map_err(|e| match e {
        Error::Manifest { line, msg } => Error::Manifest {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        e => e,
    })
}

pub fn count_positive(entries: &[ManifestEntry]) -> usize {
    entries.iter().filter(|e| e.has_bird == 1).count()
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["itemid", "hasbird"]).map_err(csv_err)?;
    for e in entries {
        w.write_record([e.item_id.as_str(), if e.has_bird == 1 { "1" } else { "0" }])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}
