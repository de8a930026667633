//! Plain-text run configuration.
//!
//! ```text
//! [run]
//! seed = 0
//! output_dir = runs
//!
//! [frontend]
//! kind = pcen
//!
//! [dataset.BirdVox-DCASE-20k]
//! manifest = BirdVox-DCASE-20k.csv
//! audio = wav/BirdVox-DCASE-20k
//! ```
//!
//! Relative dataset and split paths are resolved against the data root.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::LoadOptions;
use crate::frontends::{Frontend, FrontendConfig, FrontendKind};
use crate::learning::{Activation, ClassifierConfig, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSource {
    pub id: String,
    pub manifest: PathBuf,
    pub audio_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data_root: Option<PathBuf>,
    pub jobs: usize,
    pub kind: FrontendKind,
    pub frontend: FrontendConfig,
    pub audio: LoadOptions,
    pub target_dbfs: f64,
    pub classifier: ClassifierConfig,
    pub train: TrainConfig,
    pub datasets: Vec<DatasetSource>,
    pub split_file: Option<PathBuf>,
    pub split_ratios: (f64, f64, f64),
    pub split_seed: u64,
    pub n_subsets: usize,
    pub subset_size: usize,
    pub alpha: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            data_root: None,
            jobs: 1,
            kind: FrontendKind::Logmel,
            frontend: FrontendConfig::default(),
            audio: LoadOptions::default(),
            target_dbfs: -2.0,
            classifier: ClassifierConfig::default(),
            train: TrainConfig::default(),
            datasets: Vec::new(),
            split_file: None,
            split_ratios: (0.7, 0.15, 0.15),
            split_seed: 0,
            n_subsets: 30,
            subset_size: 1000,
            alpha: 0.05,
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse()
        .map_err(|e| Error::Config(format!("{key} = '{v}': {e}")))
}

fn opt<T: FromStr>(key: &str, v: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    if v.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key} = '{v}': expected true or false"))),
    }
}

fn show<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map_or("none".into(), ToString::to_string)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(inner) = line.strip_prefix('[') {
                section = inner
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {}: unterminated section", n + 1)))?
                    .trim()
                    .to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            self.set(&key, v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("configuration error: "))))?;
        }
        Ok(())
    }

    /// Applies a `section.key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let f = &mut self.frontend;
        let t = &mut self.train;
        match key {
            "run.seed" => self.seed = num(key, v)?,
            "run.output_dir" => self.output_dir = PathBuf::from(v),
            "run.data_root" => self.data_root = (!v.eq_ignore_ascii_case("none")).then(|| PathBuf::from(v)),
            "run.jobs" => self.jobs = num(key, v)?,
            "frontend.kind" => self.kind = v.parse()?,
            "frontend.win_s" => f.win_s = num(key, v)?,
            "frontend.overlap" => f.overlap = num(key, v)?,
            "frontend.n_mels" => f.n_mels = num(key, v)?,
            "frontend.f_min" => f.f_min_hz = num(key, v)?,
            "frontend.f_max" => f.f_max_hz = num(key, v)?,
            "frontend.log_eps" => f.log_eps = num(key, v)?,
            "frontend.n_filters" => f.n_filters = num(key, v)?,
            "frontend.kernel_s" => f.kernel_s = num(key, v)?,
            "frontend.strf_filters" => f.strf_filters = num(key, v)?,
            "frontend.strf_half_t" => f.strf_half_t = num(key, v)?,
            "frontend.strf_half_f" => f.strf_half_f = num(key, v)?,
            "frontend.leaf_lowpass_frac" => f.leaf_lowpass_frac = num(key, v)?,
            "pcen.alpha" => f.pcen.alpha = num(key, v)?,
            "pcen.delta" => f.pcen.delta = num(key, v)?,
            "pcen.r" => f.pcen.r = num(key, v)?,
            "pcen.eps" => f.pcen.eps = num(key, v)?,
            "pcen.s" => f.pcen.s = num(key, v)?,
            "pcen.learn_s" => f.pcen.learn_s = flag(key, v)?,
            "audio.sample_rate" => self.audio.sample_rate_hz = num(key, v)?,
            "audio.clip_s" => self.audio.clip_s = opt(key, v)?,
            "audio.target_dbfs" => self.target_dbfs = num(key, v)?,
            "classifier.channels" => {
                self.classifier.channels = v
                    .split(',')
                    .map(|c| num(key, c.trim()))
                    .collect::<Result<_>>()?
            }
            "classifier.kernel" => self.classifier.kernel = num(key, v)?,
            "classifier.pool" => self.classifier.pool = flag(key, v)?,
            "classifier.activation" => {
                self.classifier.activation = match v.to_ascii_lowercase().as_str() {
                    "relu" => Activation::Relu,
                    "identity" => Activation::Identity,
                    _ => return Err(Error::Config(format!("{key} = '{v}': expected relu or identity"))),
                }
            }
            "train.epochs" => t.epochs = num(key, v)?,
            "train.batch_size" => t.batch_size = num(key, v)?,
            "train.lr" => t.learning_rate = num(key, v)?,
            "train.patience" => t.patience = num(key, v)?,
            "train.factor" => t.factor = num(key, v)?,
            "train.min_delta" => t.min_delta = num(key, v)?,
            "train.lr_min" => t.lr_min = num(key, v)?,
            "train.early_stop" => t.early_stop = opt(key, v)?,
            "train.stop_at_accuracy" => t.stop_at_accuracy = opt(key, v)?,
            "split.file" => self.split_file = (!v.eq_ignore_ascii_case("none")).then(|| PathBuf::from(v)),
            "split.train" => self.split_ratios.0 = num(key, v)?,
            "split.val" => self.split_ratios.1 = num(key, v)?,
            "split.test" => self.split_ratios.2 = num(key, v)?,
            "split.seed" => self.split_seed = num(key, v)?,
            "compare.n_subsets" => self.n_subsets = num(key, v)?,
            "compare.subset_size" => self.subset_size = num(key, v)?,
            "compare.alpha" => self.alpha = num(key, v)?,
            _ => return self.set_dataset(key, v),
        }
        Ok(())
    }

    fn set_dataset(&mut self, key: &str, v: &str) -> Result<()> {
        let unknown = || Error::Config(format!("unknown key '{key}'"));
        let rest = key.strip_prefix("dataset.").ok_or_else(unknown)?;
        let (id, field) = rest.rsplit_once('.').ok_or_else(unknown)?;
        if id.is_empty() {
            return Err(unknown());
        }
        let pos = match self.datasets.iter().position(|d| d.id == id) {
            Some(p) => p,
            None => {
                self.datasets.push(DatasetSource {
                    id: id.to_string(),
                    manifest: PathBuf::new(),
                    audio_dir: PathBuf::new(),
                });
                self.datasets.len() - 1
            }
        };
        let d = &mut self.datasets[pos];
        match field {
            "manifest" => d.manifest = PathBuf::from(v),
            "audio" => d.audio_dir = PathBuf::from(v),
            _ => return Err(unknown()),
        }
        Ok(())
    }

    fn sections(&self) -> Vec<(String, Vec<(&'static str, String)>)> {
        let f = &self.frontend;
        let t = &self.train;
        let mut out = vec![
            (
                "run".to_string(),
                vec![
                    ("seed", self.seed.to_string()),
                    ("output_dir", self.output_dir.display().to_string()),
                    ("data_root", show(&self.data_root.as_ref().map(|p| p.display()))),
                    ("jobs", self.jobs.to_string()),
                ],
            ),
            (
                "frontend".into(),
                vec![
                    ("kind", self.kind.to_string()),
                    ("win_s", f.win_s.to_string()),
                    ("overlap", f.overlap.to_string()),
                    ("n_mels", f.n_mels.to_string()),
                    ("f_min", f.f_min_hz.to_string()),
                    ("f_max", f.f_max_hz.to_string()),
                    ("log_eps", f.log_eps.to_string()),
                    ("n_filters", f.n_filters.to_string()),
                    ("kernel_s", f.kernel_s.to_string()),
                    ("strf_filters", f.strf_filters.to_string()),
                    ("strf_half_t", f.strf_half_t.to_string()),
                    ("strf_half_f", f.strf_half_f.to_string()),
                    ("leaf_lowpass_frac", f.leaf_lowpass_frac.to_string()),
                ],
            ),
            (
                "pcen".into(),
                vec![
                    ("alpha", f.pcen.alpha.to_string()),
                    ("delta", f.pcen.delta.to_string()),
                    ("r", f.pcen.r.to_string()),
                    ("eps", f.pcen.eps.to_string()),
                    ("s", f.pcen.s.to_string()),
                    ("learn_s", f.pcen.learn_s.to_string()),
                ],
            ),
            (
                "audio".into(),
                vec![
                    ("sample_rate", self.audio.sample_rate_hz.to_string()),
                    ("clip_s", show(&self.audio.clip_s)),
                    ("target_dbfs", self.target_dbfs.to_string()),
                ],
            ),
            (
                "classifier".into(),
                vec![
                    (
                        "channels",
                        self.classifier.channels.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
                    ),
                    ("kernel", self.classifier.kernel.to_string()),
                    ("pool", self.classifier.pool.to_string()),
                    (
                        "activation",
                        match self.classifier.activation {
                            Activation::Relu => "relu",
                            Activation::Identity => "identity",
                        }
                        .into(),
                    ),
                ],
            ),
            (
                "train".into(),
                vec![
                    ("epochs", t.epochs.to_string()),
                    ("batch_size", t.batch_size.to_string()),
                    ("lr", t.learning_rate.to_string()),
                    ("patience", t.patience.to_string()),
                    ("factor", t.factor.to_string()),
                    ("min_delta", t.min_delta.to_string()),
                    ("lr_min", t.lr_min.to_string()),
                    ("early_stop", show(&t.early_stop)),
                    ("stop_at_accuracy", show(&t.stop_at_accuracy)),
                ],
            ),
            (
                "split".into(),
                vec![
                    ("file", show(&self.split_file.as_ref().map(|p| p.display()))),
                    ("train", self.split_ratios.0.to_string()),
                    ("val", self.split_ratios.1.to_string()),
                    ("test", self.split_ratios.2.to_string()),
                    ("seed", self.split_seed.to_string()),
                ],
            ),
            (
                "compare".into(),
                vec![
                    ("n_subsets", self.n_subsets.to_string()),
                    ("subset_size", self.subset_size.to_string()),
                    ("alpha", self.alpha.to_string()),
                ],
            ),
        ];
        for d in &self.datasets {
            out.push((
                format!("dataset.{}", d.id),
                vec![
                    ("manifest", d.manifest.display().to_string()),
                    ("audio", d.audio_dir.display().to_string()),
                ],
            ));
        }
        out
    }

    /// Fully resolved configuration; parsing it gives back `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, (name, keys)) in self.sections().into_iter().enumerate() {
            if i > 0 {
                s.push('\n');
            }
            s.push_str(&format!("[{name}]\n"));
            for (k, v) in keys {
                s.push_str(&format!("{k} = {v}\n"));
            }
        }
        s
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.data_root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn split_path(&self) -> PathBuf {
        match &self.split_file {
            Some(p) => self.resolve(p),
            None => self.output_dir.join("split.csv"),
        }
    }

    pub fn build_frontend(&self) -> Result<Frontend> {
        Frontend::new(self.kind, &self.frontend, self.audio.sample_rate_hz, self.seed)
    }

    /// Checks every setting that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        self.audio.validate()?;
        if !self.target_dbfs.is_finite() || self.target_dbfs > 0.0 {
            return Err(Error::Config(format!("target level {} dBFS must be ≤ 0", self.target_dbfs)));
        }
        self.build_frontend().map_err(|e| Error::Config(format!("frontend: {e}")))?;
        let clf = ClassifierConfig {
            input_channels: 1,
            ..self.classifier.clone()
        };
        clf.validate()?;
        self.train.validate()?;
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        let (a, b, c) = self.split_ratios;
        if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios {a}, {b}, {c} must lie in [0, 1] and sum to 1")));
        }
        if self.n_subsets < 2 || self.subset_size < 1 {
            return Err(Error::Config("comparison needs n_subsets ≥ 2 and subset_size ≥ 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        for d in &self.datasets {
            if d.manifest.as_os_str().is_empty() || d.audio_dir.as_os_str().is_empty() {
                return Err(Error::Config(format!("dataset {} needs both manifest and audio", d.id)));
            }
        }
        Ok(())
    }

    /// Also requires at least one dataset.
    pub fn validate_with_data(&self) -> Result<()> {
        self.validate()?;
        if self.datasets.is_empty() {
            return Err(Error::Config("no [dataset.<id>] sections configured".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.kind = FrontendKind::Leaf;
        cfg.train.early_stop = Some(4);
        cfg.frontend.f_min_hz = 123.456789;
        cfg.data_root = Some("/data".into());
        cfg.set("dataset.ff1010bird.manifest", "ff.csv").unwrap();
        cfg.set("dataset.ff1010bird.audio", "wav/ff").unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn sections_comments_and_overrides() {
        let text = "# run\n[frontend]\nkind = PCEN  # learnable\n\n[train]\nlr = 0.01\nstop_at_accuracy = 0.95\n";
        let mut cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.kind, FrontendKind::Pcen);
        assert_eq!(cfg.train.learning_rate, 0.01);
        assert_eq!(cfg.train.stop_at_accuracy, Some(0.95));
        cfg.apply_override("train.lr=0").unwrap();
        assert_eq!(cfg.train.learning_rate, 0.0);
        cfg.apply_override("classifier.channels = 4,8").unwrap();
        assert_eq!(cfg.classifier.channels, vec![4, 8]);
    }

    #[test]
    fn errors_name_the_line_or_key() {
        let e = RunConfig::parse("[train]\nepochs = many\n").unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("train.epochs"), "{e}");
        assert!(RunConfig::parse("[bogus]\nx = 1\n").unwrap_err().to_string().contains("bogus.x"));
        assert!(RunConfig::parse("[frontend]\nkind = wavelet\n").is_err());
        assert!(RunConfig::default().apply_override("train.lr").is_err());
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        assert!(RunConfig::default().validate_with_data().is_err());
        let mut cfg = RunConfig::default();
        cfg.split_ratios = (0.8, 0.15, 0.15);
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.frontend.f_max_hz = 30000.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.set("dataset.x.manifest", "m.csv").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn relative_paths_use_the_data_root() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.resolve(Path::new("a.csv")), Path::new("a.csv"));
        cfg.data_root = Some("/d".into());
        assert_eq!(cfg.resolve(Path::new("a.csv")), Path::new("/d/a.csv"));
        assert_eq!(cfg.resolve(Path::new("/abs.csv")), Path::new("/abs.csv"));
    }
}
