use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Cli, Command, Common, FeatureFile, Failure, RunConfig, DATA_ROOT_ENV};
use crate::data::{
    load_manifest, load_wav, normalize_dbfs, stratified_split, synth_dataset, write_manifest, write_wav,
    LoadOptions, ManifestEntry, Split, SplitAssignment, SynthConfig,
};
use crate::dsp::Waveform;
use crate::frontends::{FeatureMap, FrontendKind};
use crate::learning::{
    check_classifier, check_frontend, evaluate, fit, Checkpoint, Classifier, ClassifierConfig, EpochLog, Model,
};
use crate::stats::{accuracy, bootstrap_per_dataset, bootstrap_subsets, significance_pipeline};
use crate::{Error, Result};

type Outcome = std::result::Result<(), Failure>;

fn runtime(msg: impl Into<String>) -> Failure {
    Failure::Runtime(msg.into())
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| runtime(format!("{}: {e}", path.display()))
}

/// Config file, then `--set` overrides, then flags; the environment only
/// supplies a data root when nothing else does.
pub fn resolve_config(common: &Common) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(root) = &common.data_root {
        cfg.data_root = Some(root.clone());
    } else if cfg.data_root.is_none() {
        cfg.data_root = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from);
    }
    if let Some(j) = common.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Outcome {
    let cfg = resolve_config(&cli.common)?;
    cfg.validate()?;
    if cli.common.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    match &cli.command {
        Command::Synth {
            out,
            n_clips,
            snr_min,
            snr_max,
            clip_s,
            tone_prob,
            seed,
        } => {
            let sc = SynthConfig {
                n_clips: *n_clips,
                snr_db: (*snr_min, *snr_max),
                clip_s: *clip_s,
                sample_rate_hz: cfg.audio.sample_rate_hz,
                tone_prob: *tone_prob,
                target_dbfs: cfg.target_dbfs,
                seed: seed.unwrap_or(cfg.seed),
                ..SynthConfig::default()
            };
            cmd_synth(&sc, out)
        }
        Command::Split { force } => cmd_split(&cfg, *force),
        Command::Extract { force, checkpoint, out } => cmd_extract(&cfg, *force, checkpoint.as_deref(), out.as_deref()),
        Command::Train => cmd_train(&cfg),
        Command::Eval { checkpoint, split } => {
            let split: Split = split.parse().map_err(|e: Error| Failure::Validation(e.to_string()))?;
            cmd_eval(&cfg, checkpoint.as_deref(), split)
        }
        Command::Compare { systems, out } => cmd_compare(&cfg, systems, out.as_deref()),
        Command::Gradcheck {
            kind,
            seed,
            duration,
            step,
            tolerance,
        } => cmd_gradcheck(&cfg, kind, *seed, *duration, *step, *tolerance),
    }
}

/// Order-preserving parallel map over `jobs` scoped threads.
fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every item is processed"))
        .collect()
}

fn load_entries(cfg: &RunConfig) -> Result<Vec<ManifestEntry>> {
    let mut all = Vec::new();
    for d in &cfg.datasets {
        let entries = load_manifest(&cfg.resolve(&d.manifest), &d.id, &cfg.resolve(&d.audio_dir))?;
        info!(
            "{}: {} clips, {} with birds",
            d.id,
            entries.len(),
            entries.iter().filter(|e| e.has_bird == 1).count()
        );
        all.extend(entries);
    }
    Ok(all)
}

/// Reads the split file if present, otherwise creates and writes it.
fn ensure_split(cfg: &RunConfig, entries: &[ManifestEntry]) -> Result<SplitAssignment> {
    let path = cfg.split_path();
    if path.exists() {
        let split = SplitAssignment::read_csv(&path)?;
        if let Some(e) = entries.iter().find(|e| split.get(e).is_none()) {
            return Err(Error::Config(format!(
                "{} has no entry for {}/{}; rerun `avfe split --force`",
                path.display(),
                e.dataset_id,
                e.item_id
            )));
        }
        info!("using split file {}", path.display());
        return Ok(split);
    }
    let split = stratified_split(entries, cfg.split_ratios, cfg.split_seed)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    split.write_csv(&path)?;
    info!("wrote split file {}", path.display());
    Ok(split)
}

fn load_clip(path: &Path, opts: &LoadOptions, target_dbfs: f64) -> Result<Waveform> {
    let w = load_wav(path, opts)?;
    let (w, silent) = normalize_dbfs(&w, target_dbfs);
    if silent {
        warn!("{}: silent clip left unnormalized", path.display());
    }
    Ok(w)
}

fn load_clips(entries: &[&ManifestEntry], opts: &LoadOptions, target_dbfs: f64, jobs: usize) -> Result<Vec<Waveform>> {
    par_map(entries, jobs, |e| load_clip(&e.path, opts, target_dbfs))
        .into_iter()
        .collect()
}

fn kind_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join(cfg.kind.name())
}

pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<(RunConfig, Model)> {
    let cfg = RunConfig::parse(&ck.config)?;
    let mut model = Model::new(cfg.build_frontend()?, cfg.classifier.clone(), cfg.seed)?;
    model.import(&ck.tensors)?;
    Ok((cfg, model))
}

fn cmd_synth(sc: &SynthConfig, out: &Path) -> Outcome {
    sc.validate()?;
    let clips = synth_dataset(sc)?;
    fs::create_dir_all(out).map_err(io_at(out))?;
    let mut info_csv = String::from("itemid,dataset,hasbird,snr_db,tones\n");
    let mut by_dataset: BTreeMap<&str, Vec<ManifestEntry>> = BTreeMap::new();
    for c in &clips {
        let dir = out.join(&c.entry.dataset_id);
        fs::create_dir_all(&dir).map_err(io_at(&dir))?;
        write_wav(&dir.join(format!("{}.wav", c.entry.item_id)), &c.waveform)?;
        let _ = writeln!(
            info_csv,
            "{},{},{},{},{}",
            c.entry.item_id,
            c.entry.dataset_id,
            c.entry.has_bird,
            c.snr_db.map_or("none".into(), |v| v.to_string()),
            c.has_tones
        );
        by_dataset.entry(&c.entry.dataset_id).or_default().push(c.entry.clone());
    }
    let info_path = out.join("synth_info.csv");
    fs::write(&info_path, info_csv).map_err(io_at(&info_path))?;
    let root = fs::canonicalize(out).map_err(io_at(out))?;
    let mut snippet = format!("[run]\ndata_root = {}\n\n[audio]\nclip_s = {}\n", root.display(), sc.clip_s);
    for (id, entries) in &by_dataset {
        write_manifest(&out.join(format!("{id}.csv")), entries)?;
        let _ = write!(snippet, "\n[dataset.{id}]\nmanifest = {id}.csv\naudio = {id}\n");
    }
    let cfg_path = out.join("synth.cfg");
    fs::write(&cfg_path, snippet).map_err(io_at(&cfg_path))?;
    println!(
        "wrote {} clips ({} with chirps) to {}; config in {}",
        clips.len(),
        clips.iter().filter(|c| c.entry.has_bird == 1).count(),
        out.display(),
        cfg_path.display()
    );
    Ok(())
}

fn cmd_split(cfg: &RunConfig, force: bool) -> Outcome {
    cfg.validate_with_data()?;
    let entries = load_entries(cfg)?;
    let path = cfg.split_path();
    if path.exists() && !force {
        return Err(Failure::Validation(format!(
            "{} exists; pass --force to replace it",
            path.display()
        )));
    }
    if force && path.exists() {
        fs::remove_file(&path).map_err(io_at(&path))?;
    }
    let split = ensure_split(cfg, &entries)?;
    println!("{:<24} {:>5} {:>7} {:>7} {:>7}", "dataset", "label", "train", "val", "test");
    let mut cells: BTreeMap<(&str, u8), [usize; 3]> = BTreeMap::new();
    for e in &entries {
        let s = split.get(e).expect("every entry is assigned");
        cells.entry((&e.dataset_id, e.has_bird)).or_default()[s as usize] += 1;
    }
    for ((d, l), c) in cells {
        println!("{d:<24} {l:>5} {:>7} {:>7} {:>7}", c[0], c[1], c[2]);
    }
    println!("{} items assigned; split file {}", split.len(), path.display());
    Ok(())
}

fn cmd_extract(cfg: &RunConfig, force: bool, checkpoint: Option<&Path>, out: Option<&Path>) -> Outcome {
    cfg.validate_with_data()?;
    let (frontend, kind, audio) = match checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
            let (ck_cfg, model) = model_from_checkpoint(&ck)?;
            (model.frontend, ck_cfg.kind, ck_cfg.audio)
        }
        None => (cfg.build_frontend()?, cfg.kind, cfg.audio.clone()),
    };
    let entries = load_entries(cfg)?;
    let root = out.map_or_else(|| cfg.output_dir.join("features").join(kind.name()), Path::to_path_buf);
    let written = AtomicUsize::new(0);
    let skipped = AtomicUsize::new(0);
    let results = par_map(&entries, cfg.jobs, |e| -> Result<()> {
        let dir = root.join(&e.dataset_id);
        let path = dir.join(format!("{}.avfe", e.item_id));
        if path.exists() && !force {
            skipped.fetch_add(1, Ordering::Relaxed);
            return Ok(());
        }
        let w = load_clip(&e.path, &audio, cfg.target_dbfs)?;
        let map = frontend.forward(&w)?;
        fs::create_dir_all(&dir)?;
        FeatureFile::from_map(kind, &map).save(&path)?;
        written.fetch_add(1, Ordering::Relaxed);
        Ok(())
    });
    let mut failed = 0;
    for (e, r) in entries.iter().zip(results) {
        if let Err(err) = r {
            failed += 1;
            warn!("{}/{}: {err}", e.dataset_id, e.item_id);
        }
    }
    println!(
        "{kind}: wrote {}, skipped {} existing, {failed} failed, in {}",
        written.into_inner(),
        skipped.into_inner(),
        root.display()
    );
    if failed > 0 {
        return Err(runtime(format!("{failed} of {} clips failed", entries.len())));
    }
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Outcome {
    cfg.validate_with_data()?;
    let entries = load_entries(cfg)?;
    let split = ensure_split(cfg, &entries)?;
    let pick = |s: Split| -> Result<(Vec<Waveform>, Vec<u8>)> {
        let items = split.select(&entries, s);
        let clips = load_clips(&items, &cfg.audio, cfg.target_dbfs, cfg.jobs)?;
        Ok((clips, items.iter().map(|e| e.has_bird).collect()))
    };
    let (train, train_labels) = pick(Split::Train)?;
    let (val, val_labels) = pick(Split::Val)?;
    info!("{} training and {} validation clips", train.len(), val.len());

    let dir = kind_dir(cfg);
    fs::create_dir_all(&dir).map_err(io_at(&dir))?;
    let log_path = dir.join("train_log.csv");
    let mut log = fs::File::create(&log_path).map_err(io_at(&log_path))?;
    writeln!(log, "{}", EpochLog::CSV_HEADER).map_err(io_at(&log_path))?;
    let mut write_err = None;
    let mut model = Model::new(cfg.build_frontend()?, cfg.classifier.clone(), cfg.seed)?;
    let outcome = fit(&mut model, (&train, &train_labels), (&val, &val_labels), &cfg.train_config(), |e| {
        if let Err(err) = writeln!(log, "{}", e.csv_row()) {
            write_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = write_err {
        return Err(io_at(&log_path)(e));
    }
    let ck = Checkpoint {
        config: cfg.to_text(),
        tensors: outcome.best.export(),
        optimizer: outcome.optimizer,
    };
    let ck_path = dir.join("model.avck");
    ck.save(&ck_path)?;
    let best = &outcome.history[outcome.best_epoch - 1];
    println!(
        "{}: best epoch {} of {}, validation accuracy {:.4}, loss {:.4}; checkpoint {}",
        cfg.kind,
        outcome.best_epoch,
        outcome.history.len(),
        best.val_accuracy,
        best.val_loss,
        ck_path.display()
    );
    Ok(())
}

/// Accuracy per dataset id, in id order.
fn per_dataset_accuracy(items: &[&ManifestEntry], predictions: &[u8]) -> Result<Vec<(String, f64)>> {
    let mut groups: BTreeMap<&str, (Vec<u8>, Vec<u8>)> = BTreeMap::new();
    for (e, &p) in items.iter().zip(predictions) {
        let g = groups.entry(&e.dataset_id).or_default();
        g.0.push(p);
        g.1.push(e.has_bird);
    }
    groups
        .into_iter()
        .map(|(d, (p, l))| Ok((d.to_string(), accuracy(&p, &l)?)))
        .collect()
}

fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>, split_name: Split) -> Outcome {
    cfg.validate_with_data()?;
    let path = checkpoint.map_or_else(|| kind_dir(cfg).join("model.avck"), Path::to_path_buf);
    let ck = Checkpoint::load(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let (ck_cfg, model) = model_from_checkpoint(&ck)?;
    let entries = load_entries(cfg)?;
    let split = ensure_split(cfg, &entries)?;
    let items = split.select(&entries, split_name);
    if items.is_empty() {
        return Err(runtime(format!("the {split_name} split is empty")));
    }
    let clips = load_clips(&items, &ck_cfg.audio, ck_cfg.target_dbfs, cfg.jobs)?;
    let labels: Vec<u8> = items.iter().map(|e| e.has_bird).collect();
    let ev = evaluate(&model, &clips, &labels, None)?;
    let preds = ev.predictions();
    let mut csv = String::from("itemid,dataset,label,logit,prediction\n");
    for ((e, logit), p) in items.iter().zip(&ev.logits).zip(&preds) {
        let _ = writeln!(csv, "{},{},{},{:.17e},{}", e.item_id, e.dataset_id, e.has_bird, logit, p);
    }
    let out = path.with_file_name(format!("predictions_{split_name}.csv"));
    fs::write(&out, csv).map_err(io_at(&out))?;
    println!("{} on {split_name}: accuracy {:.4}, loss {:.4} ({} clips)", ck_cfg.kind, ev.accuracy, ev.loss, items.len());
    for (d, a) in per_dataset_accuracy(&items, &preds)? {
        println!("  {d:<24} {a:.4}");
    }
    println!("predictions in {}", out.display());
    Ok(())
}

fn cmd_compare(cfg: &RunConfig, specs: &[String], out: Option<&Path>) -> Outcome {
    cfg.validate_with_data()?;
    let mut systems = Vec::new();
    for s in specs {
        let (name, path) = s
            .split_once('=')
            .ok_or_else(|| Failure::Validation(format!("system '{s}' is not NAME=CHECKPOINT")))?;
        if name.is_empty() || name.contains(',') {
            return Err(Failure::Validation(format!("system name '{name}' is empty or has a comma")));
        }
        if systems.iter().any(|(n, _): &(String, PathBuf)| n == name) {
            return Err(Failure::Validation(format!("system '{name}' given twice")));
        }
        systems.push((name.to_string(), PathBuf::from(path)));
    }
    if systems.len() < 2 {
        return Err(Failure::Validation("compare needs at least two systems".into()));
    }
    let mut models = Vec::new();
    for (name, path) in &systems {
        if !path.exists() {
            return Err(runtime(format!("system '{name}': checkpoint {} not found", path.display())));
        }
        let ck = Checkpoint::load(path).map_err(|e| runtime(format!("system '{name}': {e}")))?;
        models.push(model_from_checkpoint(&ck).map_err(|e| runtime(format!("system '{name}': {e}")))?);
    }

    let entries = load_entries(cfg)?;
    let split = ensure_split(cfg, &entries)?;
    let items = split.select(&entries, Split::Test);
    if items.is_empty() {
        return Err(runtime("the test split is empty"));
    }
    let labels: Vec<u8> = items.iter().map(|e| e.has_bird).collect();
    let dataset_ids: Vec<String> = items.iter().map(|e| e.dataset_id.clone()).collect();

    // systems trained with the same audio settings share decoded clips
    let mut audio_cache: Vec<((u32, Option<f64>, f64), Vec<Waveform>)> = Vec::new();
    let mut predictions = Vec::new();
    for ((name, _), (sys_cfg, model)) in systems.iter().zip(&models) {
        let key = (sys_cfg.audio.sample_rate_hz, sys_cfg.audio.clip_s, sys_cfg.target_dbfs);
        let pos = match audio_cache.iter().position(|(k, _)| *k == key) {
            Some(p) => p,
            None => {
                let clips = load_clips(&items, &sys_cfg.audio, sys_cfg.target_dbfs, cfg.jobs)?;
                audio_cache.push((key, clips));
                audio_cache.len() - 1
            }
        };
        let ev = evaluate(model, &audio_cache[pos].1, &labels, None)?;
        info!("{name}: test accuracy {:.4}", ev.accuracy);
        predictions.push((name.clone(), ev.predictions()));
    }

    let subset = cfg.subset_size.min(items.len());
    let overall = bootstrap_subsets(&predictions, &labels, cfg.n_subsets, subset, cfg.seed)?;
    let per = bootstrap_per_dataset(&predictions, &labels, &dataset_ids, cfg.n_subsets, cfg.subset_size, cfg.seed)?;
    let per: Vec<_> = per.into_iter().filter(|(d, s)| {
        let ok = s.subset_size >= 2;
        if !ok {
            warn!("dataset {d} has too few test clips for a per-dataset comparison");
        }
        ok
    }).collect();
    let report = significance_pipeline(&overall, &per, cfg.alpha)?;

    let mut datasets: Vec<&str> = dataset_ids.iter().map(String::as_str).collect();
    datasets.sort_unstable();
    datasets.dedup();
    let mut acc_csv = format!("system,overall,{}\n", datasets.join(","));
    let width = systems.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(8);
    let mut text = format!("Test accuracy on {} clips\n{:<width$} {:>9}", items.len(), "system", "overall");
    for d in &datasets {
        let _ = write!(text, " {d:>w$}", w = d.len().max(9));
    }
    text.push('\n');
    for (name, preds) in &predictions {
        let total = accuracy(preds, &labels)?;
        let per = per_dataset_accuracy(&items, preds)?;
        let _ = write!(acc_csv, "{name},{total}");
        let _ = write!(text, "{name:<width$} {total:>9.4}");
        for (d, a) in &per {
            let _ = write!(acc_csv, ",{a}");
            let _ = write!(text, " {a:>w$.4}", w = d.len().max(9));
        }
        acc_csv.push('\n');
        text.push('\n');
    }
    let _ = write!(
        text,
        "\n{} bootstrap subsets of {} clips, seed {}\n\n{}",
        cfg.n_subsets,
        subset,
        cfg.seed,
        report.to_text()
    );

    let dir = out.map_or_else(|| cfg.output_dir.join("compare"), Path::to_path_buf);
    fs::create_dir_all(&dir).map_err(io_at(&dir))?;
    for (file, body) in [
        ("report.txt", &text),
        ("accuracy.csv", &acc_csv),
        ("significance.csv", &report.to_csv()),
    ] {
        let p = dir.join(file);
        fs::write(&p, body).map_err(io_at(&p))?;
    }
    print!("{text}");
    println!("\nreport written to {}", dir.display());
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig, kind: &str, seed: u64, duration: f64, h: f64, tol: f64) -> Outcome {
    if !(0.0..=10.0).contains(&duration) || duration == 0.0 {
        return Err(Failure::Validation(format!("duration {duration} s outside (0, 10]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = if kind.eq_ignore_ascii_case("classifier") {
        let mut clf = Classifier::new(
            ClassifierConfig {
                input_channels: 1,
                ..cfg.classifier.clone()
            },
            seed,
        )?;
        let (frames, bands) = (rng.gen_range(8..24), rng.gen_range(6..16));
        let values = (0..frames * bands).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = FeatureMap::new(1, frames, bands, values, 0.0025)?;
        check_classifier(&mut clf, &x, h, seed)?
    } else {
        let kind: FrontendKind = kind.parse()?;
        let mut fe = crate::frontends::Frontend::new(kind, &cfg.frontend, cfg.audio.sample_rate_hz, seed)?;
        let n = (duration * f64::from(cfg.audio.sample_rate_hz)).round() as usize;
        let w = Waveform::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), cfg.audio.sample_rate_hz)?;
        check_frontend(&mut fe, &w, h, seed)?
    };
    let mut offenders = Vec::new();
    for g in &groups {
        let mark = match (g.is_parameter, g.max_rel_error < tol) {
            (false, _) => "info",
            (true, true) => "ok",
            (true, false) => "FAIL",
        };
        let kinks = if g.kinks_skipped > 0 {
            format!(", {} kinks skipped", g.kinks_skipped)
        } else {
            String::new()
        };
        println!(
            "{:<20} max rel error {:.3e} over {} coords{kinks}  {mark}",
            g.name, g.max_rel_error, g.coords_checked
        );
        if g.is_parameter && g.max_rel_error >= tol {
            offenders.push(g.name.clone());
        }
    }
    if offenders.is_empty() {
        Ok(())
    } else {
        Err(runtime(format!("gradient mismatch above {tol:e} in {}", offenders.join(", "))))
    }
}
