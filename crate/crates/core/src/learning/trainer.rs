//! Joint training of a frontend and the classifier.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{bce_loss, Adam, Classifier, ClassifierConfig, ParamTensor, PlateauScheduler};
use crate::dsp::Waveform;
use crate::frontends::{FeatureMap, Frontend};
use crate::{Error, Result};

pub const SHIFT_NAME: &str = "classifier.input_shift";
pub const SCALE_NAME: &str = "classifier.input_scale";

#[derive(Debug, Clone)]
pub struct Model {
    pub frontend: Frontend,
    pub classifier: Classifier,
}

impl Model {
    /// `cfg.input_channels` is taken from the frontend.
    pub fn new(frontend: Frontend, mut cfg: ClassifierConfig, seed: u64) -> Result<Self> {
        cfg.input_channels = frontend.output_channels();
        let classifier = Classifier::new(cfg, seed)?;
        Ok(Self { frontend, classifier })
    }

    pub fn params(&self) -> impl Iterator<Item = &ParamTensor> {
        self.frontend.params().iter().chain(self.classifier.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.frontend
            .params_mut()
            .iter_mut()
            .chain(self.classifier.params_mut().iter_mut())
    }

    /// Trainable tensors plus the two input-normalization scalars.
    pub fn export(&self) -> Vec<ParamTensor> {
        let mut out: Vec<ParamTensor> = self.params().cloned().collect();
        out.push(ParamTensor::new(SHIFT_NAME, vec![1], vec![self.classifier.input_shift]));
        out.push(ParamTensor::new(SCALE_NAME, vec![1], vec![self.classifier.input_scale]));
        out
    }

    /// Inverse of [`Self::export`]; every tensor must be present with the same shape.
    pub fn import(&mut self, tensors: &[ParamTensor]) -> Result<()> {
        let find = |name: &str, shape: &[usize]| -> Result<&ParamTensor> {
            let t = tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor '{name}'")))?;
            if t.shape != shape {
                return Err(Error::Format(format!(
                    "tensor '{name}' has shape {:?}, model expects {shape:?}",
                    t.shape
                )));
            }
            Ok(t)
        };
        self.classifier.input_shift = find(SHIFT_NAME, &[1])?.value[0];
        self.classifier.input_scale = find(SCALE_NAME, &[1])?.value[0];
        for p in self.params_mut() {
            let src = find(&p.name, &p.shape)?;
            p.value.copy_from_slice(&src.value);
        }
        Ok(())
    }

    /// Sets the classifier input shift and scale to the mean and inverse
    /// standard deviation of the current frontend output over `clips`.
    pub fn fit_input_norm(&mut self, clips: &[Waveform], cache: Option<&[FeatureMap]>) -> Result<()> {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for (i, w) in clips.iter().enumerate() {
            let owned;
            let fm = match cache {
                Some(c) => &c[i],
                None => {
                    owned = self.frontend.forward(w)?;
                    &owned
                }
            };
            n += fm.values.len();
            sum += fm.values.iter().sum::<f64>();
            sq += fm.values.iter().map(|v| v * v).sum::<f64>();
        }
        if n == 0 {
            return Err(Error::Degenerate("no features to normalize".into()));
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        self.classifier.input_shift = mean;
        self.classifier.input_scale = if var > 0.0 && var.is_finite() { 1.0 / var.sqrt() } else { 1.0 };
        Ok(())
    }

    pub fn features(&self, w: &Waveform) -> Result<FeatureMap> {
        self.frontend.forward(w)
    }

    pub fn logit(&self, w: &Waveform) -> Result<f64> {
        self.classifier.forward(&self.frontend.forward(w)?)
    }
}

/// Precomputed features when the frontend has nothing to learn.
pub fn feature_cache(frontend: &Frontend, clips: &[Waveform]) -> Result<Option<Vec<FeatureMap>>> {
    if !frontend.params().is_empty() {
        return Ok(None);
    }
    clips.iter().map(|w| frontend.forward(w)).collect::<Result<Vec<_>>>().map(Some)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub factor: f64,
    pub min_delta: f64,
    pub lr_min: f64,
    pub seed: u64,
    /// Stop after this many epochs without a new best validation result.
    pub early_stop: Option<usize>,
    /// Stop as soon as validation accuracy reaches this value.
    pub stop_at_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            patience: 5,
            factor: 10.0,
            min_delta: 1e-4,
            lr_min: 1e-6,
            seed: 0,
            early_stop: None,
            stop_at_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        Adam::new(self.learning_rate)?;
        PlateauScheduler::new(self.patience, self.factor, self.min_delta, self.lr_min)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub learning_rate: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,train_accuracy,val_loss,val_accuracy,learning_rate";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            self.epoch, self.train_loss, self.train_accuracy, self.val_loss, self.val_accuracy, self.learning_rate
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub logits: Vec<f64>,
}

impl Evaluation {
    pub fn predictions(&self) -> Vec<u8> {
        self.logits.iter().map(|&z| u8::from(z > 0.0)).collect()
    }
}

fn check_labels(clips: &[Waveform], labels: &[u8]) -> Result<()> {
    if clips.len() != labels.len() {
        return Err(Error::Shape(format!("{} clips but {} labels", clips.len(), labels.len())));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Config(format!("label {l} is not binary")));
    }
    Ok(())
}

pub fn evaluate(model: &Model, clips: &[Waveform], labels: &[u8], cache: Option<&[FeatureMap]>) -> Result<Evaluation> {
    check_labels(clips, labels)?;
    if clips.is_empty() {
        return Err(Error::Degenerate("nothing to evaluate".into()));
    }
    let mut logits = Vec::with_capacity(clips.len());
    let (mut loss, mut correct) = (0.0, 0usize);
    for (i, (w, &y)) in clips.iter().zip(labels).enumerate() {
        let z = match cache {
            Some(c) => model.classifier.forward(&c[i])?,
            None => model.logit(w)?,
        };
        loss += bce_loss(z, y).0;
        correct += usize::from(u8::from(z > 0.0) == y);
        logits.push(z);
    }
    let n = clips.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
        logits,
    })
}

fn diverged(model: &Model, what: String) -> Error {
    let culprit = model
        .params()
        .find(|p| p.value.iter().chain(&p.grad).any(|v| !v.is_finite()))
        .map(|p| format!("parameter '{}'", p.name))
        .unwrap_or_else(|| "no parameter is non-finite".into());
    Error::Diverged(format!("{what}; {culprit}"))
}

/// One pass over `order` in batches; returns mean loss and accuracy at 0.5.
pub fn train_epoch(
    model: &mut Model,
    opt: &mut Adam,
    clips: &[Waveform],
    labels: &[u8],
    order: &[usize],
    batch_size: usize,
    cache: Option<&[FeatureMap]>,
) -> Result<(f64, f64)> {
    check_labels(clips, labels)?;
    if order.is_empty() || batch_size == 0 {
        return Err(Error::Degenerate("no training batches".into()));
    }
    let (mut total, mut correct) = (0.0, 0usize);
    for batch in order.chunks(batch_size) {
        let scale = 1.0 / batch.len() as f64;
        for &i in batch {
            let (z, fcache, ccache) = match cache {
                Some(c) => {
                    let (z, cc) = model.classifier.forward_cached(&c[i])?;
                    (z, None, cc)
                }
                None => {
                    let (fm, fc) = model.frontend.forward_cached(&clips[i])?;
                    let (z, cc) = model.classifier.forward_cached(&fm)?;
                    (z, Some(fc), cc)
                }
            };
            let (loss, dz) = bce_loss(z, labels[i]);
            if !loss.is_finite() {
                return Err(diverged(model, format!("non-finite loss on clip {i}")));
            }
            total += loss;
            correct += usize::from(u8::from(z > 0.0) == labels[i]);
            let (cgrads, dx) = model.classifier.backward(&ccache, dz * scale)?;
            for (p, g) in model.classifier.params_mut().iter_mut().zip(&cgrads) {
                p.accumulate(g, 1.0);
            }
            if let Some(fc) = fcache {
                let fgrads = model.frontend.backward(&fc, &dx)?;
                for (p, g) in model.frontend.params_mut().iter_mut().zip(&fgrads) {
                    p.accumulate(g, 1.0);
                }
            }
        }
        if model.params().any(|p| p.grad.iter().any(|g| !g.is_finite())) {
            return Err(diverged(model, "non-finite gradient".into()));
        }
        opt.step(model.params_mut())?;
        if model.params().any(|p| p.value.iter().any(|v| !v.is_finite())) {
            return Err(diverged(model, "non-finite parameter after update".into()));
        }
    }
    let n = order.len() as f64;
    Ok((total / n, correct as f64 / n))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    /// Parameters from the epoch with the best validation accuracy (ties: lower loss).
    pub best: Model,
    pub optimizer: Adam,
}

/// Trains for up to `cfg.epochs` epochs and keeps the best validation model.
pub fn fit(
    model: &mut Model,
    train: (&[Waveform], &[u8]),
    val: (&[Waveform], &[u8]),
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_labels(train.0, train.1)?;
    check_labels(val.0, val.1)?;
    if train.0.is_empty() || val.0.is_empty() {
        return Err(Error::Degenerate("training and validation sets must be non-empty".into()));
    }
    let train_cache = feature_cache(&model.frontend, train.0)?;
    let val_cache = feature_cache(&model.frontend, val.0)?;
    model.fit_input_norm(train.0, train_cache.as_deref())?;
    debug!(
        "input normalization: shift {:.6e}, scale {:.6e}",
        model.classifier.input_shift, model.classifier.input_scale
    );

    let mut opt = Adam::new(cfg.learning_rate)?;
    let mut sched = PlateauScheduler::new(cfg.patience, cfg.factor, cfg.min_delta, cfg.lr_min)?;
    let mut order: Vec<usize> = (0..train.0.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, f64, Model)> = None;
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let lr = opt.learning_rate;
        let (train_loss, train_accuracy) =
            train_epoch(model, &mut opt, train.0, train.1, &order, cfg.batch_size, train_cache.as_deref())?;
        let ev = evaluate(model, val.0, val.1, val_cache.as_deref())?;
        let log = EpochLog {
            epoch,
            train_loss,
            train_accuracy,
            val_loss: ev.loss,
            val_accuracy: ev.accuracy,
            learning_rate: lr,
        };
        info!(
            "epoch {epoch}: train loss {train_loss:.4} acc {train_accuracy:.3}, val loss {:.4} acc {:.3}",
            ev.loss, ev.accuracy
        );
        on_epoch(&log);
        history.push(log);
        opt.learning_rate = sched.observe(ev.loss, opt.learning_rate);

        let improved = match &best {
            None => true,
            Some((_, acc, loss, _)) => ev.accuracy > *acc || (ev.accuracy == *acc && ev.loss < *loss),
        };
        if improved {
            best = Some((epoch, ev.accuracy, ev.loss, model.clone()));
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.0);
        if cfg.stop_at_accuracy.is_some_and(|t| ev.accuracy >= t) {
            break;
        }
        if cfg.early_stop.is_some_and(|p| epoch - best_epoch >= p) {
            break;
        }
    }
    let (best_epoch, _, _, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        history,
        best_epoch,
        best,
        optimizer: opt,
    })
}
