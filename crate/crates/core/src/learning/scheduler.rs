use crate::{Error, Result};

/// Divides the learning rate by `factor` after `patience` epochs without a
/// validation-loss improvement larger than `min_delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    pub min_delta: f64,
    pub lr_min: f64,
    best: f64,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(patience: usize, factor: f64, min_delta: f64, lr_min: f64) -> Result<Self> {
        if patience == 0 || !(factor > 1.0) || !(min_delta >= 0.0) || !(lr_min >= 0.0) {
            return Err(Error::Config(format!(
                "bad plateau schedule: patience {patience}, factor {factor}, min_delta {min_delta}, lr_min {lr_min}"
            )));
        }
        Ok(Self {
            patience,
            factor,
            min_delta,
            lr_min,
            best: f64::INFINITY,
            stale: 0,
        })
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Records one epoch's validation loss and returns the learning rate to use next.
    pub fn observe(&mut self, val_loss: f64, lr: f64) -> f64 {
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.stale = 0;
            return lr;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.stale = 0;
            return (lr / self.factor).max(self.lr_min.min(lr));
        }
        lr
    }

    /// Learning rate after replaying a whole loss history from `lr0`.
    pub fn replay(mut self, history: &[f64], lr0: f64) -> f64 {
        history.iter().fold(lr0, |lr, &l| self.observe(l, lr))
    }
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        Self::new(5, 10.0, 1e-4, 1e-6).expect("valid defaults")
    }
}
