use crate::dsp::Waveform;
use crate::{Error, Result};

/// Equal-length waveforms with their binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipBatch {
    waveforms: Vec<Waveform>,
    labels: Vec<u8>,
}

impl ClipBatch {
    pub fn new(waveforms: Vec<Waveform>, labels: Vec<u8>) -> Result<Self> {
        if waveforms.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} waveforms but {} labels",
                waveforms.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Param(format!("label {l} is not 0 or 1")));
        }
        if let Some(first) = waveforms.first() {
            let key = (first.len(), first.sample_rate_hz);
            if let Some(w) = waveforms.iter().find(|w| (w.len(), w.sample_rate_hz) != key) {
                return Err(Error::Shape(format!(
                    "clip of {} samples at {} Hz in a batch of {} samples at {} Hz",
                    w.len(),
                    w.sample_rate_hz,
                    key.0,
                    key.1
                )));
            }
        }
        Ok(Self { waveforms, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn waveforms(&self) -> &[Waveform] {
        &self.waveforms
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn into_parts(self) -> (Vec<Waveform>, Vec<u8>) {
        (self.waveforms, self.labels)
    }
}
