//! Fixed-parameter signal processing shared by every frontend.

mod fft;
mod mel;
mod spectrogram;

pub use fft::{dft_power, FftConvolver, PowerFft};
pub use mel::{
    apply_mel, build_mel_filterbank, hz_to_mel, log_compress, mel_points, mel_to_hz,
    MelFilterbank, MelSpectrogram,
};
pub use spectrogram::{frame_count, hann_periodic, hann_symmetric, power_spectrogram, PowerSpectrogram, StftLayout};

use crate::{Error, Result};

/// Decoded mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::Param("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, s| m.max(s.abs()))
    }
}
