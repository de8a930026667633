use std::f64::consts::PI;

use super::{PowerFft, Waveform};
use crate::{Error, Grid, Result};

/// Periodic Hann window, the usual choice for STFT analysis.
pub fn hann_periodic(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Symmetric Hann ("Hanning") window with zero end points.
pub fn hann_symmetric(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Number of full frames of `win` samples taken every `hop` samples.
pub fn frame_count(len: usize, win: usize, hop: usize) -> usize {
    if len < win {
        0
    } else {
        (len - win) / hop + 1
    }
}

/// Integer framing derived from a window duration and an overlap fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftLayout {
    pub win_len: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl StftLayout {
    pub fn new(sample_rate_hz: u32, win_len_s: f64, overlap_frac: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&overlap_frac) {
            return Err(Error::Config(format!(
                "overlap fraction {overlap_frac} outside [0, 1)"
            )));
        }
        // The epsilon absorbs representation error, e.g. 0.01 * 44100.
        let win_len = (win_len_s * f64::from(sample_rate_hz) + 1e-9).floor();
        if !(win_len >= 2.0) {
            return Err(Error::Config(format!(
                "window of {win_len_s} s at {sample_rate_hz} Hz is shorter than 2 samples"
            )));
        }
        let win_len = win_len as usize;
        let hop = ((win_len as f64 * (1.0 - overlap_frac)).round() as usize).max(1);
        Ok(Self {
            win_len,
            hop,
            fft_size: win_len.next_power_of_two(),
        })
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrogram {
    /// `[n_frames × n_bins]`
    pub values: Grid,
    pub bin_hz: f64,
    pub hop_s: f64,
}

impl PowerSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.values.rows()
    }

    pub fn n_bins(&self) -> usize {
        self.values.cols()
    }
}

/// Hann-windowed, zero-padded power STFT.
pub fn power_spectrogram(
    w: &Waveform,
    win_len_s: f64,
    overlap_frac: f64,
) -> Result<PowerSpectrogram> {
    let layout = StftLayout::new(w.sample_rate_hz, win_len_s, overlap_frac)?;
    let n_frames = frame_count(w.len(), layout.win_len, layout.hop);
    if n_frames == 0 {
        return Err(Error::InputTooShort(format!(
            "{} samples, window needs {}",
            w.len(),
            layout.win_len
        )));
    }
    let window = hann_periodic(layout.win_len);
    let fft = PowerFft::new(layout.fft_size)?;
    let mut values = Grid::zeros(n_frames, layout.n_bins());
    let mut frame = vec![0.0; layout.win_len];
    for t in 0..n_frames {
        let start = t * layout.hop;
        for (f, (&x, &h)) in frame
            .iter_mut()
            .zip(w.samples[start..start + layout.win_len].iter().zip(&window))
        {
            *f = x * h;
        }
        fft.power_into(&frame, values.row_mut(t));
    }
    let sr = f64::from(w.sample_rate_hz);
    Ok(PowerSpectrogram {
        values,
        bin_hz: sr / layout.fft_size as f64,
        hop_s: layout.hop as f64 / sr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_layout_at_44k1() {
        let l = StftLayout::new(44100, 0.01, 0.75).unwrap();
        assert_eq!((l.win_len, l.hop, l.fft_size), (441, 110, 512));
    }

    #[test]
    fn silence_gives_zero_grid_with_expected_frames() {
        let w = Waveform::new(vec![0.0; 441_000], 44100).unwrap();
        let ps = power_spectrogram(&w, 0.01, 0.75).unwrap();
        assert_eq!(ps.n_frames(), (441_000 - 441) / 110 + 1);
        assert_eq!(ps.n_bins(), 257);
        assert!(ps.values.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tone_peaks_at_its_bin_every_frame() {
        let sr = 44100;
        let samples: Vec<f64> = (0..sr)
            .map(|n| (2.0 * PI * 1000.0 * n as f64 / sr as f64).sin())
            .collect();
        let ps = power_spectrogram(&Waveform::new(samples, sr as u32).unwrap(), 0.01, 0.75)
            .unwrap();
        let expected = (1000.0 / ps.bin_hz).round() as usize;
        for t in 0..ps.n_frames() {
            let row = ps.values.row(t);
            let argmax = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .unwrap();
            assert_eq!(argmax, expected);
        }
    }

    #[test]
    fn too_short() {
        let w = Waveform::new(vec![0.1; 100], 44100).unwrap();
        assert!(matches!(
            power_spectrogram(&w, 0.01, 0.75),
            Err(Error::InputTooShort(_))
        ));
    }

    #[test]
    fn bad_overlap() {
        let w = Waveform::new(vec![0.1; 1000], 44100).unwrap();
        assert!(power_spectrogram(&w, 0.01, 1.0).is_err());
    }
}
