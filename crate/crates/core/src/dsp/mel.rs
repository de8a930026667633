use super::PowerSpectrogram;
use crate::{Error, Grid, Result};

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `n + 2` frequencies (Hz) equally spaced in mel from `f_min` to `f_max`;
/// the interior `n` points are filter centers.
pub fn mel_points(n: usize, f_min_hz: f64, f_max_hz: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(f_min_hz), hz_to_mel(f_max_hz));
    let step = (hi - lo) / (n + 1) as f64;
    (0..n + 2)
        .map(|i| {
            // Pin the end points so round-off never pushes them outside the band.
            match i {
                0 => f_min_hz,
                i if i == n + 1 => f_max_hz,
                i => mel_to_hz(lo + step * i as f64),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// `[n_mels × n_bins]`
    pub weights: Grid,
    pub center_freqs_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.weights.rows()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.cols()
    }
}

/// Triangular filters between adjacent mel-spaced centers.
///
/// Each row is scaled so its largest sampled weight is exactly 1. A filter
/// narrower than the bin spacing that misses every bin gets weight 1 on the
/// bin nearest its center.
pub fn build_mel_filterbank(
    n_mels: usize,
    f_min_hz: f64,
    f_max_hz: f64,
    n_bins: usize,
    bin_hz: f64,
) -> Result<MelFilterbank> {
    if n_mels == 0 {
        return Err(Error::Config("n_mels must be at least 1".into()));
    }
    if n_bins < 2 || !(bin_hz > 0.0) {
        return Err(Error::Config(format!(
            "invalid spectrum layout: {n_bins} bins of {bin_hz} Hz"
        )));
    }
    if !(f_min_hz > 0.0 && f_min_hz < f_max_hz) {
        return Err(Error::Config(format!(
            "mel band [{f_min_hz}, {f_max_hz}] Hz is not an increasing positive range"
        )));
    }
    let nyquist = (n_bins - 1) as f64 * bin_hz;
    if f_max_hz > nyquist + 1e-9 {
        return Err(Error::Config(format!(
            "f_max {f_max_hz} Hz above Nyquist {nyquist} Hz"
        )));
    }
    let points = mel_points(n_mels, f_min_hz, f_max_hz);
    let mut weights = Grid::zeros(n_mels, n_bins);
    for m in 0..n_mels {
        let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
        let row = weights.row_mut(m);
        for (b, w) in row.iter_mut().enumerate() {
            let f = b as f64 * bin_hz;
            *w = if f > lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
        }
        let peak = row.iter().copied().fold(0.0, f64::max);
        if peak > 0.0 {
            row.iter_mut().for_each(|w| *w /= peak);
        } else {
            let nearest = ((center / bin_hz).round() as usize).min(n_bins - 1);
            row[nearest] = 1.0;
        }
    }
    Ok(MelFilterbank {
        weights,
        center_freqs_hz: points[1..=n_mels].to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    /// `[n_frames × n_mels]`
    pub values: Grid,
    pub hop_s: f64,
    pub center_freqs_hz: Vec<f64>,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.values.rows()
    }

    pub fn n_mels(&self) -> usize {
        self.values.cols()
    }
}

pub fn apply_mel(ps: &PowerSpectrogram, fb: &MelFilterbank) -> Result<MelSpectrogram> {
    if ps.n_bins() != fb.n_bins() {
        return Err(Error::Shape(format!(
            "spectrogram has {} bins, filterbank expects {}",
            ps.n_bins(),
            fb.n_bins()
        )));
    }
    let (n_frames, n_mels) = (ps.n_frames(), fb.n_mels());
    let mut values = Grid::zeros(n_frames, n_mels);
    for t in 0..n_frames {
        let spec = ps.values.row(t);
        for m in 0..n_mels {
            values[(t, m)] = fb
                .weights
                .row(m)
                .iter()
                .zip(spec)
                .map(|(w, p)| w * p)
                .sum();
        }
    }
    Ok(MelSpectrogram {
        values,
        hop_s: ps.hop_s,
        center_freqs_hz: fb.center_freqs_hz.clone(),
    })
}

/// `ln(x + floor_eps)` cellwise.
pub fn log_compress(ms: &MelSpectrogram, floor_eps: f64) -> Result<Grid> {
    if !(floor_eps > 0.0) {
        return Err(Error::Param(format!("log floor {floor_eps} must be positive")));
    }
    Ok(ms.values.map(|&v| (v + floor_eps).ln()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mel_of(values: Grid) -> MelSpectrogram {
        let n = values.cols();
        MelSpectrogram {
            values,
            hop_s: 0.0025,
            center_freqs_hz: vec![1.0; n],
        }
    }

    #[test]
    fn single_filter_sits_at_mel_midpoint() {
        let fb = build_mel_filterbank(1, 500.0, 16000.0, 257, 44100.0 / 512.0).unwrap();
        let mid = (hz_to_mel(500.0) + hz_to_mel(16000.0)) / 2.0;
        let expected = 700.0 * (10f64.powf(mid / 2595.0) - 1.0);
        assert!((fb.center_freqs_hz[0] - expected).abs() < 1e-9);
        assert!((expected - 3776.606).abs() < 1e-3);
    }

    #[test]
    fn paper_configuration() {
        let fb = build_mel_filterbank(41, 500.0, 16000.0, 257, 44100.0 / 512.0).unwrap();
        assert_eq!(fb.center_freqs_hz.len(), 41);
        assert!(fb.center_freqs_hz.windows(2).all(|w| w[0] < w[1]));
        assert!(fb.center_freqs_hz.iter().all(|&f| (500.0..=16000.0).contains(&f)));
        for m in 0..41 {
            let row = fb.weights.row(m);
            assert_eq!(row.iter().copied().fold(0.0, f64::max), 1.0);
            assert_eq!(row.iter().filter(|&&w| w == 1.0).count(), 1);
        }
        for b in 0..257 {
            let col: f64 = (0..41).map(|m| fb.weights[(m, b)]).sum();
            assert!(col <= 2.0 + 1e-12);
        }
    }

    #[test]
    fn f_max_above_nyquist_rejected() {
        assert!(build_mel_filterbank(41, 500.0, 16000.0, 257, 16000.0 / 512.0).is_err());
    }

    #[test]
    fn apply_mel_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ps = PowerSpectrogram {
            values: Grid::from_fn(3, 5, |_, _| rng.gen_range(0.0..2.0)),
            bin_hz: 1.0,
            hop_s: 1.0,
        };
        let fb = MelFilterbank {
            weights: Grid::from_fn(2, 5, |_, _| rng.gen_range(0.0..1.0)),
            center_freqs_hz: vec![1.0, 2.0],
        };
        let ms = apply_mel(&ps, &fb).unwrap();
        for t in 0..3 {
            for m in 0..2 {
                let mut acc = 0.0;
                for b in 0..5 {
                    acc += fb.weights[(m, b)] * ps.values[(t, b)];
                }
                assert!((ms.values[(t, m)] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn selection_filter_copies_a_column() {
        let ps = PowerSpectrogram {
            values: Grid::from_fn(4, 3, |t, b| (t * 3 + b) as f64),
            bin_hz: 1.0,
            hop_s: 1.0,
        };
        let fb = MelFilterbank {
            weights: Grid::from_vec(1, 3, vec![0.0, 1.0, 0.0]).unwrap(),
            center_freqs_hz: vec![1.0],
        };
        let ms = apply_mel(&ps, &fb).unwrap();
        for t in 0..4 {
            assert_eq!(ms.values[(t, 0)], ps.values[(t, 1)]);
        }
        let bad = MelFilterbank {
            weights: Grid::zeros(1, 4),
            center_freqs_hz: vec![1.0],
        };
        assert!(matches!(apply_mel(&ps, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn log_compress_cases() {
        let z = log_compress(&mel_of(Grid::zeros(2, 2)), 1e-10).unwrap();
        assert!(z.as_slice().iter().all(|&v| (v - 1e-10f64.ln()).abs() < 1e-12));
        assert!((1e-10f64.ln() + 23.0259).abs() < 1e-4);

        let eps = 1e-10;
        let one = log_compress(&mel_of(Grid::from_vec(1, 1, vec![1.0 - eps]).unwrap()), eps)
            .unwrap();
        assert_eq!(one[(0, 0)], 0.0);

        let base = Grid::from_vec(1, 3, vec![3.0, 40.0, 0.5]).unwrap();
        let a = log_compress(&mel_of(base.clone()), eps).unwrap();
        let b = log_compress(&mel_of(base.map(|v| v * 10.0)), eps).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((y - x - 10f64.ln()).abs() < 1e-9);
        }
        assert!(log_compress(&mel_of(base), 0.0).is_err());
    }
}
