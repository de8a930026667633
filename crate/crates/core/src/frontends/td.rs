//! Time-domain filterbank: `|x ∗ φ_n|² ∗ |Φ|²` with unconstrained FIR filters
//! and a squared Hanning pooling window.

use rustfft::num_complex::Complex64;

use super::pooling::{pool, pool_grad_signal, waveform_frames};
use super::FeatureMap;
use crate::dsp::{hann_symmetric, FftConvolver, Waveform};
use crate::gabor::{gabor_wavelet_1d, init_mel_gabor_bank};
use crate::{Error, Grid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TdFilterbank {
    /// `[n_filters × kernel_len]`, taps in convolution order.
    pub filters: Grid,
    /// Pooling window, `kernel_len` taps.
    pub window: Vec<f64>,
    pub stride: usize,
}

impl TdFilterbank {
    /// Squared symmetric Hann pooling window of `kernel_len` taps.
    pub fn squared_hann(kernel_len: usize) -> Vec<f64> {
        hann_symmetric(kernel_len).into_iter().map(|h| h * h).collect()
    }

    /// Real parts of mel-initialized Gabor wavelets.
    pub fn mel_init(
        n_filters: usize,
        f_min_hz: f64,
        f_max_hz: f64,
        sample_rate_hz: u32,
        kernel_len: usize,
        stride: usize,
    ) -> Result<Self> {
        if kernel_len % 2 == 0 {
            return Err(Error::Config(format!("kernel length {kernel_len} must be odd")));
        }
        let half = kernel_len / 2;
        let bank = init_mel_gabor_bank(n_filters, f_min_hz, f_max_hz, sample_rate_hz, half)?;
        let mut filters = Grid::zeros(n_filters, kernel_len);
        for (n, p) in bank.iter().enumerate() {
            for (dst, c) in filters.row_mut(n).iter_mut().zip(gabor_wavelet_1d(p, half)?) {
                *dst = c.re;
            }
        }
        let fb = Self {
            filters,
            window: Self::squared_hann(kernel_len),
            stride,
        };
        fb.validate()?;
        Ok(fb)
    }

    pub fn n_filters(&self) -> usize {
        self.filters.rows()
    }

    pub fn kernel_len(&self) -> usize {
        self.filters.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.kernel_len();
        if k % 2 == 0 || self.window.len() != k {
            return Err(Error::Config(format!(
                "TD kernel length {k} must be odd and match the {}-tap window",
                self.window.len()
            )));
        }
        if self.stride == 0 || self.n_filters() == 0 {
            return Err(Error::Config("TD needs a positive stride and at least one filter".into()));
        }
        Ok(())
    }
}

/// Intermediate signals kept for the reverse pass.
pub struct TdCache {
    conv: FftConvolver,
    /// `[n_filters][len − k + 1]` filter outputs before squaring.
    filtered: Vec<Vec<f64>>,
}

pub fn td_forward(w: &Waveform, fb: &TdFilterbank) -> Result<FeatureMap> {
    run(w, fb, false).map(|(fm, _)| fm)
}

pub(crate) fn td_forward_cached(w: &Waveform, fb: &TdFilterbank) -> Result<(FeatureMap, TdCache)> {
    run(w, fb, true).map(|(fm, c)| (fm, c.expect("kept on request")))
}

fn run(w: &Waveform, fb: &TdFilterbank, keep: bool) -> Result<(FeatureMap, Option<TdCache>)> {
    fb.validate()?;
    let k = fb.kernel_len();
    let n_frames = waveform_frames(w.len(), k, fb.stride)?;
    let conv = FftConvolver::new(&w.samples, k)?;
    let n = fb.n_filters();
    let mut values = vec![0.0; n_frames * n];
    let mut filtered = Vec::with_capacity(n);
    // The signal is real, so two real filters share one complex pass.
    for pair in (0..n).collect::<Vec<_>>().chunks(2) {
        let second = |m: usize| pair.get(1).map_or(0.0, |&f| fb.filters[(f, m)]);
        let taps: Vec<Complex64> = (0..k).map(|m| Complex64::new(fb.filters[(pair[0], m)], second(m))).collect();
        let y = conv.convolve_valid(&taps);
        for (part, &f) in pair.iter().enumerate() {
            let y: Vec<f64> = y.iter().map(|c| if part == 0 { c.re } else { c.im }).collect();
            let power: Vec<f64> = y.iter().map(|v| v * v).collect();
            for (j, e) in pool(&power, &fb.window, fb.stride, n_frames).into_iter().enumerate() {
                values[j * n + f] = e;
            }
            if keep {
                filtered.push(y);
            }
        }
    }
    let hop_s = fb.stride as f64 / f64::from(w.sample_rate_hz);
    Ok((FeatureMap::new(1, n_frames, n, values, hop_s)?, keep.then_some(TdCache { conv, filtered })))
}

/// Gradient of `Σ upstream · TD` with respect to every filter tap.
pub(crate) fn td_backward(fb: &TdFilterbank, cache: &TdCache, upstream: &FeatureMap) -> Result<Grid> {
    let (n, k) = (fb.n_filters(), fb.kernel_len());
    let n_frames = upstream.n_frames;
    if upstream.channels != 1 || upstream.n_bands != n || cache.filtered.len() != n {
        return Err(Error::Shape("TD upstream gradient does not match the filterbank".into()));
    }
    let mut grads = Grid::zeros(n, k);
    let g_filtered = |f: usize| -> Vec<f64> {
        let up: Vec<f64> = (0..n_frames).map(|j| upstream.get(0, j, f)).collect();
        let y = &cache.filtered[f];
        let g_power = pool_grad_signal(&up, &fb.window, fb.stride, y.len());
        g_power.iter().zip(y).map(|(g, y)| 2.0 * g * y).collect()
    };
    for pair in (0..n).collect::<Vec<_>>().chunks(2) {
        let re = g_filtered(pair[0]);
        let im = pair.get(1).map(|&f| g_filtered(f));
        let g_y: Vec<Complex64> = re
            .iter()
            .enumerate()
            .map(|(i, &r)| Complex64::new(r, im.as_ref().map_or(0.0, |v| v[i])))
            .collect();
        let corr = cache.conv.correlate_valid(&g_y);
        for (part, &f) in pair.iter().enumerate() {
            for (m, dst) in grads.row_mut(f).iter_mut().enumerate() {
                let c = corr[k - 1 - m];
                *dst = if part == 0 { c.re } else { c.im };
            }
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_waveform_zero_features() {
        let fb = TdFilterbank::mel_init(8, 500.0, 16000.0, 44100, 101, 50).unwrap();
        let fm = td_forward(&Waveform::new(vec![0.0; 2000], 44100).unwrap(), &fb).unwrap();
        assert!(fm.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_response_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = 9;
        let taps: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fb = TdFilterbank {
            filters: Grid::from_vec(1, k, taps.clone()).unwrap(),
            window: TdFilterbank::squared_hann(k),
            stride: 1,
        };
        let len = 40;
        let pos = 15;
        let mut x = vec![0.0; len];
        x[pos] = 1.0;
        let fm = td_forward(&Waveform::new(x, 8000).unwrap(), &fb).unwrap();
        // filtered[i] = taps[i + k − 1 − pos] when that index is valid
        let filtered: Vec<f64> = (0..len - k + 1)
            .map(|i| {
                let m = i as isize + k as isize - 1 - pos as isize;
                if (0..k as isize).contains(&m) { taps[m as usize] } else { 0.0 }
            })
            .collect();
        let sq: Vec<f64> = filtered.iter().map(|v| v * v).collect();
        for j in 0..fm.n_frames {
            let direct: f64 = (0..k).map(|m| sq[j + m] * fb.window[m]).sum();
            assert!((fm.get(0, j, 0) - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn too_short_input() {
        let fb = TdFilterbank::mel_init(4, 500.0, 16000.0, 44100, 101, 50).unwrap();
        let w = Waveform::new(vec![0.1; 150], 44100).unwrap();
        assert!(matches!(td_forward(&w, &fb), Err(Error::InputTooShort(_))));
    }

    #[test]
    fn outputs_are_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let fb = TdFilterbank::mel_init(6, 500.0, 16000.0, 44100, 201, 110).unwrap();
        let x: Vec<f64> = (0..4410).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fm = td_forward(&Waveform::new(x, 44100).unwrap(), &fb).unwrap();
        assert!(fm.values.iter().all(|&v| v >= 0.0 && v.is_finite()));
    }
}
