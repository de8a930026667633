//! Strided "valid" pooling shared by the TD and LEAF waveform paths:
//! `out[j] = Σ_m p[j·stride + m] · w[m]`.

use crate::{Error, Result};

/// Odd kernel length closest to `duration_s` at the given rate.
pub fn odd_kernel_len(duration_s: f64, sample_rate_hz: u32) -> usize {
    let n = (duration_s * f64::from(sample_rate_hz)).round().max(1.0) as usize;
    if n % 2 == 0 {
        n + 1
    } else {
        n
    }
}

/// Frames produced by filtering `len` samples with a `k`-tap kernel and
/// pooling the result with a `k`-tap window every `stride` samples.
pub fn waveform_frames(len: usize, k: usize, stride: usize) -> Result<usize> {
    if k == 0 || stride == 0 {
        return Err(Error::Config("kernel length and stride must be positive".into()));
    }
    if len + 1 < 2 * k {
        return Err(Error::InputTooShort(format!(
            "{len} samples, filtering and pooling with {k}-tap kernels needs {}",
            2 * k - 1
        )));
    }
    let filtered = len - k + 1;
    Ok((filtered - k) / stride + 1)
}

/// Dot product with independent partial sums so the loop vectorizes.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f64>() + tail
}

pub(crate) fn pool(p: &[f64], w: &[f64], stride: usize, n_frames: usize) -> Vec<f64> {
    (0..n_frames)
        .map(|j| dot(&p[j * stride..j * stride + w.len()], w))
        .collect()
}

/// Adjoint of [`pool`] with respect to the pooled signal.
pub(crate) fn pool_grad_signal(up: &[f64], w: &[f64], stride: usize, len: usize) -> Vec<f64> {
    let mut g = vec![0.0; len];
    for (j, &u) in up.iter().enumerate() {
        if u == 0.0 {
            continue;
        }
        for (gm, &wm) in g[j * stride..j * stride + w.len()].iter_mut().zip(w) {
            *gm += u * wm;
        }
    }
    g
}

/// Gradient of [`pool`] with respect to the window taps.
pub(crate) fn pool_grad_window(up: &[f64], p: &[f64], stride: usize, k: usize) -> Vec<f64> {
    let mut g = vec![0.0; k];
    for (j, &u) in up.iter().enumerate() {
        if u == 0.0 {
            continue;
        }
        for (gm, &pm) in g.iter_mut().zip(&p[j * stride..j * stride + k]) {
            *gm += u * pm;
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_length_rounding() {
        assert_eq!(odd_kernel_len(0.025, 44100), 1103);
        assert_eq!(odd_kernel_len(0.025, 16000), 401);
        assert_eq!(odd_kernel_len(0.025, 32000), 801);
    }

    #[test]
    fn frames_and_short_input() {
        assert_eq!(waveform_frames(21, 5, 2).unwrap(), (17 - 5) / 2 + 1);
        assert!(waveform_frames(8, 5, 1).is_err());
        assert_eq!(waveform_frames(9, 5, 1).unwrap(), 1);
    }

    #[test]
    fn adjoints() {
        let p: Vec<f64> = (0..13).map(|i| (i as f64 * 0.7).sin()).collect();
        let w = [0.2, -0.5, 1.0, 0.3];
        let up = [0.4, -1.1, 0.9, 2.0, 0.1];
        let out = pool(&p, &w, 2, 5);
        let lhs: f64 = out.iter().zip(&up).map(|(a, b)| a * b).sum();
        let gs = pool_grad_signal(&up, &w, 2, 13);
        let rhs: f64 = gs.iter().zip(&p).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let gw = pool_grad_window(&up, &p, 2, 4);
        let rhs: f64 = gw.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
