use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::{Error, Result};

/// |DFT(frame)|² for bins `0..=N/2`.
///
/// `frame.len()` must be a power of two.
pub fn dft_power(frame: &[f64]) -> Result<Vec<f64>> {
    let fft = PowerFft::new(frame.len())?;
    let mut out = vec![0.0; fft.n_bins()];
    fft.power_into(frame, &mut out);
    Ok(out)
}

/// Reusable radix-2 power-spectrum transform of a fixed size.
pub struct PowerFft {
    size: usize,
    plan: Arc<dyn Fft<f64>>,
}

impl PowerFft {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 || !size.is_power_of_two() {
            return Err(Error::Config(format!(
                "FFT size {size} is not a power of two"
            )));
        }
        let plan = FftPlanner::new().plan_fft_forward(size);
        Ok(Self { size, plan })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn n_bins(&self) -> usize {
        self.size / 2 + 1
    }

    /// Zero-pads `frame` to the transform size when shorter.
    pub fn power_into(&self, frame: &[f64], out: &mut [f64]) {
        debug_assert!(frame.len() <= self.size);
        let mut buf: Vec<Complex64> = frame
            .iter()
            .map(|&x| Complex64::new(x, 0.0))
            .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
            .take(self.size)
            .collect();
        self.plan.process(&mut buf);
        for (o, c) in out.iter_mut().zip(&buf[..self.n_bins()]) {
            *o = c.norm_sqr();
        }
    }
}

/// FFT-based linear convolution and correlation of one fixed real signal
/// with kernels of one fixed length `k`, by overlap-save over blocks.
///
/// Both operations return only the "valid" lags:
/// `convolve_valid` yields `y[i] = Σ_m h[m]·x[i + k − 1 − m]` for
/// `i ∈ [0, len − k]`, and `correlate_valid` yields `c[j] = Σ_i g[i]·x[i + j]`
/// for `j ∈ [0, k)` where `g` has length `len − k + 1`.
pub struct FftConvolver {
    len: usize,
    k: usize,
    block: usize,
    /// Valid outputs per block, `block − k + 1`.
    step: usize,
    /// Spectrum of `x[b·step .. b·step + block]` (zero-padded) per block.
    spectra: Vec<Vec<Complex64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

impl FftConvolver {
    pub fn new(signal: &[f64], k: usize) -> Result<Self> {
        let len = signal.len();
        if k == 0 || k > len {
            return Err(Error::InputTooShort(format!("{len} samples for a {k}-tap kernel")));
        }
        let block = len.next_power_of_two().min((4 * k).next_power_of_two());
        let step = block - k + 1;
        let n_out = len - k + 1;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(block);
        let inverse = planner.plan_fft_inverse(block);
        let spectra = (0..n_out.div_ceil(step))
            .map(|b| {
                let start = b * step;
                let mut buf: Vec<Complex64> = signal[start..(start + block).min(len)]
                    .iter()
                    .map(|&x| Complex64::new(x, 0.0))
                    .collect();
                buf.resize(block, ZERO);
                forward.process(&mut buf);
                buf
            })
            .collect();
        Ok(Self {
            len,
            k,
            block,
            step,
            spectra,
            forward,
            inverse,
        })
    }

    pub fn signal_len(&self) -> usize {
        self.len
    }

    pub fn kernel_len(&self) -> usize {
        self.k
    }

    fn n_out(&self) -> usize {
        self.len - self.k + 1
    }

    pub fn convolve_valid(&self, kernel: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(kernel.len(), self.k, "kernel length differs from the planned one");
        let mut h = kernel.to_vec();
        h.resize(self.block, ZERO);
        self.forward.process(&mut h);
        let n_out = self.n_out();
        let scale = 1.0 / self.block as f64;
        let mut out = Vec::with_capacity(n_out);
        let mut buf = vec![ZERO; self.block];
        for s in &self.spectra {
            for ((b, a), x) in buf.iter_mut().zip(&h).zip(s) {
                *b = a * x;
            }
            self.inverse.process(&mut buf);
            let count = self.step.min(n_out - out.len());
            out.extend(buf[self.k - 1..self.k - 1 + count].iter().map(|c| c * scale));
        }
        out
    }

    pub fn correlate_valid(&self, g: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(g.len(), self.n_out(), "gradient length does not match the valid output");
        let mut acc = vec![ZERO; self.block];
        let mut buf = vec![ZERO; self.block];
        for (chunk, s) in g.chunks(self.step).zip(&self.spectra) {
            buf.fill(ZERO);
            for (b, c) in buf.iter_mut().zip(chunk) {
                *b = c.conj();
            }
            self.forward.process(&mut buf);
            for ((a, b), x) in acc.iter_mut().zip(&buf).zip(s) {
                *a += b.conj() * x;
            }
        }
        self.inverse.process(&mut acc);
        let scale = 1.0 / self.block as f64;
        acc.truncate(self.k);
        acc.iter_mut().for_each(|c| *c *= scale);
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_power(frame: &[f64]) -> Vec<f64> {
        let n = frame.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, &x) in frame.iter().enumerate() {
                    let ph = -2.0 * std::f64::consts::PI * (k * t % n) as f64 / n as f64;
                    re += x * ph.cos();
                    im += x * ph.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn zero_frame() {
        let p = dft_power(&[0.0; 256]).unwrap();
        assert_eq!(p.len(), 129);
        assert!(p.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pure_tone_lands_in_its_bin() {
        let n = 256;
        let frame: Vec<f64> = (0..n)
            .map(|t| (2.0 * std::f64::consts::PI * 8.0 * t as f64 / n as f64).cos())
            .collect();
        let p = dft_power(&frame).unwrap();
        assert!((p[8] - 16384.0).abs() < 1e-8);
        for (k, &v) in p.iter().enumerate() {
            if k != 8 {
                assert!(v < 1e-18, "bin {k}: {v}");
            }
        }
    }

    #[test]
    fn matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frame: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = dft_power(&frame).unwrap();
        for (a, b) in fast.iter().zip(naive_power(&frame)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(matches!(dft_power(&[0.0; 100]), Err(Error::Config(_))));
    }

    #[test]
    fn convolver_matches_direct_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // single block, several blocks with a short tail, exact fit
        for &(len, k) in &[(37, 9), (300, 9), (130, 5), (64, 64), (1000, 33)] {
            let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h: Vec<Complex64> = (0..k)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let conv = FftConvolver::new(&x, k).unwrap();
            let y = conv.convolve_valid(&h);
            assert_eq!(y.len(), len - k + 1);
            for (i, yi) in y.iter().enumerate() {
                let direct: Complex64 = (0..k).map(|m| h[m] * x[i + k - 1 - m]).sum();
                assert!((yi - direct).norm() < 1e-11, "len {len} k {k} i {i}");
            }
            let g: Vec<Complex64> = (0..len - k + 1)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let c = conv.correlate_valid(&g);
            assert_eq!(c.len(), k);
            for (j, cj) in c.iter().enumerate() {
                let direct: Complex64 = (0..len - k + 1).map(|i| g[i] * x[i + j]).sum();
                assert!((cj - direct).norm() < 1e-10, "len {len} k {k} j {j}");
            }
        }
    }

    #[test]
    fn convolver_rejects_long_kernel() {
        assert!(FftConvolver::new(&[1.0; 4], 5).is_err());
        assert!(FftConvolver::new(&[1.0; 4], 0).is_err());
    }
}
