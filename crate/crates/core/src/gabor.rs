//! Gabor and Gaussian kernels shared by the STRF, TD and LEAF frontends.

use std::f64::consts::PI;

use rand::Rng;
use rustfft::num_complex::Complex64;

use crate::dsp::mel_points;
use crate::{Error, Grid, Result};

/// One spectro-temporal 2-D Gabor filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Strf2dFilterParams {
    /// Modulation frequency, cycles per grid unit.
    pub freq: f64,
    /// Orientation in radians; only meaningful modulo π.
    pub gamma: f64,
    /// Temporal envelope width, frames.
    pub sigma_t: f64,
    /// Spectral envelope width, mel bands.
    pub sigma_f: f64,
}

/// Complex 1-D Gabor band-pass filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gabor1dParams {
    /// Center frequency, cycles per sample.
    pub eta: f64,
    /// Envelope width, samples.
    pub sigma_bw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianLowpassParams {
    /// Impulse-response width, samples.
    pub sigma_lp: f64,
}

fn check_sigma(name: &str, sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Param(format!("{name} must be positive and finite, got {sigma}")))
    }
}

fn check_half(name: &str, half: usize) -> Result<()> {
    if half >= 1 {
        Ok(())
    } else {
        Err(Error::Param(format!("{name} must be at least 1")))
    }
}

impl Strf2dFilterParams {
    pub fn validate(&self) -> Result<()> {
        check_sigma("sigma_t", self.sigma_t)?;
        check_sigma("sigma_f", self.sigma_f)?;
        if !(self.freq.is_finite() && self.gamma.is_finite()) {
            return Err(Error::Param("STRF frequency and orientation must be finite".into()));
        }
        Ok(())
    }
}

impl Gabor1dParams {
    pub fn validate(&self) -> Result<()> {
        check_sigma("sigma_bw", self.sigma_bw)?;
        if !(self.eta > 0.0 && self.eta < 0.5) {
            return Err(Error::Param(format!(
                "center frequency {} outside (0, 0.5) cycles/sample",
                self.eta
            )));
        }
        Ok(())
    }
}

/// Gaussian envelope `1/(2π σ_t σ_f) · exp(−(t²/σ_t² + f²/σ_f²)/2)`.
pub fn gabor_envelope_2d(p: &Strf2dFilterParams, t: f64, f: f64) -> f64 {
    let norm = 1.0 / (2.0 * PI * p.sigma_t * p.sigma_f);
    norm * (-0.5 * (t * t / (p.sigma_t * p.sigma_t) + f * f / (p.sigma_f * p.sigma_f))).exp()
}

/// Phase argument `2π F (t cos γ + f sin γ)` of the 2-D carrier.
pub fn gabor_phase_2d(p: &Strf2dFilterParams, t: f64, f: f64) -> f64 {
    2.0 * PI * p.freq * (t * p.gamma.cos() + f * p.gamma.sin())
}

/// Complex 2-D Gabor kernel on integer offsets, rows indexed by
/// `t + half_t`, columns by `f + half_f`.
pub fn gabor_kernel_2d(
    p: &Strf2dFilterParams,
    half_t: usize,
    half_f: usize,
) -> Result<Grid<Complex64>> {
    p.validate()?;
    check_half("half_t", half_t)?;
    check_half("half_f", half_f)?;
    Ok(Grid::from_fn(2 * half_t + 1, 2 * half_f + 1, |r, c| {
        let t = r as f64 - half_t as f64;
        let f = c as f64 - half_f as f64;
        Complex64::from_polar(gabor_envelope_2d(p, t, f), gabor_phase_2d(p, t, f))
    }))
}

/// Complex Gabor wavelet on `t ∈ [−half_len, half_len]`.
pub fn gabor_wavelet_1d(p: &Gabor1dParams, half_len: usize) -> Result<Vec<Complex64>> {
    check_sigma("sigma_bw", p.sigma_bw)?;
    check_half("half_len", half_len)?;
    let norm = 1.0 / ((2.0 * PI).sqrt() * p.sigma_bw);
    Ok((0..2 * half_len + 1)
        .map(|i| {
            let t = i as f64 - half_len as f64;
            let env = norm * (-t * t / (2.0 * p.sigma_bw * p.sigma_bw)).exp();
            Complex64::from_polar(env, 2.0 * PI * p.eta * t)
        })
        .collect())
}

/// Normalized Gaussian impulse response on `t ∈ [−half_len, half_len]`.
pub fn gaussian_lowpass_1d(p: &GaussianLowpassParams, half_len: usize) -> Result<Vec<f64>> {
    check_sigma("sigma_lp", p.sigma_lp)?;
    check_half("half_len", half_len)?;
    let norm = 1.0 / ((2.0 * PI).sqrt() * p.sigma_lp);
    Ok((0..2 * half_len + 1)
        .map(|i| {
            let t = i as f64 - half_len as f64;
            norm * (-t * t / (2.0 * p.sigma_lp * p.sigma_lp)).exp()
        })
        .collect())
}

/// Support half-length covering ±3σ, capped at `max_half`.
pub fn support_half_len(sigma: f64, max_half: usize) -> usize {
    ((3.0 * sigma).ceil() as usize).clamp(1, max_half.max(1))
}

/// Gabor parameters approximating a mel filterbank.
///
/// Centers follow [`mel_points`]; each envelope width is set from the
/// triangle's full width at half maximum as `σ = √(2 ln 2) / (2π · fwhm)`
/// with `fwhm` in cycles per sample.
pub fn init_mel_gabor_bank(
    n_filters: usize,
    f_min_hz: f64,
    f_max_hz: f64,
    sample_rate_hz: u32,
    half_len: usize,
) -> Result<Vec<Gabor1dParams>> {
    if n_filters == 0 {
        return Err(Error::Config("need at least one filter".into()));
    }
    check_half("half_len", half_len)?;
    let sr = f64::from(sample_rate_hz);
    if !(f_min_hz > 0.0 && f_min_hz < f_max_hz && f_max_hz <= sr / 2.0) {
        return Err(Error::Config(format!(
            "band [{f_min_hz}, {f_max_hz}] Hz invalid at {sample_rate_hz} Hz"
        )));
    }
    let points = mel_points(n_filters, f_min_hz, f_max_hz);
    let bank: Vec<Gabor1dParams> = (0..n_filters)
        .map(|n| {
            let fwhm = (points[n + 2] - points[n]) / 2.0 / sr;
            Gabor1dParams {
                eta: points[n + 1] / sr,
                sigma_bw: (2.0 * 2f64.ln()).sqrt() / (2.0 * PI * fwhm),
            }
        })
        .collect();
    if let Some(p) = bank.iter().find(|p| 3.0 * p.sigma_bw > half_len as f64) {
        log::warn!(
            "Gabor envelope sigma {:.1} exceeds a third of the kernel half-length {half_len}",
            p.sigma_bw
        );
    }
    Ok(bank)
}

/// Random STRF initialization: F ~ U(0.05, 0.45), γ ~ U(0, π), σ_t, σ_f ~ U(1, 4).
pub fn init_strf_bank<R: Rng + ?Sized>(n_filters: usize, rng: &mut R) -> Vec<Strf2dFilterParams> {
    (0..n_filters)
        .map(|_| Strf2dFilterParams {
            freq: rng.gen_range(0.05..0.45),
            gamma: rng.gen_range(0.0..PI),
            sigma_t: rng.gen_range(1.0..4.0),
            sigma_f: rng.gen_range(1.0..4.0),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::dft_power;
    use proptest::prelude::*;

    fn strf(freq: f64, gamma: f64, sigma_t: f64, sigma_f: f64) -> Strf2dFilterParams {
        Strf2dFilterParams {
            freq,
            gamma,
            sigma_t,
            sigma_f,
        }
    }

    fn peak_bin(kernel: &[Complex64], fft_size: usize) -> usize {
        // Complex spectrum via two real transforms is overkill; a direct DFT
        // over the one-sided range suffices for these short kernels.
        let mut best = (0, f64::MIN);
        for k in 0..fft_size / 2 {
            let mut acc = Complex64::new(0.0, 0.0);
            for (t, &h) in kernel.iter().enumerate() {
                acc += h * Complex64::from_polar(1.0, -2.0 * PI * (k * t) as f64 / fft_size as f64);
            }
            if acc.norm() > best.1 {
                best = (k, acc.norm());
            }
        }
        best.0
    }

    #[test]
    fn origin_value_is_envelope_peak() {
        let p = strf(0.3, 0.7, 2.0, 3.0);
        let g = gabor_kernel_2d(&p, 4, 4).unwrap();
        let c = g[(4, 4)];
        assert_eq!(c.im, 0.0);
        assert!((c.re - 1.0 / (2.0 * PI * 6.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_orientation_has_frequency_independent_phase() {
        let g = gabor_kernel_2d(&strf(0.2, 0.0, 2.0, 2.0), 5, 5).unwrap();
        for r in 0..11 {
            for c in 0..11 {
                let ratio = g[(r, c)] / g[(r, 5)];
                assert!(ratio.re > 0.0 && ratio.im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_direct_formula() {
        let p = strf(0.25, 0.0, 2.0, 2.0);
        let g = gabor_kernel_2d(&p, 5, 5).unwrap();
        for r in 0..11 {
            for c in 0..11 {
                let (t, f) = (r as f64 - 5.0, c as f64 - 5.0);
                let w = (-(t * t / 4.0 + f * f / 4.0) / 2.0).exp() / (2.0 * PI * 4.0);
                let arg = 2.0 * PI * 0.25 * t;
                let expect = Complex64::new(w * arg.cos(), w * arg.sin());
                assert!((g[(r, c)] - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_frequency_is_pure_gaussian() {
        let g = gabor_kernel_2d(&strf(0.0, 1.1, 1.5, 2.5), 5, 5).unwrap();
        assert!(g.as_slice().iter().all(|c| c.im == 0.0));
    }

    #[test]
    fn rejects_bad_sigma() {
        assert!(gabor_kernel_2d(&strf(0.1, 0.0, 0.0, 1.0), 2, 2).is_err());
        let p = Gabor1dParams { eta: 0.1, sigma_bw: -1.0 };
        assert!(gabor_wavelet_1d(&p, 4).is_err());
        assert!(gaussian_lowpass_1d(&GaussianLowpassParams { sigma_lp: 0.0 }, 4).is_err());
    }

    #[test]
    fn wavelet_center_and_symmetry() {
        let p = Gabor1dParams { eta: 0.13, sigma_bw: 4.0 };
        let k = gabor_wavelet_1d(&p, 12).unwrap();
        assert_eq!(k[12].im, 0.0);
        assert!((k[12].re - 1.0 / ((2.0 * PI).sqrt() * 4.0)).abs() < 1e-15);
        for t in 0..12 {
            assert!((k[t].norm() - k[24 - t].norm()).abs() < 1e-15);
        }
    }

    #[test]
    fn wavelet_response_peaks_at_eta() {
        let p = Gabor1dParams { eta: 0.1, sigma_bw: 20.0 };
        let k = gabor_wavelet_1d(&p, 200).unwrap();
        let n = 512;
        let peak = peak_bin(&k, n);
        assert!((peak as f64 - 0.1 * n as f64).abs() <= 1.0);
    }

    #[test]
    fn lowpass_properties() {
        let k = gaussian_lowpass_1d(&GaussianLowpassParams { sigma_lp: 8.0 }, 40).unwrap();
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        for t in 0..40 {
            assert_eq!(k[t], k[80 - t]);
        }
        let flat = gaussian_lowpass_1d(&GaussianLowpassParams { sigma_lp: 1e4 }, 10).unwrap();
        let (mx, mn) = flat
            .iter()
            .fold((f64::MIN, f64::MAX), |(a, b), &v| (a.max(v), b.min(v)));
        assert!(mx / mn < 1.0 + 1e-6);
    }

    #[test]
    fn mel_bank_single_filter_at_midpoint() {
        let bank = init_mel_gabor_bank(1, 500.0, 16000.0, 44100, 551).unwrap();
        assert!((bank[0].eta - 3776.606 / 44100.0).abs() < 1e-7);
    }

    #[test]
    fn default_bank_is_increasing_and_in_band() {
        let bank = init_mel_gabor_bank(41, 500.0, 16000.0, 44100, 551).unwrap();
        assert_eq!(bank.len(), 41);
        assert!(bank.windows(2).all(|w| w[0].eta < w[1].eta));
        assert!(bank
            .iter()
            .all(|p| p.eta > 500.0 / 44100.0 && p.eta < 16000.0 / 44100.0));
    }

    #[test]
    fn every_mel_gabor_peaks_within_a_bin() {
        let half = 551;
        let bank = init_mel_gabor_bank(40, 500.0, 16000.0, 44100, half).unwrap();
        let n = 2048;
        for p in &bank {
            let k = gabor_wavelet_1d(p, half).unwrap();
            // The real part's power spectrum is symmetric, so a real FFT of it
            // locates the same positive-frequency peak.
            let re: Vec<f64> = k.iter().map(|c| c.re).collect();
            let mut padded = re.clone();
            padded.resize(n, 0.0);
            let power = dft_power(&padded).unwrap();
            let peak = (0..power.len()).max_by(|&a, &b| power[a].total_cmp(&power[b])).unwrap();
            assert!((peak as f64 - p.eta * n as f64).abs() <= 1.0, "eta {}", p.eta);
            let cpeak = peak_bin(&k, n);
            assert!((cpeak as f64 - p.eta * n as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn support_rule() {
        assert_eq!(support_half_len(2.1, 100), 7);
        assert_eq!(support_half_len(200.0, 100), 100);
    }

    proptest! {
        #[test]
        fn rotating_by_pi_conjugates(
            freq in 0.0..0.5f64, gamma in 0.0..3.2f64,
            st in 0.3..6.0f64, sf in 0.3..6.0f64,
        ) {
            let a = gabor_kernel_2d(&strf(freq, gamma, st, sf), 4, 4).unwrap();
            let b = gabor_kernel_2d(&strf(freq, gamma + PI, st, sf), 4, 4).unwrap();
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x.norm() - y.norm()).abs() < 1e-12);
                prop_assert!((x - y.conj()).norm() < 1e-9);
            }
        }

        #[test]
        fn kernels_finite_for_wide_sigma_range(
            ls in -3.0..3.0f64, lf in -3.0..3.0f64, eta in 0.001..0.499f64,
        ) {
            let p = strf(0.2, 0.5, 10f64.powf(ls), 10f64.powf(lf));
            prop_assert!(gabor_kernel_2d(&p, 5, 5).unwrap().as_slice().iter()
                .all(|c| c.re.is_finite() && c.im.is_finite()));
            let w = gabor_wavelet_1d(&Gabor1dParams { eta, sigma_bw: 10f64.powf(ls) }, 20).unwrap();
            prop_assert!(w.iter().all(|c| c.re.is_finite() && c.im.is_finite()));
            let l = gaussian_lowpass_1d(&GaussianLowpassParams { sigma_lp: 10f64.powf(lf) }, 20).unwrap();
            prop_assert!(l.iter().all(|v| v.is_finite()));
        }
    }
}
