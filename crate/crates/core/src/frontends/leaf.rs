//! Learnable Gabor band-pass filters, per-band Gaussian low-pass pooling and
//! PCEN compression.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use super::pcen::{pcen_backward, pcen_forward_with_state, PcenGrads, PcenParams};
use super::pooling::{pool, pool_grad_signal, pool_grad_window, waveform_frames};
use super::FeatureMap;
use crate::dsp::{FftConvolver, Waveform};
use crate::gabor::{gabor_wavelet_1d, gaussian_lowpass_1d, Gabor1dParams, GaussianLowpassParams};
use crate::{Error, Grid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LeafParams {
    pub gabor: Vec<Gabor1dParams>,
    pub lowpass: Vec<GaussianLowpassParams>,
    pub pcen: PcenParams,
}

impl LeafParams {
    pub fn n_filters(&self) -> usize {
        self.gabor.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.gabor.is_empty() || self.lowpass.len() != self.gabor.len() {
            return Err(Error::Shape(format!(
                "{} Gabor filters with {} low-pass filters",
                self.gabor.len(),
                self.lowpass.len()
            )));
        }
        for g in &self.gabor {
            g.validate()?;
        }
        self.pcen.validate(self.gabor.len())
    }
}

pub struct LeafCache {
    conv: FftConvolver,
    filtered: Vec<Vec<Complex64>>,
    energies: Grid,
    smoothed: Grid,
}

/// Low-passed squared-modulus Gabor responses before compression,
/// `[1 × frames × filters]`.
pub fn leaf_band_energies(
    w: &Waveform,
    gabor: &[Gabor1dParams],
    lowpass: &[GaussianLowpassParams],
    half_len: usize,
    stride: usize,
) -> Result<FeatureMap> {
    let (energies, _) = band_energies(w, gabor, lowpass, half_len, stride, false)?;
    let n = energies.cols();
    let hop_s = stride as f64 / f64::from(w.sample_rate_hz);
    FeatureMap::new(1, energies.rows(), n, energies.into_vec(), hop_s)
}

/// Band energies, plus the convolver and filter outputs when `keep` is set.
type BandState = (Grid, Option<(FftConvolver, Vec<Vec<Complex64>>)>);

fn band_energies(
    w: &Waveform,
    gabor: &[Gabor1dParams],
    lowpass: &[GaussianLowpassParams],
    half_len: usize,
    stride: usize,
    keep: bool,
) -> Result<BandState> {
    if gabor.is_empty() || gabor.len() != lowpass.len() {
        return Err(Error::Shape("Gabor and low-pass banks must be non-empty and equal".into()));
    }
    let k = 2 * half_len + 1;
    let n_frames = waveform_frames(w.len(), k, stride)?;
    let conv = FftConvolver::new(&w.samples, k)?;
    let n = gabor.len();
    let mut energies = Grid::zeros(n_frames, n);
    let mut filtered = Vec::with_capacity(if keep { n } else { 0 });
    let mut power = Vec::new();
    for f in 0..n {
        let taps = gabor_wavelet_1d(&gabor[f], half_len)?;
        let window = gaussian_lowpass_1d(&lowpass[f], half_len)?;
        let y = conv.convolve_valid(&taps);
        power.clear();
        power.extend(y.iter().map(|c| c.norm_sqr()));
        for (j, e) in pool(&power, &window, stride, n_frames).into_iter().enumerate() {
            energies[(j, f)] = e;
        }
        if keep {
            filtered.push(y);
        }
    }
    Ok((energies, keep.then_some((conv, filtered))))
}

pub fn leaf_forward(w: &Waveform, p: &LeafParams, half_len: usize, stride: usize) -> Result<FeatureMap> {
    p.validate()?;
    let (energies, _) = band_energies(w, &p.gabor, &p.lowpass, half_len, stride, false)?;
    let (out, _) = pcen_forward_with_state(&energies, &p.pcen)?;
    let hop_s = stride as f64 / f64::from(w.sample_rate_hz);
    FeatureMap::new(1, out.rows(), out.cols(), out.into_vec(), hop_s)
}

pub(crate) fn leaf_forward_cached(
    w: &Waveform,
    p: &LeafParams,
    half_len: usize,
    stride: usize,
) -> Result<(FeatureMap, LeafCache)> {
    p.validate()?;
    let (energies, kept) = band_energies(w, &p.gabor, &p.lowpass, half_len, stride, true)?;
    let (conv, filtered) = kept.expect("kept on request");
    let (out, smoothed) = pcen_forward_with_state(&energies, &p.pcen)?;
    let hop_s = stride as f64 / f64::from(w.sample_rate_hz);
    let fm = FeatureMap::new(1, out.rows(), out.cols(), out.into_vec(), hop_s)?;
    Ok((
        fm,
        LeafCache {
            conv,
            filtered,
            energies,
            smoothed,
        },
    ))
}

/// Gradients with respect to the constrained LEAF values.
#[derive(Debug, Clone)]
pub struct LeafGrads {
    pub eta: Vec<f64>,
    pub sigma_bw: Vec<f64>,
    pub sigma_lp: Vec<f64>,
    pub pcen: PcenGrads,
}

pub(crate) fn leaf_backward(
    p: &LeafParams,
    half_len: usize,
    stride: usize,
    cache: &LeafCache,
    upstream: &FeatureMap,
) -> Result<LeafGrads> {
    let n = p.n_filters();
    if upstream.channels != 1 || upstream.n_bands != n || upstream.n_frames != cache.energies.rows() {
        return Err(Error::Shape("LEAF upstream gradient does not match the forward pass".into()));
    }
    let up = Grid::from_vec(upstream.n_frames, n, upstream.values.clone())?;
    let pcen = pcen_backward(&cache.energies, &cache.smoothed, &p.pcen, &up)?;
    let k = 2 * half_len + 1;
    let mut g = LeafGrads {
        eta: vec![0.0; n],
        sigma_bw: vec![0.0; n],
        sigma_lp: vec![0.0; n],
        pcen,
    };
    for f in 0..n {
        let g_energy: Vec<f64> = (0..upstream.n_frames).map(|j| g.pcen.input[(j, f)]).collect();
        let window = gaussian_lowpass_1d(&p.lowpass[f], half_len)?;
        let sigma_lp = p.lowpass[f].sigma_lp;
        let y = &cache.filtered[f];
        let power: Vec<f64> = y.iter().map(|c| c.norm_sqr()).collect();
        let g_window = pool_grad_window(&g_energy, &power, stride, k);
        g.sigma_lp[f] = g_window
            .iter()
            .zip(&window)
            .enumerate()
            .map(|(m, (gw, w))| {
                let t = m as f64 - half_len as f64;
                gw * w * (t * t / sigma_lp.powi(3) - 1.0 / sigma_lp)
            })
            .sum();

        let g_power = pool_grad_signal(&g_energy, &window, stride, y.len());
        let g_y: Vec<Complex64> = g_power.iter().zip(y).map(|(gp, yc)| 2.0 * gp * yc).collect();
        let corr = cache.conv.correlate_valid(&g_y);
        let taps = gabor_wavelet_1d(&p.gabor[f], half_len)?;
        let sigma = p.gabor[f].sigma_bw;
        let (mut d_eta, mut d_sigma) = (0.0, 0.0);
        for (m, phi) in taps.iter().enumerate() {
            let t = m as f64 - half_len as f64;
            // corr.re / corr.im hold dL/dφ_re and dL/dφ_im at this tap.
            let gphi = corr[k - 1 - m];
            d_eta += 2.0 * PI * t * (-gphi.re * phi.im + gphi.im * phi.re);
            d_sigma += (gphi.re * phi.re + gphi.im * phi.im) * (t * t / sigma.powi(3) - 1.0 / sigma);
        }
        g.eta[f] = d_eta;
        g.sigma_bw[f] = d_sigma;
    }
    Ok(g)
}
