//! Bank of 2-D spectro-temporal Gabor filters convolved with a mel spectrogram.

use std::f64::consts::PI;

use super::FeatureMap;
use crate::dsp::MelSpectrogram;
use crate::gabor::{gabor_envelope_2d, gabor_phase_2d, Strf2dFilterParams};
use crate::linalg::{gemm, MatRef};
use crate::{Error, Grid, Result};

fn kernel_dims(half_t: usize, half_f: usize) -> (usize, usize) {
    (2 * half_t + 1, 2 * half_f + 1)
}

/// Real parts of every filter's kernel, `[n_filters × kt·kf]`.
pub fn strf_kernels(
    filters: &[Strf2dFilterParams],
    half_t: usize,
    half_f: usize,
) -> Result<Vec<f64>> {
    let (kt, kf) = kernel_dims(half_t, half_f);
    let mut out = Vec::with_capacity(filters.len() * kt * kf);
    for p in filters {
        p.validate()?;
        for a in 0..kt {
            for b in 0..kf {
                let (t, f) = (a as f64 - half_t as f64, b as f64 - half_f as f64);
                out.push(gabor_envelope_2d(p, t, f) * gabor_phase_2d(p, t, f).cos());
            }
        }
    }
    Ok(out)
}

/// Rows are kernel offsets `(a, b)`, columns output cells `(t, f)`;
/// entry is `E(t − a, f − b)` with zero padding.
fn im2col(e: &Grid, half_t: usize, half_f: usize) -> Vec<f64> {
    let (n_t, n_f) = e.shape();
    let (kt, kf) = kernel_dims(half_t, half_f);
    let cells = n_t * n_f;
    let mut col = vec![0.0; kt * kf * cells];
    for a in 0..kt {
        let da = a as isize - half_t as isize;
        for b in 0..kf {
            let db = b as isize - half_f as isize;
            let row = &mut col[(a * kf + b) * cells..(a * kf + b + 1) * cells];
            for t in 0..n_t {
                let src_t = t as isize - da;
                if src_t < 0 || src_t >= n_t as isize {
                    continue;
                }
                let src = e.row(src_t as usize);
                let dst = &mut row[t * n_f..(t + 1) * n_f];
                for (f, d) in dst.iter_mut().enumerate() {
                    let src_f = f as isize - db;
                    if src_f >= 0 && src_f < n_f as isize {
                        *d = src[src_f as usize];
                    }
                }
            }
        }
    }
    col
}

fn check(e: &Grid, filters: &[Strf2dFilterParams], half_t: usize, half_f: usize) -> Result<()> {
    if e.rows() == 0 || e.cols() == 0 {
        return Err(Error::InputTooShort("empty STRF input".into()));
    }
    if filters.is_empty() {
        return Err(Error::Config("STRF needs at least one filter".into()));
    }
    if half_t == 0 || half_f == 0 {
        return Err(Error::Config("STRF kernel half-sizes must be at least 1".into()));
    }
    Ok(())
}

/// Same-size zero-padded 2-D convolution of `E` with each filter's real
/// kernel; channel `k` holds filter `k`.
pub fn strf_forward(
    e: &MelSpectrogram,
    filters: &[Strf2dFilterParams],
    half_t: usize,
    half_f: usize,
) -> Result<FeatureMap> {
    let values = strf_forward_grid(&e.values, filters, half_t, half_f)?;
    FeatureMap::new(filters.len(), e.n_frames(), e.n_mels(), values, e.hop_s)
}

pub(crate) fn strf_forward_grid(
    e: &Grid,
    filters: &[Strf2dFilterParams],
    half_t: usize,
    half_f: usize,
) -> Result<Vec<f64>> {
    check(e, filters, half_t, half_f)?;
    let (kt, kf) = kernel_dims(half_t, half_f);
    let kernels = strf_kernels(filters, half_t, half_f)?;
    let col = im2col(e, half_t, half_f);
    let cells = e.rows() * e.cols();
    let mut out = vec![0.0; filters.len() * cells];
    gemm(
        1.0,
        MatRef::row_major(&kernels, filters.len(), kt * kf),
        MatRef::row_major(&col, kt * kf, cells),
        0.0,
        &mut out,
    );
    Ok(out)
}

/// Gradient of `Σ upstream · Z` with respect to `(F, γ, σ_t, σ_f)` of each filter.
pub fn strf_backward(
    e: &Grid,
    filters: &[Strf2dFilterParams],
    half_t: usize,
    half_f: usize,
    upstream: &[f64],
) -> Result<Vec<[f64; 4]>> {
    check(e, filters, half_t, half_f)?;
    let cells = e.rows() * e.cols();
    if upstream.len() != filters.len() * cells {
        return Err(Error::Shape(format!(
            "STRF upstream has {} values, expected {}",
            upstream.len(),
            filters.len() * cells
        )));
    }
    let (kt, kf) = kernel_dims(half_t, half_f);
    let col = im2col(e, half_t, half_f);
    let mut g_kernel = vec![0.0; filters.len() * kt * kf];
    gemm(
        1.0,
        MatRef::row_major(upstream, filters.len(), cells),
        MatRef::row_major(&col, kt * kf, cells).t(),
        0.0,
        &mut g_kernel,
    );
    Ok(filters
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let (sin_g, cos_g) = p.gamma.sin_cos();
            let mut g = [0.0; 4];
            for a in 0..kt {
                for b in 0..kf {
                    let gk = g_kernel[k * kt * kf + a * kf + b];
                    let (t, f) = (a as f64 - half_t as f64, b as f64 - half_f as f64);
                    let w = gabor_envelope_2d(p, t, f);
                    let (sin_ph, cos_ph) = gabor_phase_2d(p, t, f).sin_cos();
                    let value = w * cos_ph;
                    let proj = t * cos_g + f * sin_g;
                    let dproj = -t * sin_g + f * cos_g;
                    g[0] += gk * (-w * sin_ph * 2.0 * PI * proj);
                    g[1] += gk * (-w * sin_ph * 2.0 * PI * p.freq * dproj);
                    g[2] += gk * value * (t * t / p.sigma_t.powi(3) - 1.0 / p.sigma_t);
                    g[3] += gk * value * (f * f / p.sigma_f.powi(3) - 1.0 / p.sigma_f);
                }
            }
            g
        })
        .collect())
}
