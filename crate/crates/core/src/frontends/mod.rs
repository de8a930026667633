//! The seven frontends behind one interface.
//!
//! Fixed: `spect` (power STFT), `mel`, `logmel`. Learnable: `strf`
//! (2-D Gabor bank on the mel spectrogram), `td` (FIR filterbank on the
//! waveform), `pcen` (on the mel spectrogram) and `leaf` (Gabor filterbank,
//! Gaussian pooling and PCEN on the waveform).
//!
//! Learnable values are stored unconstrained in [`ParamTensor`]s: positive
//! widths as logarithms, `r` and `s` through a sigmoid, LEAF center
//! frequencies as `0.5·sigmoid(θ)`. [`Frontend::backward`] returns gradients
//! with respect to those stored values, in [`Frontend::params`] order.

pub mod leaf;
pub mod pcen;
mod pooling;
pub mod strf;
pub mod td;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use leaf::{leaf_band_energies, leaf_forward, LeafParams};
pub use pcen::{pcen_backward, pcen_forward, pcen_smoother, PcenConfig, PcenGrads, PcenLayer, PcenParams, Smoothing};
pub use pooling::{odd_kernel_len, waveform_frames};
pub use strf::{strf_backward, strf_forward, strf_kernels};
pub use td::{td_forward, TdFilterbank};

use crate::dsp::{
    apply_mel, build_mel_filterbank, log_compress, power_spectrogram, MelFilterbank, MelSpectrogram,
    PowerSpectrogram, StftLayout, Waveform,
};
use crate::gabor::{init_mel_gabor_bank, init_strf_bank, Gabor1dParams, GaussianLowpassParams, Strf2dFilterParams};
use crate::learning::ParamTensor;
use crate::{Error, Grid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FrontendKind {
    Spect,
    Mel,
    Logmel,
    Strf,
    Td,
    Pcen,
    Leaf,
}

impl FrontendKind {
    pub const ALL: [FrontendKind; 7] = [
        FrontendKind::Spect,
        FrontendKind::Mel,
        FrontendKind::Logmel,
        FrontendKind::Strf,
        FrontendKind::Td,
        FrontendKind::Pcen,
        FrontendKind::Leaf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FrontendKind::Spect => "spect",
            FrontendKind::Mel => "mel",
            FrontendKind::Logmel => "logmel",
            FrontendKind::Strf => "strf",
            FrontendKind::Td => "td",
            FrontendKind::Pcen => "pcen",
            FrontendKind::Leaf => "leaf",
        }
    }

    pub fn is_learnable(self) -> bool {
        matches!(
            self,
            FrontendKind::Strf | FrontendKind::Td | FrontendKind::Pcen | FrontendKind::Leaf
        )
    }

    /// Stable numeric code used in feature files.
    pub fn code(self) -> u32 {
        Self::ALL.iter().position(|&k| k == self).unwrap() as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for FrontendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FrontendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown frontend '{s}'")))
    }
}

/// `[channels × n_frames × n_bands]`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub n_frames: usize,
    pub n_bands: usize,
    pub values: Vec<f64>,
    pub hop_s: f64,
}

impl FeatureMap {
    pub fn new(channels: usize, n_frames: usize, n_bands: usize, values: Vec<f64>, hop_s: f64) -> Result<Self> {
        if values.len() != channels * n_frames * n_bands {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{n_frames}x{n_bands} feature map",
                values.len()
            )));
        }
        Ok(Self {
            channels,
            n_frames,
            n_bands,
            values,
            hop_s,
        })
    }

    pub fn zeros(channels: usize, n_frames: usize, n_bands: usize, hop_s: f64) -> Self {
        Self {
            channels,
            n_frames,
            n_bands,
            values: vec![0.0; channels * n_frames * n_bands],
            hop_s,
        }
    }

    fn from_grid(g: Grid, hop_s: f64) -> Self {
        let (rows, cols) = g.shape();
        Self {
            channels: 1,
            n_frames: rows,
            n_bands: cols,
            values: g.into_vec(),
            hop_s,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.n_frames, self.n_bands)
    }

    pub fn get(&self, c: usize, t: usize, b: usize) -> f64 {
        self.values[(c * self.n_frames + t) * self.n_bands + b]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.n_frames * self.n_bands;
        &self.values[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Everything needed to build any frontend for a given sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontendConfig {
    pub win_s: f64,
    pub overlap: f64,
    pub n_mels: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub log_eps: f64,
    /// TD and LEAF filter count.
    pub n_filters: usize,
    /// TD and LEAF kernel duration.
    pub kernel_s: f64,
    pub strf_filters: usize,
    pub strf_half_t: usize,
    pub strf_half_f: usize,
    pub pcen: PcenConfig,
    /// Initial LEAF low-pass width as a fraction of the kernel half-length.
    pub leaf_lowpass_frac: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            win_s: 0.01,
            overlap: 0.75,
            n_mels: 41,
            f_min_hz: 500.0,
            f_max_hz: 16000.0,
            log_eps: 1e-10,
            n_filters: 40,
            kernel_s: 0.025,
            strf_filters: 64,
            strf_half_t: 5,
            strf_half_f: 5,
            pcen: PcenConfig::default(),
            leaf_lowpass_frac: 0.4,
        }
    }
}

/// STFT plus mel filterbank for one sample rate.
#[derive(Debug, Clone)]
pub struct MelStage {
    sample_rate_hz: u32,
    win_s: f64,
    overlap: f64,
    layout: StftLayout,
    filterbank: MelFilterbank,
}

impl MelStage {
    pub fn new(cfg: &FrontendConfig, sample_rate_hz: u32) -> Result<Self> {
        let layout = StftLayout::new(sample_rate_hz, cfg.win_s, cfg.overlap)?;
        let bin_hz = f64::from(sample_rate_hz) / layout.fft_size as f64;
        let filterbank = build_mel_filterbank(cfg.n_mels, cfg.f_min_hz, cfg.f_max_hz, layout.n_bins(), bin_hz)?;
        Ok(Self {
            sample_rate_hz,
            win_s: cfg.win_s,
            overlap: cfg.overlap,
            layout,
            filterbank,
        })
    }

    pub fn layout(&self) -> StftLayout {
        self.layout
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    fn check_rate(&self, w: &Waveform) -> Result<()> {
        if w.sample_rate_hz != self.sample_rate_hz {
            return Err(Error::Config(format!(
                "frontend built for {} Hz, got {} Hz audio",
                self.sample_rate_hz, w.sample_rate_hz
            )));
        }
        Ok(())
    }

    pub fn spectrogram(&self, w: &Waveform) -> Result<PowerSpectrogram> {
        self.check_rate(w)?;
        power_spectrogram(w, self.win_s, self.overlap)
    }

    pub fn mel(&self, w: &Waveform) -> Result<MelSpectrogram> {
        apply_mel(&self.spectrogram(w)?, &self.filterbank)
    }
}

#[derive(Debug, Clone)]
pub struct StrfFrontend {
    mel: MelStage,
    half_t: usize,
    half_f: usize,
    params: Vec<ParamTensor>,
}

impl StrfFrontend {
    pub fn filters(&self) -> Vec<Strf2dFilterParams> {
        let p = &self.params;
        (0..p[0].len())
            .map(|k| Strf2dFilterParams {
                freq: p[0].value[k],
                gamma: p[1].value[k],
                sigma_t: p[2].value[k].exp(),
                sigma_f: p[3].value[k].exp(),
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TdFrontend {
    sample_rate_hz: u32,
    window: Vec<f64>,
    stride: usize,
    params: Vec<ParamTensor>,
}

impl TdFrontend {
    pub fn filterbank(&self) -> TdFilterbank {
        let k = self.window.len();
        TdFilterbank {
            filters: Grid::from_vec(self.params[0].len() / k, k, self.params[0].value.clone())
                .expect("tap tensor matches its shape"),
            window: self.window.clone(),
            stride: self.stride,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PcenFrontend {
    mel: MelStage,
    layer: PcenLayer,
    params: Vec<ParamTensor>,
}

impl PcenFrontend {
    pub fn pcen_params(&self) -> PcenParams {
        self.layer.constrained(&self.params)
    }
}

#[derive(Debug, Clone)]
pub struct LeafFrontend {
    sample_rate_hz: u32,
    half_len: usize,
    stride: usize,
    layer: PcenLayer,
    params: Vec<ParamTensor>,
}

impl LeafFrontend {
    pub fn leaf_params(&self) -> LeafParams {
        let p = &self.params;
        LeafParams {
            gabor: p[0]
                .value
                .iter()
                .zip(&p[1].value)
                .map(|(&eta, &ls)| Gabor1dParams {
                    eta: 0.5 * pcen::sigmoid(eta),
                    sigma_bw: ls.exp(),
                })
                .collect(),
            lowpass: p[2]
                .value
                .iter()
                .map(|&ls| GaussianLowpassParams { sigma_lp: ls.exp() })
                .collect(),
            pcen: self.layer.constrained(&p[3..]),
        }
    }

    pub fn half_len(&self) -> usize {
        self.half_len
    }

    pub fn stride(&self) -> usize {
        self.stride
    }
}

#[derive(Debug, Clone)]
pub enum Frontend {
    Spect(MelStage),
    Mel(MelStage),
    Logmel { mel: MelStage, floor_eps: f64 },
    Strf(StrfFrontend),
    Td(TdFrontend),
    Pcen(PcenFrontend),
    Leaf(LeafFrontend),
}

/// Activations a learnable frontend keeps between forward and backward.
pub enum ForwardCache {
    Fixed,
    Strf { mel: Grid },
    Td(td::TdCache),
    Pcen { mel: Grid, smoothed: Grid },
    Leaf(leaf::LeafCache),
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl Frontend {
    /// Builds `kind` at its initial parameters; `seed` drives random STRF init.
    pub fn new(kind: FrontendKind, cfg: &FrontendConfig, sample_rate_hz: u32, seed: u64) -> Result<Self> {
        let stage = || MelStage::new(cfg, sample_rate_hz);
        let stride = || StftLayout::new(sample_rate_hz, cfg.win_s, cfg.overlap).map(|l| l.hop);
        Ok(match kind {
            FrontendKind::Spect => Frontend::Spect(stage()?),
            FrontendKind::Mel => Frontend::Mel(stage()?),
            FrontendKind::Logmel => {
                if !(cfg.log_eps > 0.0) {
                    return Err(Error::Config("log floor must be positive".into()));
                }
                Frontend::Logmel {
                    mel: stage()?,
                    floor_eps: cfg.log_eps,
                }
            }
            FrontendKind::Strf => {
                if cfg.strf_filters == 0 || cfg.strf_half_t == 0 || cfg.strf_half_f == 0 {
                    return Err(Error::Config("STRF needs filters and non-zero kernel half-sizes".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let bank = init_strf_bank(cfg.strf_filters, &mut rng);
                let n = bank.len();
                let col = |f: fn(&Strf2dFilterParams) -> f64| bank.iter().map(f).collect::<Vec<_>>();
                Frontend::Strf(StrfFrontend {
                    mel: stage()?,
                    half_t: cfg.strf_half_t,
                    half_f: cfg.strf_half_f,
                    params: vec![
                        ParamTensor::new("strf.freq", vec![n], col(|p| p.freq)),
                        ParamTensor::new("strf.gamma", vec![n], col(|p| p.gamma)),
                        ParamTensor::new("strf.log_sigma_t", vec![n], col(|p| p.sigma_t.ln())),
                        ParamTensor::new("strf.log_sigma_f", vec![n], col(|p| p.sigma_f.ln())),
                    ],
                })
            }
            FrontendKind::Td => {
                let k = odd_kernel_len(cfg.kernel_s, sample_rate_hz);
                let fb = TdFilterbank::mel_init(cfg.n_filters, cfg.f_min_hz, cfg.f_max_hz, sample_rate_hz, k, stride()?)?;
                Frontend::Td(TdFrontend {
                    sample_rate_hz,
                    window: fb.window.clone(),
                    stride: fb.stride,
                    params: vec![ParamTensor::new("td.filters", vec![cfg.n_filters, k], fb.filters.into_vec())],
                })
            }
            FrontendKind::Pcen => {
                let mel = stage()?;
                let (layer, params) = PcenLayer::new(cfg.n_mels, &cfg.pcen)?;
                Frontend::Pcen(PcenFrontend { mel, layer, params })
            }
            FrontendKind::Leaf => {
                let k = odd_kernel_len(cfg.kernel_s, sample_rate_hz);
                let half_len = k / 2;
                let bank = init_mel_gabor_bank(cfg.n_filters, cfg.f_min_hz, cfg.f_max_hz, sample_rate_hz, half_len)?;
                let n = bank.len();
                let sigma_lp = cfg.leaf_lowpass_frac * half_len as f64;
                if !(sigma_lp > 0.0) {
                    return Err(Error::Config("LEAF low-pass width must be positive".into()));
                }
                let (layer, pcen_params) = PcenLayer::new(n, &cfg.pcen)?;
                let mut params = vec![
                    ParamTensor::new("leaf.logit_eta", vec![n], bank.iter().map(|p| logit(2.0 * p.eta)).collect()),
                    ParamTensor::new("leaf.log_sigma_bw", vec![n], bank.iter().map(|p| p.sigma_bw.ln()).collect()),
                    ParamTensor::new("leaf.log_sigma_lp", vec![n], vec![sigma_lp.ln(); n]),
                ];
                params.extend(pcen_params);
                Frontend::Leaf(LeafFrontend {
                    sample_rate_hz,
                    half_len,
                    stride: stride()?,
                    layer,
                    params,
                })
            }
        })
    }

    pub fn kind(&self) -> FrontendKind {
        match self {
            Frontend::Spect(_) => FrontendKind::Spect,
            Frontend::Mel(_) => FrontendKind::Mel,
            Frontend::Logmel { .. } => FrontendKind::Logmel,
            Frontend::Strf(_) => FrontendKind::Strf,
            Frontend::Td(_) => FrontendKind::Td,
            Frontend::Pcen(_) => FrontendKind::Pcen,
            Frontend::Leaf(_) => FrontendKind::Leaf,
        }
    }

    pub fn params(&self) -> &[ParamTensor] {
        match self {
            Frontend::Spect(_) | Frontend::Mel(_) | Frontend::Logmel { .. } => &[],
            Frontend::Strf(f) => &f.params,
            Frontend::Td(f) => &f.params,
            Frontend::Pcen(f) => &f.params,
            Frontend::Leaf(f) => &f.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut [ParamTensor] {
        match self {
            Frontend::Spect(_) | Frontend::Mel(_) | Frontend::Logmel { .. } => &mut [],
            Frontend::Strf(f) => &mut f.params,
            Frontend::Td(f) => &mut f.params,
            Frontend::Pcen(f) => &mut f.params,
            Frontend::Leaf(f) => &mut f.params,
        }
    }

    /// Output channel count (64 for the default STRF bank, else 1).
    pub fn output_channels(&self) -> usize {
        match self {
            Frontend::Strf(f) => f.params[0].len(),
            _ => 1,
        }
    }

    fn check_rate(rate: u32, w: &Waveform) -> Result<()> {
        if rate != w.sample_rate_hz {
            return Err(Error::Config(format!(
                "frontend built for {rate} Hz, got {} Hz audio",
                w.sample_rate_hz
            )));
        }
        Ok(())
    }

    pub fn forward(&self, w: &Waveform) -> Result<FeatureMap> {
        match self {
            Frontend::Td(f) => {
                Self::check_rate(f.sample_rate_hz, w)?;
                td_forward(w, &f.filterbank())
            }
            Frontend::Leaf(f) => {
                Self::check_rate(f.sample_rate_hz, w)?;
                leaf_forward(w, &f.leaf_params(), f.half_len, f.stride)
            }
            _ => self.forward_cached(w).map(|(fm, _)| fm),
        }
    }

    pub fn forward_cached(&self, w: &Waveform) -> Result<(FeatureMap, ForwardCache)> {
        if w.is_empty() {
            return Err(Error::InputTooShort("empty waveform".into()));
        }
        Ok(match self {
            Frontend::Spect(stage) => {
                let ps = stage.spectrogram(w)?;
                (FeatureMap::from_grid(ps.values, ps.hop_s), ForwardCache::Fixed)
            }
            Frontend::Mel(stage) => {
                let ms = stage.mel(w)?;
                (FeatureMap::from_grid(ms.values, ms.hop_s), ForwardCache::Fixed)
            }
            Frontend::Logmel { mel, floor_eps } => {
                let ms = mel.mel(w)?;
                let hop = ms.hop_s;
                (FeatureMap::from_grid(log_compress(&ms, *floor_eps)?, hop), ForwardCache::Fixed)
            }
            Frontend::Strf(f) => {
                let ms = f.mel.mel(w)?;
                let fm = strf_forward(&ms, &f.filters(), f.half_t, f.half_f)?;
                (fm, ForwardCache::Strf { mel: ms.values })
            }
            Frontend::Td(f) => {
                Self::check_rate(f.sample_rate_hz, w)?;
                let (fm, cache) = td::td_forward_cached(w, &f.filterbank())?;
                (fm, ForwardCache::Td(cache))
            }
            Frontend::Pcen(f) => {
                let ms = f.mel.mel(w)?;
                let (out, smoothed) = pcen::pcen_forward_with_state(&ms.values, &f.pcen_params())?;
                (
                    FeatureMap::from_grid(out, ms.hop_s),
                    ForwardCache::Pcen {
                        mel: ms.values,
                        smoothed,
                    },
                )
            }
            Frontend::Leaf(f) => {
                Self::check_rate(f.sample_rate_hz, w)?;
                let (fm, cache) = leaf::leaf_forward_cached(w, &f.leaf_params(), f.half_len, f.stride)?;
                (fm, ForwardCache::Leaf(cache))
            }
        })
    }

    /// Gradients of `Σ upstream · features` for every tensor in [`Self::params`].
    pub fn backward(&self, cache: &ForwardCache, upstream: &FeatureMap) -> Result<Vec<Vec<f64>>> {
        match (self, cache) {
            (Frontend::Spect(_) | Frontend::Mel(_) | Frontend::Logmel { .. }, ForwardCache::Fixed) => Ok(Vec::new()),
            (Frontend::Strf(f), ForwardCache::Strf { mel }) => {
                let filters = f.filters();
                let g = strf_backward(mel, &filters, f.half_t, f.half_f, &upstream.values)?;
                Ok(vec![
                    g.iter().map(|g| g[0]).collect(),
                    g.iter().map(|g| g[1]).collect(),
                    g.iter().zip(&filters).map(|(g, p)| g[2] * p.sigma_t).collect(),
                    g.iter().zip(&filters).map(|(g, p)| g[3] * p.sigma_f).collect(),
                ])
            }
            (Frontend::Td(f), ForwardCache::Td(cache)) => {
                Ok(vec![td::td_backward(&f.filterbank(), cache, upstream)?.into_vec()])
            }
            (Frontend::Pcen(f), ForwardCache::Pcen { mel, smoothed }) => {
                let p = f.pcen_params();
                let up = Grid::from_vec(upstream.n_frames, upstream.n_bands, upstream.values.clone())?;
                let g = pcen_backward(mel, smoothed, &p, &up)?;
                Ok(f.layer.raw_grads(&g, &p))
            }
            (Frontend::Leaf(f), ForwardCache::Leaf(cache)) => {
                let p = f.leaf_params();
                let g = leaf::leaf_backward(&p, f.half_len, f.stride, cache, upstream)?;
                let mut out = vec![
                    g.eta.iter().zip(&p.gabor).map(|(g, q)| g * q.eta * (1.0 - 2.0 * q.eta)).collect(),
                    g.sigma_bw.iter().zip(&p.gabor).map(|(g, q)| g * q.sigma_bw).collect(),
                    g.sigma_lp.iter().zip(&p.lowpass).map(|(g, q)| g * q.sigma_lp).collect(),
                ];
                out.extend(f.layer.raw_grads(&g.pcen, &p.pcen));
                Ok(out)
            }
            _ => Err(Error::MissingCache),
        }
    }
}
