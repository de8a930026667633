//! Compact convolutional classifier with a single-logit head.
//!
//! Each block is a same-padded `k×k` convolution, a nonlinearity and an
//! optional 2×2 max-pool (floor; a side of length 1 is left alone). The last
//! block is averaged over all positions and mapped affinely to one logit.
//! A feature map `[C × T × B]` is treated as a `C`-channel image of height
//! `T` and width `B`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ParamTensor;
use crate::frontends::FeatureMap;
use crate::linalg::{gemm, MatRef};
use crate::{Error, Result};

/// Upper bound on im2col buffer size; larger convolutions are done in row chunks.
const COL_CHUNK: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub input_channels: usize,
    /// Output channels of each block.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub pool: bool,
    pub activation: Activation,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            input_channels: 1,
            channels: vec![16, 32, 64],
            kernel: 3,
            pool: true,
            activation: Activation::Relu,
        }
    }
}

impl ClassifierConfig {
    pub fn n_blocks(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::Config("classifier needs at least one block".into()));
        }
        if self.input_channels == 0 || self.channels.contains(&0) {
            return Err(Error::Config("classifier channel counts must be positive".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("classifier kernel {} must be odd", self.kernel)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Dims {
    c: usize,
    h: usize,
    w: usize,
}

impl Dims {
    fn len(self) -> usize {
        self.c * self.h * self.w
    }

    fn pooled(self) -> Dims {
        let half = |n: usize| if n >= 2 { n / 2 } else { 1 };
        Dims {
            c: self.c,
            h: half(self.h),
            w: half(self.w),
        }
    }
}

struct BlockCache {
    input: Vec<f64>,
    in_dims: Dims,
    pre: Vec<f64>,
    /// For every pooled output, the flat index of the winning input.
    argmax: Option<Vec<usize>>,
}

/// Activations kept by [`Classifier::forward_cached`].
pub struct ClassifierCache {
    blocks: Vec<BlockCache>,
    pooled: Vec<f64>,
    last_dims: Dims,
    input_dims: (usize, usize, usize),
    hop_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    cfg: ClassifierConfig,
    /// Features are mapped to `(x − shift)·scale` before the first block.
    pub input_shift: f64,
    pub input_scale: f64,
    params: Vec<ParamTensor>,
}

impl Classifier {
    /// He-normal convolution weights, zero biases.
    pub fn new(cfg: ClassifierConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = cfg.kernel;
        let mut params = Vec::with_capacity(2 * cfg.n_blocks() + 2);
        let mut c_in = cfg.input_channels;
        for (i, &c_out) in cfg.channels.iter().enumerate() {
            let fan_in = c_in * k * k;
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let w = (0..c_out * fan_in).map(|_| normal.sample(&mut rng)).collect();
            params.push(ParamTensor::new(format!("block{i}.weight"), vec![c_out, c_in, k, k], w));
            params.push(ParamTensor::new(format!("block{i}.bias"), vec![c_out], vec![0.0; c_out]));
            c_in = c_out;
        }
        let normal = Normal::new(0.0, (1.0 / c_in as f64).sqrt()).expect("positive std");
        let w = (0..c_in).map(|_| normal.sample(&mut rng)).collect();
        params.push(ParamTensor::new("head.weight", vec![c_in], w));
        params.push(ParamTensor::new("head.bias", vec![1], vec![0.0]));
        Ok(Self {
            cfg,
            input_shift: 0.0,
            input_scale: 1.0,
            params,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[ParamTensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.params
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<f64> {
        self.forward_cached(x).map(|(z, _)| z)
    }

    pub fn forward_cached(&self, x: &FeatureMap) -> Result<(f64, ClassifierCache)> {
        if x.channels != self.cfg.input_channels {
            return Err(Error::Shape(format!(
                "classifier expects {} input channels, got {}",
                self.cfg.input_channels, x.channels
            )));
        }
        if x.n_frames == 0 || x.n_bands == 0 {
            return Err(Error::Shape("empty feature map".into()));
        }
        let mut dims = Dims {
            c: x.channels,
            h: x.n_frames,
            w: x.n_bands,
        };
        let mut act: Vec<f64> = x
            .values
            .iter()
            .map(|v| (v - self.input_shift) * self.input_scale)
            .collect();
        let k = self.cfg.kernel;
        let mut blocks = Vec::with_capacity(self.cfg.n_blocks());
        for (b, &c_out) in self.cfg.channels.iter().enumerate() {
            let w = &self.params[2 * b].value;
            let bias = &self.params[2 * b + 1].value;
            let mut pre = conv_forward(&act, dims, w, bias, c_out, k);
            let out_dims = Dims { c: c_out, ..dims };
            let mut post = pre.clone();
            if self.cfg.activation == Activation::Relu {
                post.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            let (next, next_dims, argmax) = if self.cfg.pool {
                let (p, idx, pd) = max_pool(&post, out_dims);
                (p, pd, Some(idx))
            } else {
                (post, out_dims, None)
            };
            if self.cfg.activation == Activation::Identity {
                // pre-activation is not needed for the backward pass
                pre = Vec::new();
            }
            blocks.push(BlockCache {
                input: std::mem::replace(&mut act, next),
                in_dims: dims,
                pre,
                argmax,
            });
            dims = next_dims;
        }
        let area = (dims.h * dims.w) as f64;
        let pooled: Vec<f64> = act.chunks(dims.h * dims.w).map(|ch| ch.iter().sum::<f64>() / area).collect();
        let head_w = &self.params[2 * self.cfg.n_blocks()].value;
        let head_b = self.params[2 * self.cfg.n_blocks() + 1].value[0];
        let logit = head_b + pooled.iter().zip(head_w).map(|(a, b)| a * b).sum::<f64>();
        Ok((
            logit,
            ClassifierCache {
                blocks,
                pooled,
                last_dims: dims,
                input_dims: x.shape(),
                hop_s: x.hop_s,
            },
        ))
    }

    /// Gradients of `dlogit · logit` for every tensor in [`Self::params`]
    /// and for the input feature map.
    pub fn backward(&self, cache: &ClassifierCache, dlogit: f64) -> Result<(Vec<Vec<f64>>, FeatureMap)> {
        let nb = self.cfg.n_blocks();
        if cache.blocks.len() != nb {
            return Err(Error::MissingCache);
        }
        let k = self.cfg.kernel;
        let mut grads = vec![Vec::new(); 2 * nb + 2];
        let head_w = &self.params[2 * nb].value;
        grads[2 * nb] = cache.pooled.iter().map(|p| dlogit * p).collect();
        grads[2 * nb + 1] = vec![dlogit];

        let d = cache.last_dims;
        let area = d.h * d.w;
        let mut g: Vec<f64> = head_w
            .iter()
            .flat_map(|&hw| std::iter::repeat(dlogit * hw / area as f64).take(area))
            .collect();

        for b in (0..nb).rev() {
            let blk = &cache.blocks[b];
            let c_out = self.cfg.channels[b];
            let conv_dims = Dims { c: c_out, ..blk.in_dims };
            if let Some(idx) = &blk.argmax {
                let mut up = vec![0.0; conv_dims.len()];
                for (gi, &src) in g.iter().zip(idx) {
                    up[src] += gi;
                }
                g = up;
            }
            if self.cfg.activation == Activation::Relu {
                for (gi, &z) in g.iter_mut().zip(&blk.pre) {
                    if z <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            let w = &self.params[2 * b].value;
            let (dw, db, dx) = conv_backward(&blk.input, blk.in_dims, w, c_out, k, &g);
            grads[2 * b] = dw;
            grads[2 * b + 1] = db;
            g = dx;
        }
        g.iter_mut().for_each(|v| *v *= self.input_scale);
        let (c, t, bands) = cache.input_dims;
        Ok((grads, FeatureMap::new(c, t, bands, g, cache.hop_s)?))
    }
}

fn rows_per_chunk(dims: Dims, k: usize) -> usize {
    (COL_CHUNK / (dims.c * k * k * dims.w).max(1)).clamp(1, dims.h)
}

/// Columns for output rows `r0..r1`: `[(c·k + ki)·k + kj, (r − r0)·w + col]`.
fn im2col(x: &[f64], d: Dims, k: usize, r0: usize, r1: usize, cols: &mut Vec<f64>) {
    let p = k / 2;
    let n = (r1 - r0) * d.w;
    cols.clear();
    cols.resize(d.c * k * k * n, 0.0);
    for c in 0..d.c {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((c * k + ki) * k + kj) * n..][..n];
                for r in r0..r1 {
                    let src_r = r + ki;
                    if src_r < p || src_r - p >= d.h {
                        continue;
                    }
                    let src = &plane[(src_r - p) * d.w..(src_r - p + 1) * d.w];
                    let dst = &mut row[(r - r0) * d.w..(r - r0 + 1) * d.w];
                    // dst[col] = src[col + kj − p]
                    let lo = p.saturating_sub(kj);
                    let hi = (d.w + p).saturating_sub(kj).min(d.w);
                    if lo < hi {
                        dst[lo..hi].copy_from_slice(&src[lo + kj - p..hi + kj - p]);
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], d: Dims, k: usize, r0: usize, r1: usize, dx: &mut [f64]) {
    let p = k / 2;
    let n = (r1 - r0) * d.w;
    for c in 0..d.c {
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((c * k + ki) * k + kj) * n..][..n];
                for r in r0..r1 {
                    let src_r = r + ki;
                    if src_r < p || src_r - p >= d.h {
                        continue;
                    }
                    let base = c * d.h * d.w + (src_r - p) * d.w;
                    let lo = p.saturating_sub(kj);
                    let hi = (d.w + p).saturating_sub(kj).min(d.w);
                    for col in lo..hi {
                        dx[base + col + kj - p] += row[(r - r0) * d.w + col];
                    }
                }
            }
        }
    }
}

fn conv_forward(x: &[f64], d: Dims, w: &[f64], bias: &[f64], c_out: usize, k: usize) -> Vec<f64> {
    let plane = d.h * d.w;
    let ckk = d.c * k * k;
    let mut out = vec![0.0; c_out * plane];
    let step = rows_per_chunk(d, k);
    let mut cols = Vec::new();
    let mut buf = Vec::new();
    for r0 in (0..d.h).step_by(step) {
        let r1 = (r0 + step).min(d.h);
        let n = (r1 - r0) * d.w;
        im2col(x, d, k, r0, r1, &mut cols);
        buf.clear();
        buf.resize(c_out * n, 0.0);
        gemm(
            1.0,
            MatRef::row_major(w, c_out, ckk),
            MatRef::row_major(&cols, ckk, n),
            0.0,
            &mut buf,
        );
        for o in 0..c_out {
            let dst = &mut out[o * plane + r0 * d.w..][..n];
            for (v, s) in dst.iter_mut().zip(&buf[o * n..(o + 1) * n]) {
                *v = s + bias[o];
            }
        }
    }
    out
}

/// Returns `(dW, db, dx)` for upstream gradient `g` of shape `[c_out × h × w]`.
fn conv_backward(x: &[f64], d: Dims, w: &[f64], c_out: usize, k: usize, g: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane = d.h * d.w;
    let ckk = d.c * k * k;
    let db: Vec<f64> = g.chunks(plane).map(|ch| ch.iter().sum()).collect();
    let mut dw = vec![0.0; c_out * ckk];
    let mut dx = vec![0.0; d.len()];
    let step = rows_per_chunk(d, k);
    let mut cols = Vec::new();
    let mut gchunk = Vec::new();
    let mut dcols = Vec::new();
    for r0 in (0..d.h).step_by(step) {
        let r1 = (r0 + step).min(d.h);
        let n = (r1 - r0) * d.w;
        im2col(x, d, k, r0, r1, &mut cols);
        gchunk.clear();
        for o in 0..c_out {
            gchunk.extend_from_slice(&g[o * plane + r0 * d.w..][..n]);
        }
        let gm = MatRef::row_major(&gchunk, c_out, n);
        gemm(1.0, gm, MatRef::row_major(&cols, ckk, n).t(), 1.0, &mut dw);
        dcols.clear();
        dcols.resize(ckk * n, 0.0);
        gemm(1.0, MatRef::row_major(w, c_out, ckk).t(), gm, 0.0, &mut dcols);
        col2im_add(&dcols, d, k, r0, r1, &mut dx);
    }
    (dw, db, dx)
}

fn max_pool(x: &[f64], d: Dims) -> (Vec<f64>, Vec<usize>, Dims) {
    let pd = d.pooled();
    let span = |n: usize, i: usize| if n >= 2 { 2 * i..2 * i + 2 } else { 0..1 };
    let mut out = Vec::with_capacity(pd.len());
    let mut idx = Vec::with_capacity(pd.len());
    for c in 0..d.c {
        for i in 0..pd.h {
            for j in 0..pd.w {
                let mut best = f64::NEG_INFINITY;
                let mut at = 0;
                for r in span(d.h, i) {
                    for s in span(d.w, j) {
                        let f = (c * d.h + r) * d.w + s;
                        if x[f] > best {
                            best = x[f];
                            at = f;
                        }
                    }
                }
                out.push(best);
                idx.push(at);
            }
        }
    }
    (out, idx, pd)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_map(c: usize, t: usize, b: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        FeatureMap::new(c, t, b, (0..c * t * b).map(|_| n.sample(&mut rng)).collect(), 0.01).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_logit() {
        let mut clf = Classifier::new(ClassifierConfig::default(), 1).unwrap();
        clf.params_mut().iter_mut().for_each(|p| p.value.iter_mut().for_each(|v| *v = 0.0));
        assert_eq!(clf.forward(&random_map(1, 12, 9, 2)).unwrap(), 0.0);
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let clf = Classifier::new(ClassifierConfig::default(), 1).unwrap();
        assert!(matches!(clf.forward(&random_map(2, 8, 8, 0)), Err(Error::Shape(_))));
    }

    #[test]
    fn time_permutation_invariance_without_spatial_mixing() {
        let cfg = ClassifierConfig {
            input_channels: 2,
            channels: vec![4],
            kernel: 1,
            pool: false,
            activation: Activation::Relu,
        };
        let clf = Classifier::new(cfg, 5).unwrap();
        let x = random_map(2, 7, 5, 9);
        let perm = [3, 0, 6, 1, 5, 2, 4];
        let mut y = x.clone();
        for c in 0..2 {
            for (t, &src) in perm.iter().enumerate() {
                for b in 0..5 {
                    y.values[(c * 7 + t) * 5 + b] = x.get(c, src, b);
                }
            }
        }
        let (a, b) = (clf.forward(&x).unwrap(), clf.forward(&y).unwrap());
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn deterministic() {
        let x = random_map(3, 20, 11, 4);
        let cfg = ClassifierConfig {
            input_channels: 3,
            ..Default::default()
        };
        let a = Classifier::new(cfg.clone(), 8).unwrap().forward(&x).unwrap();
        let b = Classifier::new(cfg, 8).unwrap().forward(&x).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    fn direct_conv(x: &[f64], d: Dims, w: &[f64], bias: &[f64], c_out: usize, k: usize) -> Vec<f64> {
        let p = k as isize / 2;
        let mut out = vec![0.0; c_out * d.h * d.w];
        for o in 0..c_out {
            for r in 0..d.h {
                for s in 0..d.w {
                    let mut acc = bias[o];
                    for c in 0..d.c {
                        for ki in 0..k {
                            for kj in 0..k {
                                let rr = r as isize + ki as isize - p;
                                let ss = s as isize + kj as isize - p;
                                if rr >= 0 && ss >= 0 && (rr as usize) < d.h && (ss as usize) < d.w {
                                    acc += w[((o * d.c + c) * k + ki) * k + kj]
                                        * x[(c * d.h + rr as usize) * d.w + ss as usize];
                                }
                            }
                        }
                    }
                    out[(o * d.h + r) * d.w + s] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_sum() {
        for &(c, h, w, k) in &[(2, 6, 5, 3), (1, 4, 9, 5), (3, 1, 7, 3), (2, 5, 2, 1)] {
            let d = Dims { c, h, w };
            let x = random_map(c, h, w, 1).values;
            let wt = random_map(3, c, k * k, 2).values;
            let bias = [0.1, -0.2, 0.3];
            let fast = conv_forward(&x, d, &wt, &bias, 3, k);
            let slow = direct_conv(&x, d, &wt, &bias, 3, k);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        let d = Dims { c: 2, h: 5, w: 6 };
        let k = 3;
        let x = random_map(2, 5, 6, 3).values;
        let wt = random_map(4, 2, 9, 4).values;
        let g = random_map(4, 5, 6, 5).values;
        let (dw, db, dx) = conv_backward(&x, d, &wt, 4, k, &g);
        let zero = [0.0; 4];
        // <g, conv(x)> is bilinear in (w, x): both gradients reproduce it.
        let y = conv_forward(&x, d, &wt, &zero, 4, k);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let via_w: f64 = dw.iter().zip(&wt).map(|(a, b)| a * b).sum();
        let via_x: f64 = dx.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - via_w).abs() < 1e-10 * lhs.abs().max(1.0));
        assert!((lhs - via_x).abs() < 1e-10 * lhs.abs().max(1.0));
        for (o, v) in db.iter().enumerate() {
            assert!((v - g[o * 30..(o + 1) * 30].iter().sum::<f64>()).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_floors_and_keeps_unit_sides() {
        let d = Dims { c: 1, h: 5, w: 1 };
        let (out, idx, pd) = max_pool(&[1.0, 3.0, 2.0, 0.0, 9.0], d);
        assert_eq!((pd.h, pd.w), (2, 1));
        assert_eq!(out, vec![3.0, 2.0]);
        assert_eq!(idx, vec![1, 2]);
    }
}
