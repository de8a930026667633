//! Per-channel energy normalization: a first-order IIR smoother followed by
//! automatic gain control and root compression.

use crate::learning::ParamTensor;
use crate::{Error, Grid, Result};

/// Smoothing coefficient of the IIR smoother.
#[derive(Debug, Clone, PartialEq)]
pub enum Smoothing {
    Global(f64),
    PerChannel(Vec<f64>),
}

impl Smoothing {
    pub fn at(&self, channel: usize) -> f64 {
        match self {
            Smoothing::Global(s) => *s,
            Smoothing::PerChannel(s) => s[channel],
        }
    }

    fn validate(&self, n_channels: usize) -> Result<()> {
        let values: &[f64] = match self {
            Smoothing::Global(s) => std::slice::from_ref(s),
            Smoothing::PerChannel(s) => {
                if s.len() != n_channels {
                    return Err(Error::Shape(format!(
                        "{} smoothing coefficients for {n_channels} channels",
                        s.len()
                    )));
                }
                s
            }
        };
        match values.iter().find(|&&s| !(s > 0.0 && s <= 1.0)) {
            Some(s) => Err(Error::Param(format!("smoothing coefficient {s} outside (0, 1]"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcenParams {
    pub s: Smoothing,
    pub alpha: Vec<f64>,
    pub delta: Vec<f64>,
    pub r: Vec<f64>,
    pub eps: f64,
}

impl PcenParams {
    /// Same values on every channel with a global smoother.
    pub fn uniform(n_channels: usize, s: f64, alpha: f64, delta: f64, r: f64, eps: f64) -> Self {
        Self {
            s: Smoothing::Global(s),
            alpha: vec![alpha; n_channels],
            delta: vec![delta; n_channels],
            r: vec![r; n_channels],
            eps,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self, n_channels: usize) -> Result<()> {
        for (name, v) in [("alpha", &self.alpha), ("delta", &self.delta), ("r", &self.r)] {
            if v.len() != n_channels {
                return Err(Error::Shape(format!(
                    "{} {name} values for {n_channels} channels",
                    v.len()
                )));
            }
        }
        self.s.validate(n_channels)?;
        let bad = |what: &str, v: f64| Err(Error::Param(format!("PCEN {what} = {v} out of range")));
        if let Some(&a) = self.alpha.iter().find(|&&a| !(a >= 0.0 && a.is_finite())) {
            return bad("alpha", a);
        }
        if let Some(&d) = self.delta.iter().find(|&&d| !(d > 0.0 && d.is_finite())) {
            return bad("delta", d);
        }
        if let Some(&r) = self.r.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
            return bad("r", r);
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad("eps", self.eps);
        }
        Ok(())
    }
}

/// `M(t) = (1 − s)·M(t − 1) + s·E(t)` along time per channel, `M(0) = E(0)`.
pub fn pcen_smoother(e: &Grid, s: &Smoothing) -> Result<Grid> {
    s.validate(e.cols())?;
    let (n_frames, n_ch) = e.shape();
    let mut m = Grid::zeros(n_frames, n_ch);
    if n_frames == 0 {
        return Ok(m);
    }
    m.row_mut(0).copy_from_slice(e.row(0));
    for t in 1..n_frames {
        for c in 0..n_ch {
            let sc = s.at(c);
            m[(t, c)] = (1.0 - sc) * m[(t - 1, c)] + sc * e[(t, c)];
        }
    }
    Ok(m)
}

fn check_input(e: &Grid) -> Result<()> {
    if e.rows() == 0 || e.cols() == 0 {
        return Err(Error::InputTooShort("empty PCEN input".into()));
    }
    if let Some(v) = e.as_slice().iter().find(|&&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Param(format!("PCEN input must be finite and non-negative, got {v}")));
    }
    Ok(())
}

/// `(E/(M + ε)^α + δ)^r − δ^r` with `M` from [`pcen_smoother`].
pub fn pcen_forward(e: &Grid, p: &PcenParams) -> Result<Grid> {
    pcen_forward_with_state(e, p).map(|(out, _)| out)
}

/// Forward pass that also returns the smoother state for backpropagation.
pub fn pcen_forward_with_state(e: &Grid, p: &PcenParams) -> Result<(Grid, Grid)> {
    check_input(e)?;
    p.validate(e.cols())?;
    let m = pcen_smoother(e, &p.s)?;
    let mut out = Grid::zeros(e.rows(), e.cols());
    for t in 0..e.rows() {
        for c in 0..e.cols() {
            let (a, d, r) = (p.alpha[c], p.delta[c], p.r[c]);
            let agc = e[(t, c)] * (m[(t, c)] + p.eps).powf(-a);
            out[(t, c)] = (agc + d).powf(r) - d.powf(r);
        }
    }
    Ok((out, m))
}

/// Gradients of a scalar loss with respect to the constrained PCEN values.
#[derive(Debug, Clone, PartialEq)]
pub struct PcenGrads {
    pub alpha: Vec<f64>,
    pub delta: Vec<f64>,
    pub r: Vec<f64>,
    /// One entry for a global smoother, one per channel otherwise.
    pub s: Vec<f64>,
    pub input: Grid,
}

/// Reverse pass, including backpropagation through time of the smoother.
pub fn pcen_backward(e: &Grid, m: &Grid, p: &PcenParams, upstream: &Grid) -> Result<PcenGrads> {
    if e.shape() != m.shape() || e.shape() != upstream.shape() {
        return Err(Error::Shape(format!(
            "PCEN backward: input {:?}, state {:?}, upstream {:?}",
            e.shape(),
            m.shape(),
            upstream.shape()
        )));
    }
    let (n_frames, n_ch) = e.shape();
    let mut g = PcenGrads {
        alpha: vec![0.0; n_ch],
        delta: vec![0.0; n_ch],
        r: vec![0.0; n_ch],
        s: vec![0.0; if matches!(p.s, Smoothing::Global(_)) { 1 } else { n_ch }],
        input: Grid::zeros(n_frames, n_ch),
    };
    let mut g_m = Grid::<f64>::zeros(n_frames, n_ch);
    for c in 0..n_ch {
        let (a, d, r) = (p.alpha[c], p.delta[c], p.r[c]);
        let (ln_d, d_r) = (d.ln(), d.powf(r));
        for t in 0..n_frames {
            let u = upstream[(t, c)];
            if u == 0.0 {
                continue;
            }
            let den = m[(t, c)] + p.eps;
            let scale = den.powf(-a);
            let agc = e[(t, c)] * scale;
            let base = agc + d;
            let b_r = base.powf(r);
            let slope = r * b_r / base;
            g.r[c] += u * (b_r * base.ln() - d_r * ln_d);
            g.delta[c] += u * (slope - r * d_r / d);
            g.alpha[c] += u * slope * agc * (-den.ln());
            g.input[(t, c)] += u * slope * scale;
            g_m[(t, c)] += u * slope * agc * (-a / den);
        }
    }
    for c in 0..n_ch {
        let sc = p.s.at(c);
        let si = if g.s.len() == 1 { 0 } else { c };
        for t in (1..n_frames).rev() {
            let gm = g_m[(t, c)];
            g.s[si] += gm * (e[(t, c)] - m[(t - 1, c)]);
            g.input[(t, c)] += sc * gm;
            g_m[(t - 1, c)] += (1.0 - sc) * gm;
        }
        if n_frames > 0 {
            g.input[(0, c)] += g_m[(0, c)];
        }
    }
    Ok(g)
}

/// Default PCEN settings; `s` is held fixed unless `learn_s` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcenConfig {
    pub alpha: f64,
    pub delta: f64,
    pub r: f64,
    pub eps: f64,
    pub s: f64,
    pub learn_s: bool,
}

impl Default for PcenConfig {
    fn default() -> Self {
        Self {
            alpha: 0.98,
            delta: 2.0,
            r: 0.5,
            eps: 1e-6,
            s: 0.04,
            learn_s: false,
        }
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps between unconstrained trainable tensors and [`PcenParams`].
///
/// `α = exp(θ_α)`, `δ = exp(θ_δ)`, `r = sigmoid(θ_r)` and, when learned,
/// per-channel `s = sigmoid(θ_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcenLayer {
    n_channels: usize,
    eps: f64,
    fixed_s: Option<f64>,
}

impl PcenLayer {
    pub fn new(n_channels: usize, cfg: &PcenConfig) -> Result<(Self, Vec<ParamTensor>)> {
        let init = PcenParams::uniform(
            n_channels,
            cfg.s,
            cfg.alpha,
            cfg.delta,
            cfg.r,
            cfg.eps,
        );
        init.validate(n_channels)?;
        if cfg.alpha <= 0.0 || cfg.r >= 1.0 || (cfg.learn_s && cfg.s >= 1.0) {
            return Err(Error::Param(
                "learnable PCEN needs alpha > 0, r < 1 and (if learned) s < 1".into(),
            ));
        }
        let layer = Self {
            n_channels,
            eps: cfg.eps,
            fixed_s: (!cfg.learn_s).then_some(cfg.s),
        };
        let n = n_channels;
        let mut params = vec![
            ParamTensor::new("pcen.log_alpha", vec![n], vec![cfg.alpha.ln(); n]),
            ParamTensor::new("pcen.log_delta", vec![n], vec![cfg.delta.ln(); n]),
            ParamTensor::new("pcen.logit_r", vec![n], vec![logit(cfg.r); n]),
        ];
        if cfg.learn_s {
            params.push(ParamTensor::new("pcen.logit_s", vec![n], vec![logit(cfg.s); n]));
        }
        Ok((layer, params))
    }

    pub fn n_params(&self) -> usize {
        if self.fixed_s.is_some() {
            3
        } else {
            4
        }
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn constrained(&self, params: &[ParamTensor]) -> PcenParams {
        PcenParams {
            s: match self.fixed_s {
                Some(s) => Smoothing::Global(s),
                None => Smoothing::PerChannel(params[3].value.iter().map(|&v| sigmoid(v)).collect()),
            },
            alpha: params[0].value.iter().map(|v| v.exp()).collect(),
            delta: params[1].value.iter().map(|v| v.exp()).collect(),
            r: params[2].value.iter().map(|&v| sigmoid(v)).collect(),
            eps: self.eps,
        }
    }

    /// Chain rule from constrained-value gradients to the trainable tensors.
    pub fn raw_grads(&self, g: &PcenGrads, p: &PcenParams) -> Vec<Vec<f64>> {
        let mut out = vec![
            g.alpha.iter().zip(&p.alpha).map(|(g, a)| g * a).collect(),
            g.delta.iter().zip(&p.delta).map(|(g, d)| g * d).collect(),
            g.r.iter().zip(&p.r).map(|(g, r)| g * r * (1.0 - r)).collect(),
        ];
        if self.fixed_s.is_none() {
            out.push(
                g.s.iter()
                    .enumerate()
                    .map(|(c, g)| {
                        let s = p.s.at(c);
                        g * s * (1.0 - s)
                    })
                    .collect(),
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn column(v: &[f64]) -> Grid {
        Grid::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    fn random_grid(rows: usize, cols: usize, seed: u64) -> Grid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid::from_fn(rows, cols, |_, _| rng.gen_range(0.0..3.0))
    }

    #[test]
    fn smoother_cases() {
        let e = random_grid(6, 3, 1);
        assert_eq!(pcen_smoother(&e, &Smoothing::Global(1.0)).unwrap(), e);

        let m = pcen_smoother(&column(&[1.0, 0.0, 0.0]), &Smoothing::Global(0.5)).unwrap();
        assert_eq!(m.as_slice(), &[1.0, 0.5, 0.25]);

        let c = Grid::from_fn(20, 2, |_, _| 0.7);
        let m = pcen_smoother(&c, &Smoothing::Global(0.3)).unwrap();
        assert!(m.as_slice().iter().all(|&v| (v - 0.7).abs() < 1e-15));

        assert!(pcen_smoother(&c, &Smoothing::Global(0.0)).is_err());
        assert!(pcen_smoother(&c, &Smoothing::Global(1.5)).is_err());
    }

    #[test]
    fn identity_when_alpha_zero_and_r_one() {
        let e = random_grid(16, 8, 2);
        for delta in [1e-3, 0.5, 7.0] {
            let p = PcenParams::uniform(8, 0.04, 0.0, delta, 1.0, 1e-6);
            let out = pcen_forward(&e, &p).unwrap();
            for (o, x) in out.as_slice().iter().zip(e.as_slice()) {
                assert!((o - x).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn constant_input_fixed_point() {
        let e = Grid::from_fn(50, 3, |_, _| 2.5);
        let p = PcenParams::uniform(3, 0.2, 1.0, 1e-12, 1.0, 1e-12);
        let out = pcen_forward(&e, &p).unwrap();
        assert!(out.as_slice().iter().all(|&v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn direct_scalar_recurrence() {
        let (s, eps, a, d, r): (f64, f64, f64, f64, f64) = (0.5, 1e-6, 0.98, 2.0, 0.5);
        let e = [1.0, 0.0, 0.0];
        let mut m = e[0];
        let mut expect = Vec::new();
        for (t, &x) in e.iter().enumerate() {
            if t > 0 {
                m = (1.0 - s) * m + s * x;
            }
            expect.push((x / (m + eps).powf(a) + d).powf(r) - d.powf(r));
        }
        let out = pcen_forward(&column(&e), &PcenParams::uniform(1, s, a, d, r, eps)).unwrap();
        for (o, x) in out.as_slice().iter().zip(&expect) {
            assert!((o - x).abs() < 1e-14);
        }
        // first cell: 1/(1+1e-6)^0.98 ≈ 0.99999902
        assert!((out[(0, 0)] - ((1.0 / 1.000001f64.powf(0.98) + 2.0).sqrt() - 2f64.sqrt())).abs() < 1e-15);
        assert_eq!(out[(1, 0)], 0.0);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let out = pcen_forward(&Grid::zeros(5, 4), &PcenParams::uniform(4, 0.04, 0.98, 2.0, 0.5, 1e-6))
            .unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_invalid_params() {
        let e = random_grid(4, 2, 3);
        let mut p = PcenParams::uniform(2, 0.04, 0.98, 2.0, 0.5, 1e-6);
        p.r[1] = 1.5;
        assert!(matches!(pcen_forward(&e, &p), Err(Error::Param(_))));
        let p = PcenParams::uniform(3, 0.04, 0.98, 2.0, 0.5, 1e-6);
        assert!(matches!(pcen_forward(&e, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn delta_gradient_vanishes_when_r_is_one() {
        let e = random_grid(10, 3, 4);
        let p = PcenParams::uniform(3, 0.1, 0.7, 1.3, 1.0, 1e-6);
        let (_, m) = pcen_forward_with_state(&e, &p).unwrap();
        let up = random_grid(10, 3, 5);
        let g = pcen_backward(&e, &m, &p, &up).unwrap();
        assert!(g.delta.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let e = random_grid(10, 3, 6);
        let p = PcenParams::uniform(3, 0.1, 0.7, 1.3, 0.4, 1e-6);
        let (_, m) = pcen_forward_with_state(&e, &p).unwrap();
        let g = pcen_backward(&e, &m, &p, &Grid::zeros(10, 3)).unwrap();
        assert!(g.alpha.iter().chain(&g.delta).chain(&g.r).chain(&g.s).all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences_including_input() {
        let e = random_grid(16, 8, 7);
        let up = random_grid(16, 8, 8);
        let mut p = PcenParams::uniform(8, 0.2, 0.8, 1.5, 0.4, 1e-6);
        p.s = Smoothing::PerChannel((0..8).map(|c| 0.1 + 0.05 * c as f64).collect());
        let loss = |e: &Grid, p: &PcenParams| -> f64 {
            let out = pcen_forward(e, p).unwrap();
            out.as_slice().iter().zip(up.as_slice()).map(|(a, b)| a * b).sum()
        };
        let (_, m) = pcen_forward_with_state(&e, &p).unwrap();
        let g = pcen_backward(&e, &m, &p, &up).unwrap();
        let h = 1e-6;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
        for c in 0..8 {
            let mut hi = p.clone();
            let mut lo = p.clone();
            hi.alpha[c] += h;
            lo.alpha[c] -= h;
            assert!(rel((loss(&e, &hi) - loss(&e, &lo)) / (2.0 * h), g.alpha[c]) < 1e-5);
            let (mut hi, mut lo) = (p.clone(), p.clone());
            hi.s = Smoothing::PerChannel((0..8).map(|k| p.s.at(k) + if k == c { h } else { 0.0 }).collect());
            lo.s = Smoothing::PerChannel((0..8).map(|k| p.s.at(k) - if k == c { h } else { 0.0 }).collect());
            assert!(rel((loss(&e, &hi) - loss(&e, &lo)) / (2.0 * h), g.s[c]) < 1e-5);
        }
        for &(t, c) in &[(0, 0), (3, 2), (15, 7), (9, 4)] {
            let (mut hi, mut lo) = (e.clone(), e.clone());
            hi[(t, c)] += h;
            lo[(t, c)] -= h;
            assert!(rel((loss(&hi, &p) - loss(&lo, &p)) / (2.0 * h), g.input[(t, c)]) < 1e-5);
        }
    }

    proptest! {
        #[test]
        fn smoother_is_convex_combination(
            vals in prop::collection::vec(0.0..10.0f64, 1..40),
            s in 0.01..1.0f64,
        ) {
            let e = column(&vals);
            let m = pcen_smoother(&e, &Smoothing::Global(s)).unwrap();
            for t in 0..vals.len() {
                let lo = vals[..=t].iter().copied().fold(f64::MAX, f64::min);
                let hi = vals[..=t].iter().copied().fold(f64::MIN, f64::max);
                prop_assert!(m[(t, 0)] >= lo - 1e-12 && m[(t, 0)] <= hi + 1e-12);
            }
        }

        #[test]
        fn steady_state_is_loudness_invariant(c in 0.01..10.0f64, lambda in 1.0..1000.0f64) {
            let p = PcenParams::uniform(1, 0.1, 1.0, 0.5, 0.5, 1e-300);
            let a = pcen_forward(&Grid::from_fn(30, 1, |_, _| c), &p).unwrap();
            let b = pcen_forward(&Grid::from_fn(30, 1, |_, _| c * lambda), &p).unwrap();
            prop_assert!((a[(29, 0)] - b[(29, 0)]).abs() < 1e-9);
        }
    }
}
