//! Central finite-difference checks of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Activation, Classifier, ParamTensor};
use crate::dsp::Waveform;
use crate::frontends::{FeatureMap, Frontend};
use crate::{Error, Result};

/// Coordinates checked per tensor; smaller tensors are checked in full.
pub const MAX_COORDS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckGroup {
    pub name: String,
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Coordinates left out because the loss has a kink within `h` of them.
    pub kinks_skipped: usize,
    /// False for the classifier's input-gradient group, which is reported
    /// but not a trainable tensor.
    pub is_parameter: bool,
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Worst error over the parameter groups.
pub fn max_rel_error(groups: &[GradCheckGroup]) -> f64 {
    groups
        .iter()
        .filter(|g| g.is_parameter)
        .map(|g| g.max_rel_error)
        .fold(0.0, f64::max)
}

/// Compares `analytic[g][i]` with `(L(θ + h·e_i) − L(θ − h·e_i)) / 2h` for
/// every tensor returned by `params`, restoring each coordinate afterwards.
///
/// With `kink_tol` set, the loss is also sampled at `±h/2`; a coordinate
/// whose four slopes across `[x − h, x + h]` differ by more than that
/// relative amount is counted in `kinks_skipped` instead of being compared. Only meaningful for losses
/// with ReLU or max-pool corners; smooth losses should pass `None`.
pub fn grad_check<M>(
    model: &mut M,
    params: fn(&mut M) -> &mut [ParamTensor],
    analytic: &[Vec<f64>],
    h: f64,
    seed: u64,
    kink_tol: Option<f64>,
    mut loss: impl FnMut(&M) -> Result<f64>,
) -> Result<Vec<GradCheckGroup>> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::Config(format!("finite-difference step {h} outside [1e-7, 1e-3]")));
    }
    let shapes: Vec<(String, usize)> = params(model).iter().map(|p| (p.name.clone(), p.len())).collect();
    if shapes.len() != analytic.len() || shapes.iter().zip(analytic).any(|((_, n), a)| *n != a.len()) {
        return Err(Error::Shape("analytic gradients do not match the parameter set".into()));
    }
    let f0 = match kink_tol {
        Some(_) => loss(model)?,
        None => f64::NAN,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(shapes.len());
    for (g, (name, n)) in shapes.into_iter().enumerate() {
        let coords: Vec<usize> = if n <= MAX_COORDS {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, MAX_COORDS).into_vec();
            c.sort_unstable();
            c
        };
        let mut worst = 0.0f64;
        let mut kinks = 0;
        for &i in &coords {
            let x0 = params(model)[g].value[i];
            let mut at = |dx: f64| {
                params(model)[g].value[i] = x0 + dx;
                let f = loss(model);
                params(model)[g].value[i] = x0;
                f
            };
            let (up, down) = (at(h)?, at(-h)?);
            if let Some(tol) = kink_tol {
                let (up_half, down_half) = (at(0.5 * h)?, at(-0.5 * h)?);
                if has_kink([down, down_half, f0, up_half, up], 0.5 * h, tol) {
                    kinks += 1;
                    continue;
                }
            }
            let fd = (up - down) / (2.0 * h);
            let e = rel_error(analytic[g][i], fd);
            worst = worst.max(if e.is_nan() { f64::INFINITY } else { e });
        }
        out.push(GradCheckGroup {
            name,
            max_rel_error: worst,
            coords_checked: coords.len() - kinks,
            kinks_skipped: kinks,
            is_parameter: true,
        });
    }
    Ok(out)
}

/// Whether the slopes of the four steps through `f` (sampled `step` apart)
/// disagree by more than `tol` relative plus the roundoff of the samples.
fn has_kink(f: [f64; 5], step: f64, tol: f64) -> bool {
    let slopes: Vec<f64> = f.windows(2).map(|w| (w[1] - w[0]) / step).collect();
    let (lo, hi) = slopes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    let scale = slopes.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let noise = 64.0 * f64::EPSILON * f.iter().fold(0.0f64, |m, v| m.max(v.abs())) / step;
    hi - lo > tol * scale + noise
}

fn random_like(fm: &FeatureMap, rng: &mut ChaCha8Rng) -> FeatureMap {
    let values = (0..fm.values.len()).map(|_| StandardNormal.sample(rng)).collect();
    FeatureMap { values, ..fm.clone() }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks a learnable frontend on `L = Σ U·frontend(w)` with a seeded random `U`.
pub fn check_frontend(frontend: &mut Frontend, w: &Waveform, h: f64, seed: u64) -> Result<Vec<GradCheckGroup>> {
    if frontend.params().is_empty() {
        return Err(Error::Config("frontend has no learnable parameters".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (out, cache) = frontend.forward_cached(w)?;
    let u = random_like(&out, &mut rng);
    let analytic = frontend.backward(&cache, &u)?;
    grad_check(frontend, Frontend::params_mut, &analytic, h, seed ^ 0x5eed, None, |f| {
        Ok(dot(&f.forward(w)?.values, &u.values))
    })
}

/// Relative slope disagreement treated as a ReLU or max-pool corner.
/// The classifier is piecewise linear in every single coordinate, so away
/// from corners the two slopes agree up to roundoff.
pub const KINK_TOL: f64 = 1e-6;

/// Checks the classifier's parameter gradients on `L = logit(x)`, plus its
/// input gradient as a trailing `input` group. Input coordinates can carry
/// gradients far below the loss's roundoff over `2h`, so that group is not
/// counted by [`max_rel_error`]. Corners are skipped (see
/// [`grad_check`]) unless the configuration is linear.
pub fn check_classifier(clf: &mut Classifier, x: &FeatureMap, h: f64, seed: u64) -> Result<Vec<GradCheckGroup>> {
    let (_, cache) = clf.forward_cached(x)?;
    let (grads, dx) = clf.backward(&cache, 1.0)?;
    let cfg = clf.config();
    let kink_tol = (cfg.pool || cfg.activation == Activation::Relu).then_some(KINK_TOL);
    let mut groups = grad_check(clf, Classifier::params_mut, &grads, h, seed, kink_tol, |c| c.forward(x))?;

    struct Probe<'a> {
        clf: &'a Classifier,
        x: [ParamTensor; 1],
    }
    let mut probe = Probe {
        clf,
        x: [ParamTensor::new("input", vec![x.values.len()], x.values.clone())],
    };
    let input = grad_check(&mut probe, |p| &mut p.x, &[dx.values], h, seed + 1, kink_tol, |p| {
        p.clf.forward(&FeatureMap {
            values: p.x[0].value.clone(),
            ..x.clone()
        })
    })?;
    groups.extend(input.into_iter().map(|g| GradCheckGroup {
        is_parameter: false,
        ..g
    }));
    Ok(groups)
}
