use super::ParamTensor;
use crate::{Error, Result};

/// ADAM with bias correction. Moments are allocated on the first step.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {learning_rate} must be finite and >= 0")));
        }
        Ok(Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut ParamTensor>) -> Result<()> {
        let params: Vec<&mut ParamTensor> = params.into_iter().collect();
        if self.m.is_empty() && self.step == 0 {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || params.iter().zip(&self.m).any(|(p, m)| p.len() != m.len()) {
            return Err(Error::Shape("optimizer moments do not match the parameter set".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p.value[i] -= self.learning_rate * mh / (vh.sqrt() + self.eps);
            }
            p.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tensor(v: &[f64], g: &[f64]) -> ParamTensor {
        let mut p = ParamTensor::new("p", vec![v.len()], v.to_vec());
        p.grad.copy_from_slice(g);
        p
    }

    #[test]
    fn zero_gradient_changes_nothing() {
        let mut opt = Adam::new(1e-3).unwrap();
        let mut p = tensor(&[1.0, -2.0], &[0.0, 0.0]);
        for _ in 0..5 {
            opt.step([&mut p]).unwrap();
        }
        assert_eq!(p.value, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_is_lr_against_sign() {
        let mut opt = Adam::new(1e-3).unwrap();
        let mut p = tensor(&[0.0, 0.0, 0.0], &[0.3, -4.0, 40.0]);
        opt.step([&mut p]).unwrap();
        // m̂ = g, v̂ = g², update = lr·g/(|g| + ε)
        for (x, g) in p.value.iter().zip([0.3, -4.0, 40.0f64]) {
            let expect = -1e-3 * g / (g.abs() + 1e-8);
            assert!((x - expect).abs() < 1e-15);
        }
        assert!((p.value[1].abs() - p.value[2].abs()).abs() < 1e-11);
        assert!(p.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_learning_rate_is_frozen() {
        let mut opt = Adam::new(0.0).unwrap();
        let mut p = tensor(&[0.5], &[3.0]);
        opt.step([&mut p]).unwrap();
        assert_eq!(p.value, vec![0.5]);
        assert!(Adam::new(-1.0).is_err());
    }

    #[test]
    fn shape_change_is_rejected() {
        let mut opt = Adam::new(1e-3).unwrap();
        opt.step([&mut tensor(&[0.0], &[1.0])]).unwrap();
        assert!(opt.step([&mut tensor(&[0.0, 1.0], &[1.0, 1.0])]).is_err());
    }

    proptest! {
        #[test]
        fn finite_gradients_finite_updates(gs in proptest::collection::vec(-1e6f64..1e6, 1..8)) {
            let mut opt = Adam::new(1e-3).unwrap();
            let mut p = tensor(&vec![0.0; gs.len()], &gs);
            for _ in 0..3 {
                p.grad.copy_from_slice(&gs);
                opt.step([&mut p]).unwrap();
            }
            prop_assert!(p.value.iter().all(|v| v.is_finite()));
        }
    }
}
