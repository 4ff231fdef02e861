//! SGD with Nesterov momentum.
//!
//! Update per parameter: `v ← μ·v + g`, then `w ← w − lr·(g + μ·v)`.

use std::collections::BTreeMap;

use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SgdNesterov {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, Tensor>,
}

impl SgdNesterov {
    pub fn new(momentum: f64) -> Self {
        Self {
            momentum,
            weight_decay: 0.0,
            velocity: BTreeMap::new(),
        }
    }

    pub fn velocity(&self, name: &str) -> Option<&Tensor> {
        self.velocity.get(name)
    }

    /// Applies one update. Parameters without a gradient are left untouched.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
    ) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        for (name, g) in grads {
            let w = params
                .get_mut(name)
                .ok_or_else(|| Error::Config(format!("gradient for unknown parameter {name}")))?;
            if w.shape() != g.shape() {
                return Err(Error::Config(format!(
                    "gradient shape {:?} does not match parameter {name} {:?}",
                    g.shape(),
                    w.shape()
                )));
            }
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            sgd_nesterov_step(w.data_mut(), g.data(), v.data_mut(), lr, self.momentum, self.weight_decay);
        }
        Ok(())
    }
}

/// Elementwise Nesterov update on raw slices.
pub fn sgd_nesterov_step(w: &mut [f64], g: &[f64], v: &mut [f64], lr: f64, momentum: f64, weight_decay: f64) {
    for ((wi, &gi), vi) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        let gi = gi + weight_decay * *wi;
        *vi = momentum * *vi + gi;
        *wi -= lr * (gi + momentum * *vi);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, v: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([(name.to_string(), Tensor::scalar(v))])
    }

    #[test]
    fn single_step_cases() {
        let mut opt = SgdNesterov::new(0.9);
        let mut p = one("w", 1.0);
        opt.step(&mut p, &one("w", 1.0), 0.1).unwrap();
        assert!((p["w"].item() - 0.81).abs() < 1e-15);
        assert_eq!(opt.velocity("w").unwrap().item(), 1.0);

        let mut plain = SgdNesterov::new(0.0);
        let mut p = one("w", 1.0);
        plain.step(&mut p, &one("w", 1.0), 0.1).unwrap();
        assert!((p["w"].item() - 0.9).abs() < 1e-15);

        let mut p = one("w", 1.0);
        SgdNesterov::new(0.9).step(&mut p, &one("w", 0.0), 0.1).unwrap();
        assert_eq!(p["w"].item(), 1.0);
    }

    #[test]
    fn scalar_quadratic_five_steps() {
        // f(w) = w²/2, w0 = 1, lr 0.1, μ 0.9; sequence applied by hand.
        let expected = [0.81, 0.5751, 0.327321, 0.09388791, -0.1045816839];
        let mut opt = SgdNesterov::new(0.9);
        let mut p = one("w", 1.0);
        for want in expected {
            let g = one("w", p["w"].item());
            opt.step(&mut p, &g, 0.1).unwrap();
            assert!((p["w"].item() - want).abs() < 1e-12, "{} vs {want}", p["w"].item());
        }
    }

    #[test]
    fn rejects_bad_lr_and_shapes() {
        let mut opt = SgdNesterov::new(0.9);
        let mut p = one("w", 1.0);
        assert!(opt.step(&mut p, &one("w", 1.0), 0.0).is_err());
        assert!(opt.step(&mut p, &one("w", 1.0), -0.1).is_err());
        let g = BTreeMap::from([("w".to_string(), Tensor::zeros(&[2]))]);
        assert!(opt.step(&mut p, &g, 0.1).is_err());
    }
}
