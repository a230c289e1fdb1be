use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-8,
        }
    }
}

/// Adam with coupled L2 weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        Self {
            config,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [T], grads: &[T], lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Domain(format!("learning rate must be positive, got {lr}")));
        }
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let step_size = T::lit(lr / bc1);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let wd = T::lit(c.weight_decay);
        let eps = T::lit(c.eps);
        let inv_sqrt_bc2 = T::lit(1.0 / bc2.sqrt());
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            let g = g + wd * *p;
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            *p -= step_size * *m / ((*v).sqrt() * inv_sqrt_bc2 + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_positive_lr() {
        let mut opt = Adam::<f64>::new(AdamConfig::default(), 1);
        let mut p = [1.0];
        assert!(matches!(opt.update(&mut p, &[0.0], 0.0), Err(Error::Domain(_))));
        assert!(opt.update(&mut p, &[0.0], -1e-3).is_err());
    }

    #[test]
    fn zero_gradient_only_shrinks() {
        let mut opt = Adam::<f64>::new(AdamConfig::default(), 3);
        let mut p = [0.5, -2.0, 0.0];
        opt.update(&mut p, &[0.0; 3], 1e-4).unwrap();
        assert!(p[0] < 0.5 && p[0] > 0.0);
        assert!(p[1] > -2.0 && p[1] < 0.0);
        assert_eq!(p[2], 0.0);

        let mut no_decay = Adam::<f64>::new(
            AdamConfig {
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
            1,
        );
        let mut q = [0.5];
        no_decay.update(&mut q, &[0.0], 1e-4).unwrap();
        assert_eq!(q, [0.5]);
    }

    #[test]
    fn descends_a_quadratic() {
        let mut opt = Adam::<f64>::new(AdamConfig::default(), 1);
        let mut p = [1.0];
        let g = [2.0 * p[0]];
        opt.update(&mut p, &g, 1e-2).unwrap();
        assert!(p[0].abs() < 1.0);
        // first Adam step moves by ~lr regardless of gradient scale
        assert!((p[0] - 0.99).abs() < 1e-6);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut opt = Adam::<f32>::new(AdamConfig::default(), 2);
            let mut p = [0.3f32, -0.7];
            for i in 0..5 {
                let g = [p[0] * 1.5 + i as f32, p[1] - 0.25];
                opt.update(&mut p, &g, 1e-3).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }
}
