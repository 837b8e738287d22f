use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::ParameterSet;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction; moments mirror the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub m: ParameterSet<T>,
    pub v: ParameterSet<T>,
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParameterSet<T>) -> Self {
        Self { config, m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    pub fn step(&mut self, params: &mut ParameterSet<T>, grads: &ParameterSet<T>) -> Result<()> {
        params.check_layout(grads)?;
        params.check_layout(&self.m)?;
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let step = T::lit(c.lr / (1.0 - c.beta1.powi(self.t as i32)));
        let corr2 = T::lit(1.0 / (1.0 - c.beta2.powi(self.t as i32)));
        let eps = T::lit(c.eps);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name).expect("layout checked");
            let m = self.m.get_mut(name).expect("layout checked");
            let v = self.v.get_mut(name).expect("layout checked");
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p -= step * *m / ((*v * corr2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = ParameterSet::<f64>::new();
        p.insert("w", Tensor::from_vec(vec![3], vec![1.0, -2.0, 0.5]));
        let mut g = p.zeros_like();
        g.get_mut("w").unwrap().data_mut().copy_from_slice(&[0.3, -4.0, 0.0]);
        let mut opt = Adam::new(AdamConfig { lr: 0.01, ..AdamConfig::default() }, &p);
        opt.step(&mut p, &g).unwrap();
        let w = p.get("w").unwrap().data();
        assert!((w[0] - 0.99).abs() < 1e-6);
        assert!((w[1] + 1.99).abs() < 1e-6);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = ParameterSet::<f64>::new();
        p.insert("w", Tensor::from_vec(vec![2], vec![3.0, -1.0]));
        let mut opt = Adam::new(AdamConfig { lr: 0.05, ..AdamConfig::default() }, &p);
        for _ in 0..2000 {
            let g = ParameterSet::from_iter([("w".to_string(), p.get("w").unwrap().map(|v| 2.0 * (v - 0.5)))]);
            opt.step(&mut p, &g).unwrap();
        }
        assert!(p.get("w").unwrap().data().iter().all(|v| (v - 0.5).abs() < 1e-3));
    }
}
