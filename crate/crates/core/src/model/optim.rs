use serde::{Deserialize, Serialize};

use super::tape::Tensor;
use crate::error::{Error, Result};

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Result<Self> {
        let ok = lr > 0.0
            && (0.0..1.0).contains(&beta1)
            && (0.0..1.0).contains(&beta2)
            && eps > 0.0
            && weight_decay >= 0.0;
        if !ok {
            return Err(Error::Config(format!(
                "invalid AdamW hyper-parameters lr={lr} beta1={beta1} beta2={beta2} eps={eps} wd={weight_decay}"
            )));
        }
        Ok(AdamW {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// `θ ← θ(1 - lr·wd)`, then the bias-corrected Adam update.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::SizeMismatch {
                expected: params.len(),
                got: grads.len(),
            });
        }
        if self.m.is_empty() {
            self.m = params
                .iter()
                .map(|p| Tensor::zeros(p.shape.clone()))
                .collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::SizeMismatch {
                expected: self.m.len(),
                got: params.len(),
            });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let decay = 1.0 - self.lr * self.weight_decay;
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            if p.len() != g.len() {
                return Err(Error::SizeMismatch {
                    expected: p.len(),
                    got: g.len(),
                });
            }
            for i in 0..p.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                p.data[i] = p.data[i] * decay - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Vec<Tensor> {
        vec![Tensor::scalar(v)]
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut opt = AdamW::new(0.1, 0.9, 0.999, 1e-8, 0.5).unwrap();
        let mut p = one(2.0);
        opt.step(&mut p, &one(0.0)).unwrap();
        assert!((p[0].data[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [1e-3, 1.0, 1e3] {
            let mut opt = AdamW::new(0.01, 0.9, 0.999, 1e-12, 0.0).unwrap();
            let mut p = one(0.0);
            opt.step(&mut p, &one(g)).unwrap();
            assert!((p[0].data[0] + 0.01).abs() < 1e-9, "g={g}");
        }
    }

    #[test]
    fn two_step_trace() {
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.99, 1e-8);
        let mut opt = AdamW::new(lr, b1, b2, eps, 0.0).unwrap();
        let mut p = one(1.0);
        opt.step(&mut p, &one(1.0)).unwrap();
        opt.step(&mut p, &one(-2.0)).unwrap();
        let m1 = (1.0 - b1) * 1.0;
        let v1 = (1.0 - b2) * 1.0;
        let after1 = 1.0 - lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        let m2 = b1 * m1 + (1.0 - b1) * -2.0;
        let v2 = b2 * v1 + (1.0 - b2) * 4.0;
        let after2 = after1 - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
        assert!((p[0].data[0] - after2).abs() < 1e-14);
        assert_eq!(opt.steps_taken(), 2);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let lr = 0.01;
        let mut opt = AdamW::new(lr, 0.9, 0.999, 1e-8, 0.0).unwrap();
        let mut p = one(0.0);
        let mut last = 0.0;
        for _ in 0..500 {
            let before = p[0].data[0];
            opt.step(&mut p, &one(3.0)).unwrap();
            last = before - p[0].data[0];
        }
        assert!((last - lr).abs() < 1e-8, "{last}");
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(AdamW::new(0.0, 0.9, 0.999, 1e-8, 0.0).is_err());
        assert!(AdamW::new(0.1, 1.0, 0.999, 1e-8, 0.0).is_err());
        let mut opt = AdamW::new(0.1, 0.9, 0.999, 1e-8, 0.0).unwrap();
        assert!(opt.step(&mut one(0.0), &[]).is_err());
    }
}
