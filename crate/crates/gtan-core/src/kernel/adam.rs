//! Adam optimizer with bias correction.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Per-parameter first/second moment buffers plus the step counter.
///
/// Parameters are registered positionally on the first update; every later
/// call must pass the same tensors in the same order.
#[derive(Clone, Debug)]
pub struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Result<Self> {
        if lr <= 0.0 {
            return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
        }
        Ok(AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update over named (parameter, gradient) pairs.
    ///
    /// Deterministic given identical inputs. A NaN gradient aborts with a
    /// diagnostic naming the offending parameter.
    pub fn step(&mut self, params: &mut [(&str, &mut Tensor, &Tensor)]) -> Result<()> {
        if self.m.is_empty() {
            for (_, p, _) in params.iter() {
                self.m.push(vec![0.0; p.len()]);
                self.v.push(vec![0.0; p.len()]);
            }
        }
        if self.m.len() != params.len() {
            return Err(Error::Usage(format!(
                "adam registered {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for (name, p, g) in params.iter() {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter '{name}'")));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);

        for (slot, (_, p, g)) in params.iter_mut().enumerate() {
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            for (j, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gv;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gv * gv;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut adam = AdamState::new(0.01).unwrap();
        let mut p = Tensor::from_vec(2, 1, vec![1.0, -2.0]).unwrap();
        let g = Tensor::zeros(2, 1);
        for _ in 0..5 {
            adam.step(&mut [("p", &mut p, &g)]).unwrap();
        }
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        // With g = 1 the bias-corrected first step is exactly
        // lr * 1 / (1 + eps) regardless of the betas.
        let mut adam = AdamState::new(0.001).unwrap();
        let mut p = Tensor::scalar(0.0);
        let g = Tensor::scalar(1.0);
        adam.step(&mut [("p", &mut p, &g)]).unwrap();
        assert!((p.item() + 0.001).abs() < 1e-9, "delta {}", p.item());
    }

    #[test]
    fn step_counter_increases_by_one() {
        let mut adam = AdamState::new(0.1).unwrap();
        let mut p = Tensor::scalar(0.0);
        let g = Tensor::scalar(0.5);
        for want in 1..=4 {
            adam.step(&mut [("p", &mut p, &g)]).unwrap();
            assert_eq!(adam.step_count(), want);
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let mut adam = AdamState::new(0.01).unwrap();
            let mut p = Tensor::from_vec(3, 1, vec![0.5, -0.5, 2.0]).unwrap();
            for s in 0..10 {
                let g =
                    Tensor::from_vec(3, 1, vec![0.1 * s as f64, -0.2, 0.05 * s as f64]).unwrap();
                adam.step(&mut [("p", &mut p, &g)]).unwrap();
            }
            p.data().to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b, "same inputs must give bit-identical parameters");
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut adam = AdamState::new(0.01).unwrap();
        let mut p = Tensor::scalar(1.0);
        let g = Tensor::scalar(f64::NAN);
        let err = adam.step(&mut [("w_o", &mut p, &g)]).unwrap_err();
        assert!(err.to_string().contains("w_o"));
    }

    #[test]
    fn rejects_nonpositive_lr() {
        assert!(AdamState::new(0.0).is_err());
        assert!(AdamState::new(-1.0).is_err());
    }
}
