//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Hyperparameters and per-parameter moment state.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(param_shapes: &[Vec<usize>], lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            second: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one decoupled-decay update:
    /// p ← p − lr·wd·p − lr·m̂/(√v̂ + ε).
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::ShapeMismatch {
                op: "adamw",
                details: format!(
                    "{} params, {} grads, {} states",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            });
        }
        for (i, p) in params.iter().enumerate() {
            if p.shape() != grads[i].shape() || p.shape() != self.first[i].shape() {
                return Err(Error::ShapeMismatch {
                    op: "adamw",
                    details: format!(
                        "param {i}: {:?} vs grad {:?} vs moment {:?}",
                        p.shape(),
                        grads[i].shape(),
                        self.first[i].shape()
                    ),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let one = T::one();
        let corr1 = T::of(1.0 - self.beta1.powi(t));
        let corr2 = T::of(1.0 - self.beta2.powi(t));
        let lr = T::of(self.lr);
        let eps = T::of(self.eps);
        let decay = T::of(self.lr * self.weight_decay);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let pd = p.data_mut();
            let gd = g.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            for j in 0..pd.len() {
                md[j] = b1 * md[j] + (one - b1) * gd[j];
                vd[j] = b2 * vd[j] + (one - b2) * gd[j] * gd[j];
                let mhat = md[j] / corr1;
                let vhat = vd[j] / corr2;
                pd[j] = pd[j] - decay * pd[j] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut params = vec![Tensor::<f64>::from_f64(&[2], &[1.0, -2.0]).unwrap()];
        let grads = vec![Tensor::<f64>::zeros(&[2])];
        let mut opt = AdamW::new(&[vec![2]], 0.1, 0.0);
        opt.step(&mut params, &grads).unwrap();
        assert_eq!(params[0].data(), &[1.0, -2.0]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn hand_executed_first_step() {
        // p=1, g=1, lr=0.1, betas (0.9, 0.999), eps 1e-8, wd 0:
        // m̂=1, v̂=1 → p ≈ 0.9000
        let mut params = vec![Tensor::<f64>::from_f64(&[1], &[1.0]).unwrap()];
        let grads = vec![Tensor::<f64>::from_f64(&[1], &[1.0]).unwrap()];
        let mut opt = AdamW::new(&[vec![1]], 0.1, 0.0);
        opt.step(&mut params, &grads).unwrap();
        assert!((params[0].data()[0] - 0.9).abs() < 1e-6, "{}", params[0].data()[0]);
    }

    #[test]
    fn decoupled_decay_shrinks_by_lr_wd() {
        let mut params = vec![Tensor::<f64>::from_f64(&[1], &[2.0]).unwrap()];
        let grads = vec![Tensor::<f64>::zeros(&[1])];
        let mut opt = AdamW::new(&[vec![1]], 0.1, 0.1);
        opt.step(&mut params, &grads).unwrap();
        assert!((params[0].data()[0] - 2.0 * 0.99).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = vec![Tensor::<f64>::zeros(&[2])];
        let grads = vec![Tensor::<f64>::zeros(&[3])];
        let mut opt = AdamW::new(&[vec![2]], 0.1, 0.0);
        assert!(opt.step(&mut params, &grads).is_err());
    }
}
