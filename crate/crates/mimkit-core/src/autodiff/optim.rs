//! Adam with decoupled weight decay and a stepped exponential
//! learning-rate schedule.

use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Optimizer hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamParams {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled weight-decay coefficient.
    pub weight_decay: f64,
    /// Multiplier applied to the learning rate at every decay boundary.
    pub decay_rate: f64,
    /// Steps between decay boundaries (a third of an epoch in training).
    pub steps_per_decay: usize,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            base_lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            decay_rate: 0.98,
            steps_per_decay: usize::MAX,
        }
    }
}

/// First/second moment accumulators for one parameter group.
#[derive(Debug, Clone)]
pub struct OptimizerState<F> {
    pub params: AdamParams,
    pub step: usize,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

impl<F: Scalar> OptimizerState<F> {
    /// Fresh state with zero moments shaped like `shapes`.
    pub fn new(params: AdamParams, shapes: &[&[usize]]) -> Self {
        OptimizerState {
            params,
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// Learning rate in effect for the upcoming step.
    pub fn current_lr(&self) -> f64 {
        let intervals = if self.params.steps_per_decay == usize::MAX {
            0
        } else {
            self.step / self.params.steps_per_decay
        };
        self.params.base_lr * self.params.decay_rate.powi(intervals as i32)
    }

    pub fn moments(&self) -> (&[Tensor<F>], &[Tensor<F>]) {
        (&self.m, &self.v)
    }

    /// Restores moments and step counter from a checkpoint.
    pub fn restore(&mut self, step: usize, m: Vec<Tensor<F>>, v: Vec<Tensor<F>>) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::dim(format!(
                "optimizer state has {} parameter groups, checkpoint has {}",
                self.m.len(),
                m.len()
            )));
        }
        for (cur, new) in self.m.iter().zip(&m).chain(self.v.iter().zip(&v)) {
            if cur.shape() != new.shape() {
                return Err(Error::dim("optimizer moment shape mismatch"));
            }
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// One AdamW update over all parameter tensors.
    ///
    /// Bias-corrected moments, then
    /// `p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)`.
    pub fn adam_step(&mut self, params: &mut [&mut Tensor<F>], grads: &[&Tensor<F>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dim(format!(
                "adam_step got {} params / {} grads for {} groups",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        let lr = self.current_lr();
        let t = (self.step + 1) as i32;
        let b1 = self.params.beta1;
        let b2 = self.params.beta2;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let b1f = F::from_f64(b1);
        let b2f = F::from_f64(b2);
        let one_m_b1 = F::from_f64(1.0 - b1);
        let one_m_b2 = F::from_f64(1.0 - b2);
        let inv_bc1 = F::from_f64(1.0 / bc1);
        let inv_bc2 = F::from_f64(1.0 / bc2);
        let eps = F::from_f64(self.params.epsilon);
        let lr_f = F::from_f64(lr);
        let wd = F::from_f64(self.params.weight_decay);

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.shape() != g.shape() {
                return Err(Error::dim("parameter/gradient shape mismatch"));
            }
            let pd = p.data_mut();
            let gd = g.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                let gi = gd[i];
                md[i] = md[i] * b1f + gi * one_m_b1;
                vd[i] = vd[i] * b2f + gi * gi * one_m_b2;
                let m_hat = md[i] * inv_bc1;
                let v_hat = vd[i] * inv_bc2;
                pd[i] -= lr_f * (m_hat / (v_hat.sqrt() + eps) + wd * pd[i]);
            }
        }
        self.step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_zero_decay_leaves_parameters_unchanged() {
        let mut p = Tensor::<f64>::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = Tensor::<f64>::zeros(&[3]);
        let mut opt = OptimizerState::new(
            AdamParams {
                weight_decay: 0.0,
                ..AdamParams::default()
            },
            &[&[3]],
        );
        let before = p.data().to_vec();
        opt.adam_step(&mut [&mut p], &[&g]).unwrap();
        assert_eq!(p.data(), &before[..]);
    }

    #[test]
    fn unit_gradient_first_step_moves_by_lr() {
        // With constant gradient 1, bias correction gives m_hat = 1 and
        // v_hat = 1, so the first update is -lr / (1 + eps).
        let mut p = Tensor::<f64>::scalar(0.0);
        let g = Tensor::<f64>::scalar(1.0);
        let mut opt = OptimizerState::new(
            AdamParams {
                base_lr: 1e-3,
                weight_decay: 0.0,
                ..AdamParams::default()
            },
            &[&[1]],
        );
        opt.adam_step(&mut [&mut p], &[&g]).unwrap();
        assert!((p.item() + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn lr_decays_by_rate_every_interval() {
        let mut opt = OptimizerState::<f64>::new(
            AdamParams {
                base_lr: 1e-3,
                steps_per_decay: 10,
                ..AdamParams::default()
            },
            &[],
        );
        assert!((opt.current_lr() - 1e-3).abs() < 1e-15);
        for _ in 0..30 {
            opt.adam_step(&mut [], &[]).unwrap();
        }
        // After 3 completed intervals the rate has decayed three times.
        assert!((opt.current_lr() - 1e-3 * 0.98f64.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn decoupled_decay_shrinks_parameters_without_gradient() {
        let mut p = Tensor::<f64>::scalar(2.0);
        let g = Tensor::<f64>::scalar(0.0);
        let mut opt = OptimizerState::new(
            AdamParams {
                base_lr: 0.1,
                weight_decay: 0.01,
                ..AdamParams::default()
            },
            &[&[1]],
        );
        opt.adam_step(&mut [&mut p], &[&g]).unwrap();
        // p -= lr * wd * p
        assert!((p.item() - (2.0 - 0.1 * 0.01 * 2.0)).abs() < 1e-12);
    }
}
