//! Adam with bias correction and a linear learning-rate decay schedule.

use super::{ParamSet, TensorError};

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub base_lr: f32,
    pub total_steps: usize,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl AdamConfig {
    pub fn new(base_lr: f32, total_steps: usize) -> Self {
        Self { base_lr, total_steps, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Per-parameter first/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: usize,
    first_moment: Vec<Vec<f32>>,
    second_moment: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, params: &ParamSet<f32>) -> Self {
        let first_moment = params.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
        let second_moment = params.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
        Self { config, step: 0, first_moment, second_moment }
    }

    /// Linearly decayed learning rate: `base_lr * (1 - step/total_steps)`.
    pub fn lr_at(&self, step: usize) -> Result<f32, TensorError> {
        if step > self.config.total_steps {
            return Err(TensorError::StepOverflow { step, total: self.config.total_steps });
        }
        Ok(self.config.base_lr * (1.0 - step as f32 / self.config.total_steps as f32))
    }

    /// One bias-corrected Adam update over every parameter; zeroes grads.
    pub fn adam_step(&mut self, params: &mut ParamSet<f32>) -> Result<(), TensorError> {
        if self.step >= self.config.total_steps {
            return Err(TensorError::StepOverflow {
                step: self.step + 1,
                total: self.config.total_steps,
            });
        }
        for (_, p) in params.iter() {
            if !p.grad_set {
                return Err(TensorError::MissingGrad { name: p.name.clone() });
            }
        }
        let lr = self.lr_at(self.step)?;
        let t = (self.step + 1) as i32;
        let AdamConfig { beta1, beta2, epsilon, .. } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (idx, (_, p)) in params.iter_mut().enumerate() {
            let m = &mut self.first_moment[idx];
            let v = &mut self.second_moment[idx];
            let w = p.value.data_mut();
            for j in 0..w.len() {
                let g = p.grad[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                w[j] -= lr * mhat / (vhat.sqrt() + epsilon);
            }
        }
        params.zero_grads();
        self.step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use approx::assert_relative_eq;

    fn one_param(v: f32) -> ParamSet<f32> {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::new(vec![1], vec![v]).unwrap());
        ps
    }

    #[test]
    fn lr_linear_decay() {
        let ps = one_param(0.0);
        let st = OptimizerState::new(AdamConfig::new(5e-5, 1000), &ps);
        assert_eq!(st.lr_at(0).unwrap(), 5e-5);
        assert_relative_eq!(st.lr_at(500).unwrap(), 2.5e-5);
        assert_relative_eq!(st.lr_at(250).unwrap(), 3.75e-5);
        assert_eq!(st.lr_at(1000).unwrap(), 0.0);
        assert!(st.lr_at(1001).is_err());
    }

    #[test]
    fn single_step_magnitude_is_lr() {
        // Bias-corrected first update moves by ~lr for unit gradient.
        let mut ps = one_param(1.0);
        let mut st = OptimizerState::new(AdamConfig::new(0.1, 10), &ps);
        let p = ps.get_mut(crate::tensor::ParamId(0));
        p.grad[0] = 1.0;
        p.grad_set = true;
        st.adam_step(&mut ps).unwrap();
        let w = ps.iter().next().unwrap().1.value.data()[0];
        assert_relative_eq!(w, 0.9, epsilon = 1e-6);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let mut ps = one_param(1.5);
        let mut st = OptimizerState::new(AdamConfig::new(0.1, 10), &ps);
        let p = ps.get_mut(crate::tensor::ParamId(0));
        p.grad_set = true; // zero gradient, explicitly set
        st.adam_step(&mut ps).unwrap();
        assert_eq!(ps.iter().next().unwrap().1.value.data()[0], 1.5);
    }

    #[test]
    fn missing_grad_rejected() {
        let mut ps = one_param(1.0);
        let mut st = OptimizerState::new(AdamConfig::new(0.1, 10), &ps);
        let err = st.adam_step(&mut ps).unwrap_err();
        assert!(err.to_string().contains('w'));
    }
}
