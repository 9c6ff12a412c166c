use super::TrainError;
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
    pub step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    /// Applies one bias-corrected update in place.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), TrainError> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(TrainError::Config(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(TrainError::Config(format!(
                    "tensor {i}: parameter {:?}, gradient {:?}, state {:?}",
                    p.shape(),
                    g.shape(),
                    self.first[i].shape()
                )));
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let iter = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((theta, &grad), (m, v)) in iter {
                *m = beta1 * *m + (1.0 - beta1) * grad;
                *v = beta2 * *v + (1.0 - beta2) * grad * grad;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(lr: f64) -> AdamConfig {
        AdamConfig {
            learning_rate: lr,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut params = vec![Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = params.clone();
        let mut adam = Adam::new(config(0.1), &params);
        adam.step(&mut params, &[Tensor::zeros(&[3])]).unwrap();
        assert_eq!(params, before);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // m = 0.1 g, v = 0.001 g^2; corrected m_hat = g, v_hat = g^2.
        let g = 0.5;
        let mut params = vec![Tensor::scalar(1.0)];
        let mut adam = Adam::new(config(0.1), &params);
        adam.step(&mut params, &[Tensor::scalar(g)]).unwrap();
        let expected = 1.0 - 0.1 * g / (g + 1e-8);
        assert!(
            (params[0].item() - expected).abs() < 1e-15,
            "{}",
            params[0].item()
        );
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let lr = 1e-3;
        let mut params = vec![Tensor::new(&[2], vec![0.0, 0.0]).unwrap()];
        let grads = [Tensor::new(&[2], vec![0.3, -7.0]).unwrap()];
        let mut adam = Adam::new(config(lr), &params);
        let mut last = params[0].clone();
        for _ in 0..1000 {
            last = params[0].clone();
            adam.step(&mut params, &grads).unwrap();
        }
        let delta: Vec<f64> = params[0]
            .data()
            .iter()
            .zip(last.data())
            .map(|(a, b)| a - b)
            .collect();
        assert!((delta[0] + lr).abs() < 0.01 * lr, "{delta:?}");
        assert!((delta[1] - lr).abs() < 0.01 * lr, "{delta:?}");
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut params = vec![Tensor::zeros(&[2])];
        let mut adam = Adam::new(config(0.1), &params);
        assert!(adam.step(&mut params, &[Tensor::zeros(&[3])]).is_err());
        assert_eq!(adam.step, 0);
    }
}
