use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// First and second moments for every parameter, plus the step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

/// One Adam update. The L2 penalty is folded into the gradient
/// (`g + weight_decay * param`) before the moment updates.
pub fn adam_step(params: &mut [Tensor], grads: &[Vec<f64>], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if !(cfg.lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(Error::shape("adam_step", &[params.len()], &[grads.len(), state.first.len()]));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, param) in params.iter_mut().enumerate() {
        let (g, m, v) = (&grads[i], &mut state.first[i], &mut state.second[i]);
        if g.len() != param.len() || m.len() != param.len() {
            return Err(Error::shape("adam_step", param.shape(), &[g.len()]));
        }
        for (j, p) in param.data_mut().iter_mut().enumerate() {
            let gj = g[j] + cfg.weight_decay * *p;
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Step-decay schedule: `base_lr * decay^floor(epoch / every)`.
///
/// Computed as a division by `(1/decay)^n` so that decimal decay factors
/// land on the nearest double (`1e-3 -> 1e-4 -> 1e-5`).
pub fn lr_at(epoch: usize, base_lr: f64, decay: f64, every: usize) -> f64 {
    let n = (epoch / every.max(1)) as i32;
    if n == 0 {
        return base_lr;
    }
    let inv = 1.0 / decay;
    if inv.fract() == 0.0 {
        base_lr / inv.powi(n)
    } else {
        base_lr * decay.powi(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut params = vec![Tensor::scalar(0.5)];
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig { weight_decay: 0.0, ..Default::default() };
        adam_step(&mut params, &[vec![1.0]], &mut state, &cfg).unwrap();
        // oracle: m_hat = 1, v_hat = 1
        let expected = 0.5 - 1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((params[0].item() - expected).abs() < 1e-18);
        assert!((0.5 - params[0].item() - 0.000999_999_99).abs() < 1e-12);
    }

    #[test]
    fn zero_grad_without_decay_is_noop() {
        let mut params = vec![Tensor::vector(vec![0.3, -0.2])];
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig { weight_decay: 0.0, ..Default::default() };
        adam_step(&mut params, &[vec![0.0, 0.0]], &mut state, &cfg).unwrap();
        assert_eq!(params[0].data(), &[0.3, -0.2]);
    }

    #[test]
    fn two_steps_apply_bias_correction() {
        let mut params = vec![Tensor::scalar(1.0)];
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig::default();
        adam_step(&mut params, &[vec![0.5]], &mut state, &cfg).unwrap();
        adam_step(&mut params, &[vec![0.5]], &mut state, &cfg).unwrap();
        assert_eq!(state.step, 2);

        // straight-line trace of the update formula
        let (b1, b2, lr, eps, wd) = (0.9f64, 0.999f64, 1e-3, 1e-8, 1e-5);
        let (mut p, mut m, mut v) = (1.0f64, 0.0, 0.0);
        for t in 1..=2 {
            let g = 0.5 + wd * p;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            p -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        assert!((params[0].item() - p).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_lr() {
        let mut params = vec![Tensor::scalar(1.0)];
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig { lr: 0.0, ..Default::default() };
        assert!(adam_step(&mut params, &[vec![1.0]], &mut state, &cfg).is_err());
    }

    #[test]
    fn schedule_matches_recipe() {
        assert_eq!(lr_at(0, 1e-3, 0.1, 3), 1e-3);
        assert_eq!(lr_at(2, 1e-3, 0.1, 3), 1e-3);
        assert_eq!(lr_at(3, 1e-3, 0.1, 3), 1e-4);
        assert_eq!(lr_at(6, 1e-3, 0.1, 3), 1e-5);
        assert_eq!(lr_at(7, 1e-3, 0.1, 3), 1e-5);
    }
}
