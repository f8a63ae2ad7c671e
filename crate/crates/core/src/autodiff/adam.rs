use serde::{Deserialize, Serialize};

use super::{AutodiffError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<(), AutodiffError> {
    if params.len() != grads.len() {
        return Err(AutodiffError::ShapeMismatch { op: "adam_step", left: vec![params.len()], right: vec![grads.len()] });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(AutodiffError::ShapeMismatch { op: "adam_step", left: p.shape().to_vec(), right: g.shape().to_vec() });
        }
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        state.v = state.m.clone();
    } else if state.m.len() != params.len() || state.m.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape()) {
        return Err(AutodiffError::ShapeMismatch { op: "adam_state", left: vec![state.m.len()], right: vec![params.len()] });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let (pd, gd) = (p.data_mut(), g.data());
        for k in 0..pd.len() {
            let mk = &mut m.data_mut()[k];
            *mk = cfg.beta1 * *mk + (1.0 - cfg.beta1) * gd[k];
            let mhat = *mk / bc1;
            let vk = &mut v.data_mut()[k];
            *vk = cfg.beta2 * *vk + (1.0 - cfg.beta2) * gd[k] * gd[k];
            let vhat = *vk / bc2;
            pd[k] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut params = vec![Tensor::row(vec![1.0, -2.0, 3.5])];
        let before = params.clone();
        let mut state = AdamState::new();
        for _ in 0..5 {
            adam_step(&mut params, &[Tensor::zeros(1, 3)], &mut state, &AdamConfig::default()).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn single_scalar_step_matches_formula() {
        let cfg = AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut params = vec![Tensor::scalar(2.0)];
        let mut state = AdamState::new();
        adam_step(&mut params, &[Tensor::scalar(0.5)], &mut state, &cfg).unwrap();
        // m = 0.05, v = 0.00025; corrected: m̂ = 0.5, v̂ = 0.25.
        let m_hat = (0.1 * 0.5) / (1.0 - 0.9);
        let v_hat = (0.001 * 0.25) / (1.0 - 0.999);
        let expected = 2.0 - 0.1 * m_hat / (f64::sqrt(v_hat) + 1e-8);
        assert!((params[0].item() - expected).abs() < 1e-15);
        assert!((params[0].item() - 1.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_parabola() {
        let cfg = AdamConfig { lr: 0.1, ..Default::default() };
        let mut params = vec![Tensor::scalar(1.0)];
        let mut state = AdamState::new();
        let mut history = vec![1.0];
        for _ in 0..200 {
            let x = params[0].item();
            adam_step(&mut params, &[Tensor::scalar(2.0 * x)], &mut state, &cfg).unwrap();
            history.push(params[0].item().abs());
        }
        // Monotone descent while far from the optimum, then small.
        for w in history[..8].windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(history.last().unwrap() < &0.05);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let mut params = vec![Tensor::zeros(2, 2)];
        let err = adam_step(&mut params, &[Tensor::zeros(1, 2)], &mut AdamState::new(), &AdamConfig::default());
        assert!(matches!(err, Err(AutodiffError::ShapeMismatch { .. })));
    }
}
