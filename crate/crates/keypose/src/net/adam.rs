//! Adam with decoupled weight decay, operating on flat parameter slices.

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One update: bias-corrected first/second moments drive the gradient
/// term; weight decay is decoupled and scales the pre-update parameter
/// (`p -= lr * wd * p`), so it never touches the moment estimates.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let bc1 = 1.0 - BETA1.powi(state.step as i32);
    let bc2 = 1.0 - BETA2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g;
        state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        let decay = lr * weight_decay * params[i];
        params[i] -= lr * m_hat / (v_hat.sqrt() + EPS) + decay;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_zero_decay_is_a_noop() {
        let mut params = vec![1.5, -2.0, 0.25];
        let before = params.clone();
        let mut state = AdamState::new(3);
        adam_step(&mut params, &[0.0; 3], &mut state, 0.1, 0.0);
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // bias-corrected m_hat / sqrt(v_hat) is exactly 1 on the first
        // step with g = 1, so the parameter drops by ~lr
        let mut params = vec![0.0];
        let mut state = AdamState::new(1);
        adam_step(&mut params, &[1.0], &mut state, 0.1, 0.0);
        assert!((params[0] + 0.1).abs() < 1e-7, "got {}", params[0]);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(w) = w^2, gradient 2w
        let mut params = vec![5.0];
        let mut state = AdamState::new(1);
        for _ in 0..2000 {
            let g = 2.0 * params[0];
            adam_step(&mut params, &[g], &mut state, 0.01, 0.0);
        }
        assert!(params[0].abs() < 1e-3, "ended at {}", params[0]);
    }

    #[test]
    fn decay_is_decoupled_from_moments() {
        // with zero gradient the moments stay zero and only the decay
        // term moves the parameter
        let mut params = vec![2.0];
        let mut state = AdamState::new(1);
        adam_step(&mut params, &[0.0], &mut state, 0.1, 0.5);
        assert!((params[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
        assert_eq!(state.m, vec![0.0]);
        assert_eq!(state.v, vec![0.0]);
    }

    #[test]
    fn zero_lr_freezes_parameters_even_with_decay() {
        let mut params = vec![3.0, -1.0];
        let before = params.clone();
        let mut state = AdamState::new(2);
        adam_step(&mut params, &[0.7, -0.3], &mut state, 0.0, 0.01);
        assert_eq!(params, before);
    }
}
