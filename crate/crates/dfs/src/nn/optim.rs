//! Adaptive-moment gradient descent.

use super::NnError;

/// Default learning rate used by the full-scale training presets.
pub const DEFAULT_LEARNING_RATE: f64 = 1.5e-4;

/// Adam state for one flat parameter vector.
///
/// Moments are kept in `f64`; the update is computed in `f64` and written
/// back to the `f32` parameter storage.
#[derive(Debug, Clone)]
pub struct AdamState {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl AdamState {
    /// Standard decay rates 0.9 / 0.999 and epsilon 1e-8.
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Applies one update in place. Rejects non-finite gradients so a
    /// diverging loss aborts with a diagnostic instead of poisoning the
    /// parameters.
    pub fn step(&mut self, params: &mut [f32], grads: &[f64]) -> Result<(), NnError> {
        if params.len() != self.first_moment.len() {
            return Err(NnError::DimMismatch {
                context: "optimizer params",
                expected: self.first_moment.len(),
                got: params.len(),
            });
        }
        if grads.len() != params.len() {
            return Err(NnError::DimMismatch {
                context: "optimizer grads",
                expected: params.len(),
                got: grads.len(),
            });
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient {
                step: self.step + 1,
                index,
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            self.second_moment[i] =
                self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first_moment[i] / bias1;
            let v_hat = self.second_moment[i] / bias2;
            let updated =
                params[i] as f64 - self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            params[i] = updated as f32;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut state = AdamState::new(3, 0.1);
        let mut params = [1.0f32, -2.0, 0.5];
        let before = params;
        for _ in 0..5 {
            state.step(&mut params, &[0.0; 3]).unwrap();
        }
        assert_eq!(params, before);
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        let mut state = AdamState::new(1, 0.05);
        let mut params = [0.0f32];
        let mut last = params[0];
        for _ in 0..10 {
            state.step(&mut params, &[3.0]).unwrap();
            assert!(params[0] < last, "positive gradient must decrease param");
            last = params[0];
        }

        let mut state = AdamState::new(1, 0.05);
        let mut params = [0.0f32];
        let mut last = params[0];
        for _ in 0..10 {
            state.step(&mut params, &[-3.0]).unwrap();
            assert!(params[0] > last, "negative gradient must increase param");
            last = params[0];
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(w) = w^2, grad = 2w; 500 steps must shrink |w| below 10% of the
        // initial value.
        let mut state = AdamState::new(1, 0.01);
        let mut params = [1.0f32];
        for _ in 0..500 {
            let grad = 2.0 * params[0] as f64;
            state.step(&mut params, &[grad]).unwrap();
        }
        assert!(
            params[0].abs() < 0.1,
            "bowl did not converge: w = {}",
            params[0]
        );
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut state = AdamState::new(2, 0.01);
        let mut params = [0.0f32, 0.0];
        let err = state.step(&mut params, &[1.0, f64::NAN]).unwrap_err();
        assert!(matches!(
            err,
            NnError::NonFiniteGradient { step: 1, index: 1 }
        ));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut state = AdamState::new(2, 0.01);
        let mut params = [0.0f32; 3];
        assert!(state.step(&mut params, &[0.0; 3]).is_err());
    }
}
