//! Diagonal Gaussians parameterized as (mean, log-variance).

use super::rng::RngStream;
use super::NnError;

/// Encoders output log-variance; it is clamped to this range before any
/// exponentiation. The upper bound caps the variance at `e^10`; the lower
/// bound keeps the standard deviation strictly positive (`e^-15`) without
/// disturbing near-zero-variance limits.
pub const LOG_VAR_MIN: f64 = -30.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// A diagonal Gaussian `N(mean, diag(exp(log_var)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mean: Vec<f64>,
    log_var: Vec<f64>,
}

impl GaussianParams {
    /// Builds a Gaussian, validating that both vectors are finite and of
    /// equal length. `log_var` is stored as given (no clamping); use
    /// [`GaussianParams::from_encoder_output`] for raw encoder outputs.
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self, NnError> {
        if mean.len() != log_var.len() {
            return Err(NnError::DimMismatch {
                context: "gaussian params",
                expected: mean.len(),
                got: log_var.len(),
            });
        }
        if mean.iter().chain(log_var.iter()).any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite {
                context: "gaussian params",
            });
        }
        Ok(Self { mean, log_var })
    }

    /// Splits a raw encoder output `(mean ‖ log_var)` in half and clamps the
    /// log-variance to `[LOG_VAR_MIN, LOG_VAR_MAX]`.
    ///
    /// The boolean mask marks coordinates where the clamp was active; their
    /// log-variance gradient is zero.
    pub fn from_encoder_output(output: &[f64]) -> Result<(Self, Vec<bool>), NnError> {
        if output.len() % 2 != 0 {
            return Err(NnError::DimMismatch {
                context: "encoder output split",
                expected: output.len() + 1,
                got: output.len(),
            });
        }
        let dim = output.len() / 2;
        let mean = output[..dim].to_vec();
        let mut log_var = Vec::with_capacity(dim);
        let mut clamped = Vec::with_capacity(dim);
        for &raw in &output[dim..] {
            let v = raw.clamp(LOG_VAR_MIN, LOG_VAR_MAX);
            clamped.push(v != raw);
            log_var.push(v);
        }
        let g = Self::new(mean, log_var)?;
        Ok((g, clamped))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_var(&self) -> &[f64] {
        &self.log_var
    }

    /// Per-coordinate standard deviation `exp(log_var / 2)`.
    pub fn std(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| (0.5 * lv).exp()).collect()
    }

    /// Per-coordinate variance `exp(log_var)`.
    pub fn variance(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| lv.exp()).collect()
    }
}

/// Draws `z = mean + exp(log_var / 2) ⊙ eps` with `eps ~ N(0, I)` from `rng`.
pub fn reparameterize(g: &GaussianParams, rng: &mut RngStream) -> Vec<f64> {
    let eps = rng.standard_normal_vec(g.dim());
    reparameterize_with(g, &eps)
}

/// Reparameterization with caller-supplied noise; the differentiable path
/// used inside training graphs, where `eps` is held fixed.
pub fn reparameterize_with(g: &GaussianParams, eps: &[f64]) -> Vec<f64> {
    debug_assert_eq!(eps.len(), g.dim());
    g.mean
        .iter()
        .zip(&g.log_var)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}

/// Backward of the reparameterization: given `dLoss/dz`, accumulates
/// `dLoss/dmean += upstream` and `dLoss/dlog_var += upstream * 0.5 * std * eps`.
pub fn reparameterize_backward(
    g: &GaussianParams,
    eps: &[f64],
    upstream: &[f64],
    d_mean: &mut [f64],
    d_log_var: &mut [f64],
) {
    debug_assert_eq!(upstream.len(), g.dim());
    for i in 0..g.dim() {
        let std = (0.5 * g.log_var[i]).exp();
        d_mean[i] += upstream[i];
        d_log_var[i] += upstream[i] * 0.5 * std * eps[i];
    }
}
