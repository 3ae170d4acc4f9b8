//! Central finite-difference gradient verification.

/// Default perturbation step for central differences.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter index with the worst error, if any coordinate was checked.
    pub worst_index: Option<usize>,
    pub params_checked: usize,
    pub params_skipped: usize,
    pub tolerance: f64,
    pub passed: bool,
}

fn rel_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(1e-8);
    (a - b).abs() / scale
}

/// Compares `analytic` gradients against central finite differences of
/// `eval` at `params`.
///
/// Parameters are perturbed in `f32` storage precision and the difference
/// quotient uses the exactly-representable perturbed values as its
/// denominator, so the check is valid even though `step` is far below the
/// `f32` spacing guarantee.
pub fn grad_check<F>(
    params: &[f32],
    analytic: &[f64],
    eval: F,
    tolerance: f64,
    step: f64,
) -> GradCheckReport
where
    F: FnMut(&[f32]) -> f64,
{
    grad_check_skipping(params, analytic, eval, tolerance, step, &[])
}

/// [`grad_check`] with an explicit set of skipped parameter indices, for
/// losses with isolated non-differentiable points (L1 ties).
pub fn grad_check_skipping<F>(
    params: &[f32],
    analytic: &[f64],
    mut eval: F,
    tolerance: f64,
    step: f64,
    skip: &[usize],
) -> GradCheckReport
where
    F: FnMut(&[f32]) -> f64,
{
    assert_eq!(
        params.len(),
        analytic.len(),
        "analytic gradient length must match parameter count"
    );
    let mut buf = params.to_vec();
    let mut max_rel_error = 0.0f64;
    let mut worst_index = None;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    for i in 0..params.len() {
        if skip.contains(&i) {
            skipped += 1;
            continue;
        }
        let center = params[i] as f64;
        let plus = (center + step) as f32;
        let minus = (center - step) as f32;
        buf[i] = plus;
        let loss_plus = eval(&buf);
        buf[i] = minus;
        let loss_minus = eval(&buf);
        buf[i] = params[i];
        let denom = plus as f64 - minus as f64;
        let fd = (loss_plus - loss_minus) / denom;
        let err = rel_error(fd, analytic[i]);
        if err > max_rel_error {
            max_rel_error = err;
            worst_index = Some(i);
        }
        checked += 1;
    }
    GradCheckReport {
        max_rel_error,
        worst_index,
        params_checked: checked,
        params_skipped: skipped,
        tolerance,
        passed: max_rel_error <= tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_loss_is_exact() {
        let coeff = [1.25f64, -0.75, 2.0];
        let params = [0.5f32, -1.0, 0.25];
        let report = grad_check(
            &params,
            &coeff,
            |p| p.iter().zip(&coeff).map(|(x, c)| *x as f64 * c).sum(),
            1e-10,
            DEFAULT_FD_STEP,
        );
        assert!(
            report.passed,
            "linear loss should check exactly, got {}",
            report.max_rel_error
        );
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let params = [0.3f32, -0.7];
        let report = grad_check(&params, &[0.0, 0.0], |_| 4.0, 1e-12, DEFAULT_FD_STEP);
        assert!(report.passed);
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let params = [1.0f32];
        let report = grad_check(
            &params,
            &[-2.0], // true gradient is +2.0
            |p| (p[0] as f64) * (p[0] as f64),
            1e-4,
            DEFAULT_FD_STEP,
        );
        assert!(!report.passed);
        assert_eq!(report.worst_index, Some(0));
    }

    #[test]
    fn skipped_indices_are_not_checked() {
        let params = [0.0f32, 1.0];
        let report = grad_check_skipping(
            &params,
            &[999.0, 2.0],
            |p| (p[0] as f64).abs() + (p[1] as f64) * 2.0,
            1e-6,
            DEFAULT_FD_STEP,
            &[0],
        );
        assert!(report.passed);
        assert_eq!(report.params_skipped, 1);
        assert_eq!(report.params_checked, 1);
    }
}
