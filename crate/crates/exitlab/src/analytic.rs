//! Closed-form reference solutions used to validate the solvers and the
//! estimator suite: the mean first exit time of driftless diffusion from a
//! ball, the 1-D interval exit-time moment generating function and committor,
//! and the singular zero-variance drift of the log-transformed exit-time
//! field together with its bounded regularisation.

use crate::error::{Error, Result};
use crate::models::SdeModel;
use crate::trajectory::CovariateField;

/// Mean first exit time of `dX = sqrt(2 eps) dW` from the ball of radius
/// `radius` in dimension `x.len()`: `(R^2 - |x|^2) / (2 n eps)`.
pub fn mfet_bm_ball(x: &[f64], radius: f64, eps: f64) -> Result<f64> {
    let n = x.len();
    if n == 0 || !(radius > 0.0) || !(eps > 0.0) {
        return Err(Error::invalid_argument("need non-empty x, radius > 0, eps > 0"));
    }
    let r2: f64 = x.iter().map(|v| v * v).sum();
    if r2 > radius * radius * (1.0 + 1e-12) {
        return Err(Error::OutOfDomain(format!(
            "|x| = {} exceeds ball radius {radius}",
            r2.sqrt()
        )));
    }
    Ok((radius * radius - r2) / (2.0 * n as f64 * eps))
}

/// Gradient of [`mfet_bm_ball`]: `-x / (n eps)`.
pub fn mfet_bm_ball_gradient(x: &[f64], radius: f64, eps: f64) -> Result<Vec<f64>> {
    let n = x.len();
    if n == 0 || !(radius > 0.0) || !(eps > 0.0) {
        return Err(Error::invalid_argument("need non-empty x, radius > 0, eps > 0"));
    }
    let scale = 1.0 / (n as f64 * eps);
    Ok(x.iter().map(|&v| -v * scale).collect())
}

/// Moment generating function `E[exp(-alpha tau)]` of the first exit time of
/// 1-D driftless diffusion (`dX = sqrt(2 eps) dW`) from `(-R, R)` started at
/// `x`: `cosh(x sqrt(alpha/eps)) / cosh(R sqrt(alpha/eps))`; `1` at `alpha = 0`.
pub fn mgf_exit_bm_1d(x: f64, radius: f64, eps: f64, alpha: f64) -> Result<f64> {
    if !(radius > 0.0) || !(eps > 0.0) || !(alpha >= 0.0) {
        return Err(Error::invalid_argument("need radius > 0, eps > 0, alpha >= 0"));
    }
    if x.abs() > radius * (1.0 + 1e-12) {
        return Err(Error::OutOfDomain(format!("|x| = {} exceeds {radius}", x.abs())));
    }
    if alpha == 0.0 {
        return Ok(1.0);
    }
    let s = (alpha / eps).sqrt();
    // cosh ratio in a form that cannot overflow for large arguments.
    let num = ((x.abs() - radius) * s).exp() * (1.0 + (-2.0 * x.abs() * s).exp());
    let den = 1.0 + (-2.0 * radius * s).exp();
    Ok(num / den)
}

/// Certainty-equivalent value `-(1/alpha) log E[exp(-alpha tau)]` of the 1-D
/// interval exit time. Requires `alpha > 0`; converges to the mean exit time
/// `(R^2 - x^2) / (2 eps)` as `alpha` decreases to zero.
pub fn value_exit_bm_1d(x: f64, radius: f64, eps: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::invalid_argument("value function needs alpha > 0"));
    }
    let h = mgf_exit_bm_1d(x, radius, eps, alpha)?;
    Ok(-h.ln() / alpha)
}

/// Probability that 1-D driftless diffusion started at `x` in `(a, b)` hits
/// `b` before `a`: the harmonic function `(x - a) / (b - a)`.
pub fn committor_bm_1d(x: f64, a: f64, b: f64) -> Result<f64> {
    if a == b {
        return Err(Error::invalid_argument("degenerate interval a = b"));
    }
    if !(a < b) || x < a || x > b {
        return Err(Error::invalid_argument("need a <= x <= b with a < b"));
    }
    Ok((x - a) / (b - a))
}

/// Prefactor convention for the singular mean-exit-time drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingularControlMode {
    /// Drift `-sqrt(2 eps) * x / (R^2 - |x|^2)`.
    SigmaScaled,
    /// Drift `sigma sigma^T grad log(mfet) = -4 eps * x / (R^2 - |x|^2)`.
    DiffusionScaled,
}

/// The singular drift that (formally) realises a zero-variance change of
/// measure for the ball exit time. Both prefactor conventions diverge at the
/// boundary and revert toward the origin; trajectories driven by either never
/// leave the ball.
pub fn singular_mfet_drift(
    x: &[f64],
    radius: f64,
    eps: f64,
    mode: SingularControlMode,
) -> Result<Vec<f64>> {
    if x.is_empty() || !(radius > 0.0) || !(eps > 0.0) {
        return Err(Error::invalid_argument("need non-empty x, radius > 0, eps > 0"));
    }
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let gap = radius * radius - r2;
    if gap <= 0.0 {
        return Err(Error::Singularity(format!(
            "drift is singular at |x| >= R (|x| = {})",
            r2.sqrt()
        )));
    }
    let pref = match mode {
        SingularControlMode::SigmaScaled => (2.0 * eps).sqrt(),
        SingularControlMode::DiffusionScaled => 4.0 * eps,
    };
    Ok(x.iter().map(|&v| -pref * v / gap).collect())
}

/// Bounded control `sigma^T grad log(phi + c)` obtained by shifting a
/// covariate field away from zero; `c > 0` keeps the control finite where
/// `phi` vanishes.
pub fn regularized_log_control(
    model: &SdeModel,
    field: &CovariateField,
    x: &[f64],
    c: f64,
) -> Result<Vec<f64>> {
    if !(c > 0.0) {
        return Err(Error::invalid_argument("regularisation c must be > 0"));
    }
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: x.len(),
        });
    }
    let value = field.value(x);
    let mut grad = vec![0.0; x.len()];
    field.gradient(x, &mut grad);
    let mut out = vec![0.0; x.len()];
    model.sigma_transpose_mul(&grad, &mut out);
    let denom = value + c;
    for o in out.iter_mut() {
        *o /= denom;
    }
    Ok(out)
}
