//! Euler-Maruyama integration of controlled SDE paths with exit detection.
//!
//! Each trajectory accumulates, with left-endpoint (Ito) evaluation of all
//! integrands:
//!
//! * the running cost `S = int f(X) dt + g(X_stop)`,
//! * the Girsanov log-likelihood `log L = int u . dW + 1/2 int |u|^2 dt`
//!   of the controlled measure against the reference measure, where `W` is
//!   the Brownian motion driving the simulated (controlled) path,
//! * the control-variate martingale `M = int (sigma^T grad phi)(X) . dW`
//!   for an optional covariate field `phi`,
//! * `1/2 int |u|^2 dt` on its own for relative-entropy estimation.
//!
//! Exit is detected on the discrete time grid only (no boundary-bridge
//! correction), giving the usual O(sqrt(dt)) exit-time bias. Randomness comes
//! from counter-derived per-trajectory streams, so every trajectory is a pure
//! function of `(seed, run_index, traj_index)` no matter how work is split
//! across threads.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::analytic::{singular_mfet_drift, SingularControlMode};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::models::{Classification, Domain, ExitFace, PathProblem, SdeModel};
use crate::pde::PdeField;

/// RNG used for trajectory simulation.
pub type TrajectoryRng = ChaCha8Rng;

const STREAM_RUN_SALT: u64 = 0xd1b5_4a32_d192_ed03;
const STREAM_TRAJ_SALT: u64 = 0x8cb9_2ba7_2f3d_8dd7;
const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Identifier of an independent random stream. The stream is a pure function
/// of the triple, identical across platforms and worker counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub run_index: u64,
    pub traj_index: u64,
}

impl RngStream {
    pub fn new(seed: u64, run_index: u64, traj_index: u64) -> Self {
        RngStream {
            seed,
            run_index,
            traj_index,
        }
    }

    /// Instantiate the generator for this stream.
    pub fn rng(&self) -> TrajectoryRng {
        let mut state = mix64(self.seed ^ GOLDEN);
        state = mix64(state ^ mix64(self.run_index.wrapping_add(STREAM_RUN_SALT)));
        state = mix64(state ^ mix64(self.traj_index.wrapping_add(STREAM_TRAJ_SALT)));
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            state = state.wrapping_add(GOLDEN);
            chunk.copy_from_slice(&mix64(state).to_le_bytes());
        }
        TrajectoryRng::from_seed(key)
    }
}

/// Derive a sub-seed for an independent family of streams (per sweep point,
/// per experiment stage). Deterministic companion to [`RngStream`].
pub fn derive_seed(seed: u64, stage: u64) -> u64 {
    mix64(mix64(seed ^ GOLDEN) ^ mix64(stage.wrapping_add(STREAM_RUN_SALT)))
}

/// Deterministic sequence of `count` standard-normal vectors of dimension `n`
/// from the given stream. The caller scales by `sqrt(dt)`; the trajectory
/// integrator consumes draws in exactly this order.
pub fn gaussian_increments(stream: RngStream, n: usize, count: usize) -> Vec<Vec<f64>> {
    let mut rng = stream.rng();
    (0..count)
        .map(|_| {
            (0..n)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect::<Vec<f64>>()
        })
        .collect()
}

/// A vector field used directly as a feedback control.
#[derive(Clone)]
pub enum VectorField {
    Constant(Vec<f64>),
    Callback(Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>),
}

impl VectorField {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            VectorField::Constant(v) => out.copy_from_slice(v),
            VectorField::Callback(f) => f(x, out),
        }
    }
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VectorField::Constant(v) => write!(f, "Constant({v:?})"),
            VectorField::Callback(_) => write!(f, "Callback"),
        }
    }
}

/// Feedback control `u(t, x)` applied through the diffusion:
/// `dX = (b(X) + sigma u) dt + sigma dW`.
#[derive(Clone)]
pub enum ControlPolicy {
    /// Uncontrolled dynamics; the log-likelihood stays exactly zero.
    None,
    /// `u = v(x)` for a supplied vector field.
    FieldGradient(VectorField),
    /// The singular zero-variance drift of the ball exit-time problem;
    /// the control is the drift divided by the scalar diffusion.
    SingularLogMfet {
        radius: f64,
        eps: f64,
        mode: SingularControlMode,
    },
    /// `u(x) = -alpha sigma dV/dx` from a 1-D value-function field.
    PdeControl { value_field: PdeField, alpha: f64 },
    /// Arbitrary time-dependent control `u(t, x)`.
    Callback(Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>),
}

impl ControlPolicy {
    pub fn constant(u: Vec<f64>) -> Self {
        ControlPolicy::FieldGradient(VectorField::Constant(u))
    }

    /// Wrap a value-function field, checking that its grid covers the domain.
    pub fn pde_control(value_field: PdeField, alpha: f64, domain: &Domain) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::invalid_argument("pde control needs alpha > 0"));
        }
        match domain {
            Domain::Interval { a, b } => {
                let g = value_field.grid();
                if g.a() > *a + 1e-12 || g.b() < *b - 1e-12 {
                    return Err(Error::invalid_argument(
                        "pde control grid does not cover the domain interior",
                    ));
                }
            }
            _ => {
                return Err(Error::invalid_argument(
                    "pde control applies to 1-D interval domains only",
                ));
            }
        }
        Ok(ControlPolicy::PdeControl { value_field, alpha })
    }

    pub fn is_none(&self) -> bool {
        matches!(self, ControlPolicy::None)
    }

    /// Evaluate `u(t, x)` into `out`.
    pub fn eval(&self, t: f64, x: &[f64], model: &SdeModel, out: &mut [f64]) -> Result<()> {
        match self {
            ControlPolicy::None => out.fill(0.0),
            ControlPolicy::FieldGradient(v) => v.eval(x, out),
            ControlPolicy::SingularLogMfet { radius, eps, mode } => {
                let sigma = model.sigma_scalar().ok_or_else(|| {
                    Error::invalid_argument(
                        "singular exit-time control requires isotropic diffusion",
                    )
                })?;
                let drift = singular_mfet_drift(x, *radius, *eps, *mode)?;
                for (o, d) in out.iter_mut().zip(drift) {
                    *o = d / sigma;
                }
            }
            ControlPolicy::PdeControl { value_field, alpha } => {
                if x.len() != 1 {
                    return Err(Error::invalid_argument("pde control is 1-D only"));
                }
                let sigma = model.sigma_scalar().ok_or_else(|| {
                    Error::invalid_argument("pde control requires isotropic diffusion")
                })?;
                out[0] = -alpha * sigma * value_field.derivative_at(x[0]);
            }
            ControlPolicy::Callback(f) => f(t, x, out),
        }
        Ok(())
    }
}

impl fmt::Debug for ControlPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlPolicy::None => write!(f, "None"),
            ControlPolicy::FieldGradient(v) => write!(f, "FieldGradient({v:?})"),
            ControlPolicy::SingularLogMfet { radius, eps, mode } => {
                write!(f, "SingularLogMfet(R={radius}, eps={eps}, {mode:?})")
            }
            ControlPolicy::PdeControl { alpha, .. } => write!(f, "PdeControl(alpha={alpha})"),
            ControlPolicy::Callback(_) => write!(f, "Callback"),
        }
    }
}

/// Scalar field `phi` whose gradient feeds the control-variate martingale
/// `M = int (sigma^T grad phi)(X) . dW`.
#[derive(Clone)]
pub enum CovariateField {
    /// `phi = 0`; the martingale vanishes identically.
    Zero,
    /// Exit time of driftless diffusion from a ball:
    /// `phi(x) = (R^2 - |x|^2) / (2 n eps)`, gradient `-x / (n eps)`.
    BallMfet { radius: f64, eps: f64 },
    /// 1-D gridded field with central-difference gradient.
    Grid1d(PdeField),
    /// Componentwise additive gradient perturbation:
    /// `(grad phi)_i + delta sin(x_i)`.
    Perturbed {
        inner: Box<CovariateField>,
        delta: f64,
    },
    /// User-supplied value/gradient pair.
    Callback {
        value: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        gradient: Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
    },
}

impl CovariateField {
    pub fn ball_mfet(radius: f64, eps: f64) -> Self {
        CovariateField::BallMfet { radius, eps }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            CovariateField::Zero => 0.0,
            CovariateField::BallMfet { radius, eps } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                (radius * radius - r2) / (2.0 * x.len() as f64 * eps)
            }
            CovariateField::Grid1d(f) => f.value_at(x[0]),
            CovariateField::Perturbed { inner, delta } => {
                // Antiderivative of the gradient perturbation, vanishing at 0.
                inner.value(x) + delta * x.iter().map(|&v| 1.0 - v.cos()).sum::<f64>()
            }
            CovariateField::Callback { value, .. } => value(x),
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            CovariateField::Zero => out.fill(0.0),
            CovariateField::BallMfet { eps, .. } => {
                let scale = 1.0 / (x.len() as f64 * eps);
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = -v * scale;
                }
            }
            CovariateField::Grid1d(f) => out[0] = f.derivative_at(x[0]),
            CovariateField::Perturbed { inner, delta } => {
                inner.gradient(x, out);
                for (o, &v) in out.iter_mut().zip(x) {
                    *o += delta * v.sin();
                }
            }
            CovariateField::Callback { gradient, .. } => gradient(x, out),
        }
    }
}

impl fmt::Debug for CovariateField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovariateField::Zero => write!(f, "Zero"),
            CovariateField::BallMfet { radius, eps } => {
                write!(f, "BallMfet(R={radius}, eps={eps})")
            }
            CovariateField::Grid1d(_) => write!(f, "Grid1d"),
            CovariateField::Perturbed { inner, delta } => {
                write!(f, "Perturbed(delta={delta}, {inner:?})")
            }
            CovariateField::Callback { .. } => write!(f, "Callback"),
        }
    }
}

/// Perturb a covariate field by adding `delta sin(x_i)` to each gradient
/// component.
pub fn perturb_covariate(field: CovariateField, delta: f64) -> Result<CovariateField> {
    if !(delta >= 0.0) {
        return Err(Error::invalid_argument("perturbation delta must be >= 0"));
    }
    Ok(CovariateField::Perturbed {
        inner: Box::new(field),
        delta,
    })
}

/// Everything accumulated along one simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryOutcome {
    /// Did the path leave the open domain?
    pub exited: bool,
    /// Boundary component of the exit, when `exited`.
    pub exit_face: Option<ExitFace>,
    /// Stopping time: exit time, the horizon, or `steps * dt` at truncation.
    pub tau: f64,
    /// Accumulated `int f dt + g` at the stopping state.
    pub cost: f64,
    /// Girsanov log-likelihood `int u . dW + 1/2 int |u|^2 dt`; exactly zero
    /// for uncontrolled paths.
    pub log_likelihood: f64,
    /// `1/2 int |u|^2 dt` on its own.
    pub half_u2: f64,
    /// Control-variate martingale `int (sigma^T grad phi) . dW`.
    pub martingale: f64,
    /// Number of Euler-Maruyama steps taken.
    pub steps: u64,
    /// True when stopping was triggered by the finite horizon.
    pub hit_horizon: bool,
}

impl TrajectoryOutcome {
    /// Path ran out of its step budget without exiting and without a horizon
    /// stop. Surfaced as data, never as an error.
    pub fn budget_exhausted(&self) -> bool {
        !self.exited && !self.hit_horizon
    }
}

/// One Euler-Maruyama step `x + (b(x) + sigma u(t, x)) dt + sigma dW` with a
/// caller-supplied Brownian increment.
pub fn em_step(
    x: &[f64],
    t: f64,
    model: &SdeModel,
    policy: &ControlPolicy,
    dt: f64,
    dw: &[f64],
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::invalid_argument("dt must be > 0"));
    }
    let n = model.dim();
    if x.len() != n || dw.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.len().max(dw.len()),
        });
    }
    let mut drift = vec![0.0; n];
    model.drift_into(x, &mut drift)?;
    let mut next = vec![0.0; n];
    if policy.is_none() {
        model.sigma_mul(dw, &mut next);
        for i in 0..n {
            next[i] += x[i] + drift[i] * dt;
        }
    } else {
        let mut u = vec![0.0; n];
        policy.eval(t, x, model, &mut u)?;
        let mut sig_u = vec![0.0; n];
        model.sigma_mul(&u, &mut sig_u);
        model.sigma_mul(dw, &mut next);
        for i in 0..n {
            next[i] += x[i] + (drift[i] + sig_u[i]) * dt;
        }
    }
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalBlowup {
            step: 0,
            detail: "non-finite state after step".into(),
        });
    }
    Ok(next)
}

/// Working buffers of the trajectory loop, reused across steps.
struct StepBuffers {
    drift: Vec<f64>,
    control: Vec<f64>,
    sig_control: Vec<f64>,
    dw: Vec<f64>,
    sig_dw: Vec<f64>,
    grad: Vec<f64>,
    sig_grad: Vec<f64>,
}

impl StepBuffers {
    fn new(n: usize) -> Self {
        StepBuffers {
            drift: vec![0.0; n],
            control: vec![0.0; n],
            sig_control: vec![0.0; n],
            dw: vec![0.0; n],
            sig_dw: vec![0.0; n],
            grad: vec![0.0; n],
            sig_grad: vec![0.0; n],
        }
    }
}

/// Integrate one path until exit, the optional horizon, or the step budget.
///
/// Exhausting `max_steps` is not an error: the outcome reports
/// `exited = false` and the accumulated quantities up to truncation.
pub fn run_trajectory(
    model: &SdeModel,
    problem: &PathProblem,
    policy: &ControlPolicy,
    covariate: Option<&CovariateField>,
    dt: f64,
    max_steps: u64,
    stream: RngStream,
) -> Result<TrajectoryOutcome> {
    if !(dt > 0.0) {
        return Err(Error::invalid_argument("dt must be > 0"));
    }
    if max_steps == 0 {
        return Err(Error::invalid_argument("max_steps must be >= 1"));
    }
    let n = model.dim();
    if problem.start().len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: problem.start().len(),
        });
    }

    let mut x = problem.start().to_vec();

    // A start on or outside the boundary exits immediately.
    if let Classification::Exited(face) = problem.domain().classify(&x) {
        let cost = problem.terminal_cost().eval(&x, Some(face));
        return Ok(TrajectoryOutcome {
            exited: true,
            exit_face: Some(face),
            tau: 0.0,
            cost,
            log_likelihood: 0.0,
            half_u2: 0.0,
            martingale: 0.0,
            steps: 0,
            hit_horizon: false,
        });
    }

    let horizon_steps = problem
        .horizon()
        .map(|t| ((t / dt).round() as u64).max(1));

    let mut rng = stream.rng();
    let sqrt_dt = dt.sqrt();
    let zero_noise = model.zero_noise();
    let has_control = !policy.is_none();
    let sigma_scalar = model.sigma_scalar();
    let mut buf = StepBuffers::new(n);

    let mut cost = 0.0;
    let mut log_likelihood = 0.0;
    let mut half_u2 = 0.0;
    let mut martingale = 0.0;
    let mut steps: u64 = 0;

    loop {
        if let Some(hs) = horizon_steps {
            if steps >= hs {
                let tau = hs as f64 * dt;
                cost += problem.terminal_cost().eval(&x, None);
                return Ok(TrajectoryOutcome {
                    exited: false,
                    exit_face: None,
                    tau,
                    cost,
                    log_likelihood,
                    half_u2,
                    martingale,
                    steps,
                    hit_horizon: true,
                });
            }
        }
        if steps >= max_steps {
            return Ok(TrajectoryOutcome {
                exited: false,
                exit_face: None,
                tau: steps as f64 * dt,
                cost,
                log_likelihood,
                half_u2,
                martingale,
                steps,
                hit_horizon: false,
            });
        }

        let t = steps as f64 * dt;

        if zero_noise {
            buf.dw.fill(0.0);
        } else {
            for d in buf.dw.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *d = sqrt_dt * z;
            }
        }

        // Left-endpoint accumulation before moving the state.
        cost += problem.running_cost().eval(&x) * dt;

        if has_control {
            policy.eval(t, &x, model, &mut buf.control)?;
            let u_dot_dw = dot(&buf.control, &buf.dw);
            let u2 = dot(&buf.control, &buf.control);
            if !u2.is_finite() || !u_dot_dw.is_finite() {
                return Err(Error::NumericalBlowup {
                    step: steps,
                    detail: "non-finite control".into(),
                });
            }
            log_likelihood += u_dot_dw + 0.5 * u2 * dt;
            half_u2 += 0.5 * u2 * dt;
        }

        if let Some(cov) = covariate {
            cov.gradient(&x, &mut buf.grad);
            // For the isotropic diffusion sigma^T grad . dW reduces to a
            // single dot product scaled once.
            let dm = match sigma_scalar {
                Some(s) => s * dot(&buf.grad, &buf.dw),
                None => {
                    model.sigma_transpose_mul(&buf.grad, &mut buf.sig_grad);
                    dot(&buf.sig_grad, &buf.dw)
                }
            };
            if !dm.is_finite() {
                return Err(Error::InvalidCovariate(format!(
                    "non-finite covariate gradient at step {steps}"
                )));
            }
            martingale += dm;
        }

        model.drift_into(&x, &mut buf.drift)?;
        model.sigma_mul(&buf.dw, &mut buf.sig_dw);
        if has_control {
            model.sigma_mul(&buf.control, &mut buf.sig_control);
            for i in 0..n {
                x[i] += (buf.drift[i] + buf.sig_control[i]) * dt + buf.sig_dw[i];
            }
        } else {
            for i in 0..n {
                x[i] += buf.drift[i] * dt + buf.sig_dw[i];
            }
        }
        steps += 1;

        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup {
                step: steps,
                detail: "non-finite state".into(),
            });
        }

        if let Classification::Exited(face) = problem.domain().classify(&x) {
            let tau = steps as f64 * dt;
            cost += problem.terminal_cost().eval(&x, Some(face));
            return Ok(TrajectoryOutcome {
                exited: true,
                exit_face: Some(face),
                tau,
                cost,
                log_likelihood,
                half_u2,
                martingale,
                steps,
                hit_horizon: false,
            });
        }
    }
}

/// Step budget heuristic: 50x the mean exit step count of a small pilot of
/// uncontrolled trajectories. Falls back to 50x the pilot budget when no
/// pilot path exits.
pub fn pilot_max_steps(
    model: &SdeModel,
    problem: &PathProblem,
    dt: f64,
    seed: u64,
) -> Result<u64> {
    const PILOT_TRAJECTORIES: u64 = 16;
    const PILOT_BUDGET: u64 = 2_000_000;
    let mut exited_steps: Vec<u64> = Vec::new();
    for i in 0..PILOT_TRAJECTORIES {
        let stream = RngStream::new(derive_seed(seed, u64::MAX), 0, i);
        let out = run_trajectory(
            model,
            problem,
            &ControlPolicy::None,
            None,
            dt,
            PILOT_BUDGET,
            stream,
        )?;
        if out.exited || out.hit_horizon {
            exited_steps.push(out.steps);
        }
    }
    if exited_steps.is_empty() {
        return Ok(50 * PILOT_BUDGET);
    }
    let mean = exited_steps.iter().sum::<u64>() as f64 / exited_steps.len() as f64;
    Ok(((50.0 * mean).ceil() as u64).max(1000))
}
