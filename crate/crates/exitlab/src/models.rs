//! SDE models, spatial domains and path functionals.
//!
//! A model is `dX = b(X) dt + sigma dW` with constant invertible `sigma`;
//! unless an explicit matrix is supplied, `sigma = sqrt(2*eps) * I`. Drifts
//! cover driftless motion, scalar and matrix Ornstein-Uhlenbeck pull, and
//! arbitrary user callbacks.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// User-supplied drift `b(x)`, written into `out`. Callers must supply a
/// globally Lipschitz field; this is not verified at runtime.
pub type DriftFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Drift specification of the model.
#[derive(Clone)]
pub enum Drift {
    /// `b = 0` (Brownian motion).
    Zero,
    /// `b(x) = -theta * x` with scalar `theta > 0`.
    ScalarOu { theta: f64 },
    /// `b(x) = -Theta * x` with a symmetric positive definite matrix.
    MatrixOu { theta: Matrix },
    /// Arbitrary drift callback.
    Callback(DriftFn),
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drift::Zero => write!(f, "Zero"),
            Drift::ScalarOu { theta } => write!(f, "ScalarOu({theta})"),
            Drift::MatrixOu { theta } => write!(f, "MatrixOu({}x{})", theta.rows(), theta.cols()),
            Drift::Callback(_) => write!(f, "Callback"),
        }
    }
}

/// Constant diffusion matrix.
#[derive(Debug, Clone)]
enum Sigma {
    /// `sigma = sqrt(2*eps) * I`.
    Isotropic,
    /// Explicit invertible matrix.
    Explicit(Matrix),
}

/// Diffusion model `dX = b(X) dt + sigma dW` in dimension `dim`.
#[derive(Debug, Clone)]
pub struct SdeModel {
    dim: usize,
    drift: Drift,
    /// Noise scale `eps > 0`; for the default diffusion `sigma = sqrt(2*eps)*I`.
    noise_scale: f64,
    sigma: Sigma,
    zero_noise: bool,
}

impl SdeModel {
    pub fn new(dim: usize, drift: Drift, noise_scale: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid_argument("model dimension must be positive"));
        }
        if !(noise_scale > 0.0) || !noise_scale.is_finite() {
            return Err(Error::invalid_argument("noise scale eps must satisfy eps > 0"));
        }
        if let Drift::ScalarOu { theta } = drift {
            if !(theta > 0.0) {
                return Err(Error::invalid_argument("scalar OU rate theta must be > 0"));
            }
        }
        if let Drift::MatrixOu { ref theta } = drift {
            if theta.rows() != dim || theta.cols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: theta.rows(),
                });
            }
            if !theta.is_symmetric(1e-12) {
                return Err(Error::invalid_argument("matrix OU drift must be symmetric"));
            }
        }
        Ok(SdeModel {
            dim,
            drift,
            noise_scale,
            sigma: Sigma::Isotropic,
            zero_noise: false,
        })
    }

    /// Driftless model (`theta = 0`).
    pub fn brownian(dim: usize, eps: f64) -> Result<Self> {
        Self::new(dim, Drift::Zero, eps)
    }

    pub fn scalar_ou(dim: usize, theta: f64, eps: f64) -> Result<Self> {
        Self::new(dim, Drift::ScalarOu { theta }, eps)
    }

    pub fn matrix_ou(theta: Matrix, eps: f64) -> Result<Self> {
        let dim = theta.rows();
        Self::new(dim, Drift::MatrixOu { theta }, eps)
    }

    pub fn with_callback_drift(
        dim: usize,
        eps: f64,
        drift: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::new(dim, Drift::Callback(Arc::new(drift)), eps)
    }

    /// Replace the default isotropic diffusion with an explicit matrix.
    /// The matrix must be square of the model dimension and invertible.
    pub fn with_sigma(mut self, sigma: Matrix) -> Result<Self> {
        if sigma.rows() != self.dim || sigma.cols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: sigma.rows(),
            });
        }
        if !sigma.is_invertible() {
            return Err(Error::invalid_argument("diffusion matrix must be invertible"));
        }
        self.sigma = Sigma::Explicit(sigma);
        Ok(self)
    }

    /// Suppress the Brownian increments entirely (`dW = 0`), turning the
    /// integrator into deterministic Euler. Intended for tests.
    pub fn with_zero_noise(mut self) -> Self {
        self.zero_noise = true;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn drift(&self) -> &Drift {
        self.drift_ref()
    }

    fn drift_ref(&self) -> &Drift {
        &self.drift
    }

    pub fn zero_noise(&self) -> bool {
        self.zero_noise
    }

    /// Scalar diffusion coefficient for the isotropic case.
    pub fn sigma_scalar(&self) -> Option<f64> {
        match self.sigma {
            Sigma::Isotropic => Some((2.0 * self.noise_scale).sqrt()),
            Sigma::Explicit(_) => None,
        }
    }

    /// Effective `eps` of the 1-D generator `eps * d^2/dx^2 + b * d/dx`,
    /// i.e. `sigma^2 / 2` for a scalar diffusion.
    pub fn diffusion_coefficient_1d(&self) -> Result<f64> {
        if self.dim != 1 {
            return Err(Error::invalid_argument(
                "1-D diffusion coefficient requested from a multi-dimensional model",
            ));
        }
        Ok(match &self.sigma {
            Sigma::Isotropic => self.noise_scale,
            Sigma::Explicit(m) => 0.5 * m.get(0, 0) * m.get(0, 0),
        })
    }

    /// `out = b(x)`, writing into a caller buffer.
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.dim || out.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        match &self.drift {
            Drift::Zero => out.fill(0.0),
            Drift::ScalarOu { theta } => {
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = -theta * xi;
                }
            }
            Drift::MatrixOu { theta } => {
                theta.matvec(x, out);
                for o in out.iter_mut() {
                    *o = -*o;
                }
            }
            Drift::Callback(f) => f(x, out),
        }
        Ok(())
    }

    /// `out = sigma * v`.
    pub fn sigma_mul(&self, v: &[f64], out: &mut [f64]) {
        match &self.sigma {
            Sigma::Isotropic => {
                let s = (2.0 * self.noise_scale).sqrt();
                for (o, &vi) in out.iter_mut().zip(v) {
                    *o = s * vi;
                }
            }
            Sigma::Explicit(m) => m.matvec(v, out),
        }
    }

    /// `out = sigma^T * v`.
    pub fn sigma_transpose_mul(&self, v: &[f64], out: &mut [f64]) {
        match &self.sigma {
            Sigma::Isotropic => {
                let s = (2.0 * self.noise_scale).sqrt();
                for (o, &vi) in out.iter_mut().zip(v) {
                    *o = s * vi;
                }
            }
            Sigma::Explicit(m) => m.transpose_matvec(v, out),
        }
    }
}

/// Evaluate the drift `b(x)` of a model, allocating the result.
pub fn drift_eval(model: &SdeModel, x: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; model.dim()];
    model.drift_into(x, &mut out)?;
    Ok(out)
}

/// The tridiagonal drift matrix with `2` on the diagonal and `-1` on the
/// first off-diagonals. Symmetric positive definite for every `n >= 1`: its
/// eigenvalues are `2 - 2 cos(k*pi/(n+1))`, all in `(0, 4)`.
pub fn make_tridiag_theta(n: usize) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::invalid_argument("tridiagonal drift needs n >= 1"));
    }
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        m.set(i, i, 2.0);
        if i + 1 < n {
            m.set(i, i + 1, -1.0);
            m.set(i + 1, i, -1.0);
        }
    }
    Ok(m)
}

/// Boundary component labels for exit classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExitFace {
    /// Sphere `|x| = R` of a ball domain.
    Sphere,
    /// Left endpoint of an interval.
    Left,
    /// Right endpoint of an interval.
    Right,
    /// Inner sphere of an annulus.
    Inner,
    /// Outer sphere of an annulus.
    Outer,
}

impl fmt::Display for ExitFace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExitFace::Sphere => "sphere",
            ExitFace::Left => "left",
            ExitFace::Right => "right",
            ExitFace::Inner => "inner",
            ExitFace::Outer => "outer",
        };
        write!(f, "{s}")
    }
}

/// Result of classifying a point against a domain. Boundary points count as
/// exited, so the first exit time is the first time the discrete path leaves
/// the open set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Classification {
    Interior,
    Exited(ExitFace),
}

impl Classification {
    pub fn is_interior(&self) -> bool {
        matches!(self, Classification::Interior)
    }
}

/// Open spatial domain from which exit is observed.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    /// Open ball `{ |x| < radius }`.
    Ball { radius: f64 },
    /// Open interval `(a, b)`, 1-D only.
    Interval { a: f64, b: f64 },
    /// Open annulus `{ r_inner < |x| < r_outer }`.
    Annulus { r_inner: f64, r_outer: f64 },
}

impl Domain {
    pub fn ball(radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::invalid_argument("ball radius must be > 0"));
        }
        Ok(Domain::Ball { radius })
    }

    pub fn interval(a: f64, b: f64) -> Result<Self> {
        if !(a < b) {
            return Err(Error::invalid_argument("interval needs a < b"));
        }
        Ok(Domain::Interval { a, b })
    }

    pub fn annulus(r_inner: f64, r_outer: f64) -> Result<Self> {
        if !(0.0 < r_inner && r_inner < r_outer) {
            return Err(Error::invalid_argument("annulus needs 0 < r_inner < r_outer"));
        }
        Ok(Domain::Annulus { r_inner, r_outer })
    }

    /// Dimension constraint of the domain shape, if any.
    pub fn required_dim(&self) -> Option<usize> {
        match self {
            Domain::Interval { .. } => Some(1),
            _ => None,
        }
    }

    pub fn classify(&self, x: &[f64]) -> Classification {
        match self {
            Domain::Ball { radius } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                if r2 < radius * radius {
                    Classification::Interior
                } else {
                    Classification::Exited(ExitFace::Sphere)
                }
            }
            Domain::Interval { a, b } => {
                let v = x[0];
                if v <= *a {
                    Classification::Exited(ExitFace::Left)
                } else if v >= *b {
                    Classification::Exited(ExitFace::Right)
                } else {
                    Classification::Interior
                }
            }
            Domain::Annulus { r_inner, r_outer } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                if r2 <= r_inner * r_inner {
                    Classification::Exited(ExitFace::Inner)
                } else if r2 >= r_outer * r_outer {
                    Classification::Exited(ExitFace::Outer)
                } else {
                    Classification::Interior
                }
            }
        }
    }

    /// A few deterministic points of the closed domain, used to spot-check
    /// user-supplied cost callbacks at problem construction.
    fn probe_points(&self, dim: usize) -> Vec<Vec<f64>> {
        let radial = |r: f64| -> Vec<f64> {
            let mut p = vec![0.0; dim];
            p[0] = r;
            p
        };
        match self {
            Domain::Ball { radius } => [0.0, 0.25, 0.5, 0.75, 1.0]
                .iter()
                .map(|f| radial(f * radius))
                .collect(),
            Domain::Interval { a, b } => [0.0, 0.25, 0.5, 0.75, 1.0]
                .iter()
                .map(|f| vec![a + f * (b - a)])
                .collect(),
            Domain::Annulus { r_inner, r_outer } => [0.0, 0.25, 0.5, 0.75, 1.0]
                .iter()
                .map(|f| radial(r_inner + f * (r_outer - r_inner)))
                .collect(),
        }
    }
}

/// Classify a point of an n-dimensional domain.
pub fn classify_point(domain: &Domain, x: &[f64]) -> Classification {
    domain.classify(x)
}

/// Running cost `f >= 0` accumulated along the path.
#[derive(Clone)]
pub enum RunningCost {
    Zero,
    One,
    Callback(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl RunningCost {
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            RunningCost::Zero => 0.0,
            RunningCost::One => 1.0,
            RunningCost::Callback(f) => f(x),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, RunningCost::Zero)
    }
}

impl fmt::Debug for RunningCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunningCost::Zero => write!(f, "Zero"),
            RunningCost::One => write!(f, "One"),
            RunningCost::Callback(_) => write!(f, "Callback"),
        }
    }
}

/// Terminal cost `g >= 0` collected at the stopping state. The exit face is
/// `None` when the path was stopped by the horizon in the interior.
#[derive(Clone)]
pub enum TerminalCost {
    Zero,
    /// Indicator of one boundary component: `1` iff the path exited through
    /// the given face.
    IndicatorOf(ExitFace),
    Callback(Arc<dyn Fn(&[f64], Option<ExitFace>) -> f64 + Send + Sync>),
}

impl TerminalCost {
    #[inline]
    pub fn eval(&self, x: &[f64], face: Option<ExitFace>) -> f64 {
        match self {
            TerminalCost::Zero => 0.0,
            TerminalCost::IndicatorOf(target) => {
                if face == Some(*target) {
                    1.0
                } else {
                    0.0
                }
            }
            TerminalCost::Callback(g) => g(x, face),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, TerminalCost::Zero)
    }
}

impl fmt::Debug for TerminalCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TerminalCost::Zero => write!(f, "Zero"),
            TerminalCost::IndicatorOf(face) => write!(f, "IndicatorOf({face})"),
            TerminalCost::Callback(_) => write!(f, "Callback"),
        }
    }
}

/// An exit problem: domain, start point, path functional
/// `S = int f(X_t) dt + g(X_stop)` and an optional finite horizon. With a
/// horizon `T` the stopping time is `min(tau_B, T)`.
#[derive(Debug, Clone)]
pub struct PathProblem {
    domain: Domain,
    start: Vec<f64>,
    running_cost: RunningCost,
    terminal_cost: TerminalCost,
    horizon: Option<f64>,
}

impl PathProblem {
    pub fn new(
        domain: Domain,
        start: Vec<f64>,
        running_cost: RunningCost,
        terminal_cost: TerminalCost,
        horizon: Option<f64>,
    ) -> Result<Self> {
        if start.is_empty() {
            return Err(Error::invalid_argument("start point must be non-empty"));
        }
        if let Some(d) = domain.required_dim() {
            if start.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: start.len(),
                });
            }
        }
        if let Some(t) = horizon {
            if !(t > 0.0) {
                return Err(Error::invalid_argument("horizon must be > 0"));
            }
        }
        // Spot-check callback costs for non-negativity on a handful of points.
        for p in domain.probe_points(start.len()) {
            let fv = running_cost.eval(&p);
            if !(fv >= 0.0) || !fv.is_finite() {
                return Err(Error::invalid_argument(format!(
                    "running cost must be finite and >= 0 on the closed domain (f({p:?}) = {fv})"
                )));
            }
            for face in [None, Some(domain_face(&domain))] {
                let gv = terminal_cost.eval(&p, face);
                if !(gv >= 0.0) || !gv.is_finite() {
                    return Err(Error::invalid_argument(format!(
                        "terminal cost must be finite and >= 0 on the closed domain (g({p:?}) = {gv})"
                    )));
                }
            }
        }
        Ok(PathProblem {
            domain,
            start,
            running_cost,
            terminal_cost,
            horizon,
        })
    }

    /// Mean-first-exit-time functional: `f = 1`, `g = 0`, no horizon.
    pub fn mean_exit_time(domain: Domain, start: Vec<f64>) -> Result<Self> {
        Self::new(domain, start, RunningCost::One, TerminalCost::Zero, None)
    }

    /// Exit-probability functional before a horizon: `f = 0`,
    /// `g = 1` on the given boundary face, stopping at `min(tau, T)`.
    pub fn exit_probability(
        domain: Domain,
        start: Vec<f64>,
        face: ExitFace,
        horizon: f64,
    ) -> Result<Self> {
        Self::new(
            domain,
            start,
            RunningCost::Zero,
            TerminalCost::IndicatorOf(face),
            Some(horizon),
        )
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn running_cost(&self) -> &RunningCost {
        &self.running_cost
    }

    pub fn terminal_cost(&self) -> &TerminalCost {
        &self.terminal_cost
    }

    pub fn horizon(&self) -> Option<f64> {
        self.horizon
    }

    pub fn with_start(&self, start: Vec<f64>) -> Result<Self> {
        Self::new(
            self.domain.clone(),
            start,
            self.running_cost.clone(),
            self.terminal_cost.clone(),
            self.horizon,
        )
    }
}

fn domain_face(domain: &Domain) -> ExitFace {
    match domain {
        Domain::Ball { .. } => ExitFace::Sphere,
        Domain::Interval { .. } => ExitFace::Right,
        Domain::Annulus { .. } => ExitFace::Outer,
    }
}
