//! 1-D finite-difference solvers used as numerical oracles: the linear exit
//! boundary value problem, the exit-time moment generating function (from
//! which the risk-sensitive value function follows by a log transform), and
//! the parabolic equation for finite-horizon exit probabilities. Second-order
//! central differences with tridiagonal elimination throughout.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::linalg::solve_tridiagonal;
use crate::models::SdeModel;

/// Uniform 1-D grid on `[a, b]` with `m` interior nodes and spacing
/// `h = (b - a) / (m + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1d {
    a: f64,
    b: f64,
    m: usize,
}

impl Grid1d {
    pub fn new(a: f64, b: f64, m: usize) -> Result<Self> {
        if !(a < b) {
            return Err(Error::invalid_argument("grid needs a < b"));
        }
        if m < 3 {
            return Err(Error::invalid_argument("grid needs at least 3 interior nodes"));
        }
        Ok(Grid1d { a, b, m })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Interior node count.
    pub fn interior_nodes(&self) -> usize {
        self.m
    }

    /// Total node count including both boundary nodes.
    pub fn num_nodes(&self) -> usize {
        self.m + 2
    }

    pub fn h(&self) -> f64 {
        (self.b - self.a) / (self.m + 1) as f64
    }

    /// Coordinate of node `i`, `i = 0..=m+1`.
    pub fn node(&self, i: usize) -> f64 {
        self.a + i as f64 * self.h()
    }
}

/// Nodal scalar field on a [`Grid1d`] with linear off-node interpolation and
/// a central-difference derivative (second-order one-sided at the ends).
#[derive(Debug, Clone)]
pub struct PdeField {
    grid: Grid1d,
    values: Vec<f64>,
    nodal_derivative: Vec<f64>,
}

impl PdeField {
    pub fn new(grid: Grid1d, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_nodes() {
            return Err(Error::InvalidField(format!(
                "expected {} nodal values, got {}",
                grid.num_nodes(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("non-finite nodal value".into()));
        }
        let nodal_derivative = nodal_derivatives(&grid, &values);
        Ok(PdeField {
            grid,
            values,
            nodal_derivative,
        })
    }

    /// Field built by sampling a function at the nodes.
    pub fn from_fn(grid: Grid1d, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..grid.num_nodes()).map(|i| f(grid.node(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid1d {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nodal_derivative(&self) -> &[f64] {
        &self.nodal_derivative
    }

    fn locate(&self, x: f64) -> (usize, f64) {
        let h = self.grid.h();
        let t = ((x - self.grid.a) / h).clamp(0.0, (self.grid.m + 1) as f64);
        let i = (t.floor() as usize).min(self.grid.m);
        (i, t - i as f64)
    }

    /// Linear interpolation between nodes; clamped to the grid range.
    pub fn value_at(&self, x: f64) -> f64 {
        let (i, w) = self.locate(x);
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    /// Derivative via interpolation of the nodal central differences.
    pub fn derivative_at(&self, x: f64) -> f64 {
        let (i, w) = self.locate(x);
        self.nodal_derivative[i] * (1.0 - w) + self.nodal_derivative[i + 1] * w
    }

    /// Maximum absolute nodal difference against a reference function.
    pub fn max_error_against(&self, reference: impl Fn(f64) -> f64) -> f64 {
        (0..self.grid.num_nodes())
            .map(|i| (self.values[i] - reference(self.grid.node(i))).abs())
            .fold(0.0, f64::max)
    }

    /// Two-column CSV export `node,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "node,value")?;
        for i in 0..self.grid.num_nodes() {
            writeln!(w, "{},{}", self.grid.node(i), self.values[i])?;
        }
        Ok(())
    }

    /// Read a field back from the two-column CSV format, reconstructing the
    /// uniform grid from the node coordinates.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut nodes = Vec::new();
        let mut values = Vec::new();
        for (ln, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::InvalidField(format!("csv read: {e}")))?;
            let line = line.trim();
            if line.is_empty() || (ln == 0 && line.starts_with("node")) {
                continue;
            }
            let (a, b) = line
                .split_once(',')
                .ok_or_else(|| Error::InvalidField(format!("bad csv line {ln}: {line}")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidField(format!("bad number on line {ln}: {e}")))
            };
            nodes.push(parse(a)?);
            values.push(parse(b)?);
        }
        if nodes.len() < 5 {
            return Err(Error::InvalidField("field csv needs at least 5 nodes".into()));
        }
        let m = nodes.len() - 2;
        let grid = Grid1d::new(nodes[0], nodes[nodes.len() - 1], m)?;
        let h = grid.h();
        for (i, &x) in nodes.iter().enumerate() {
            if (x - grid.node(i)).abs() > 1e-9 * (1.0 + h) {
                return Err(Error::InvalidField("field csv nodes are not uniform".into()));
            }
        }
        Self::new(grid, values)
    }
}

fn nodal_derivatives(grid: &Grid1d, values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let h = grid.h();
    let mut d = vec![0.0; n];
    d[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h);
    d[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h);
    for i in 1..n - 1 {
        d[i] = (values[i + 1] - values[i - 1]) / (2.0 * h);
    }
    d
}

fn require_1d(model: &SdeModel) -> Result<(f64, impl Fn(f64) -> f64 + '_)> {
    if model.dim() != 1 {
        return Err(Error::invalid_argument("PDE solvers handle 1-D models only"));
    }
    let eps = model.diffusion_coefficient_1d()?;
    let drift = move |x: f64| {
        let mut out = [0.0];
        model
            .drift_into(&[x], &mut out)
            .expect("1-D drift evaluation");
        out[0]
    };
    Ok((eps, drift))
}

/// Solve the stationary linear exit problem
/// `-(eps phi'' + b phi') = f` on `(a, b)` with Dirichlet data
/// `phi(a) = g_a`, `phi(b) = g_b`.
pub fn solve_linear_bvp(
    model: &SdeModel,
    f: impl Fn(f64) -> f64,
    g_a: f64,
    g_b: f64,
    grid: Grid1d,
) -> Result<PdeField> {
    let (eps, b) = require_1d(model)?;
    let m = grid.interior_nodes();
    let h = grid.h();
    let mut lower = vec![0.0; m - 1];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m - 1];
    let mut rhs = vec![0.0; m];

    for k in 0..m {
        let x = grid.node(k + 1);
        let bi = b(x);
        let lo = -eps / (h * h) + bi / (2.0 * h);
        let up = -eps / (h * h) - bi / (2.0 * h);
        diag[k] = 2.0 * eps / (h * h);
        rhs[k] = f(x);
        if k > 0 {
            lower[k - 1] = lo;
        } else {
            rhs[k] -= lo * g_a;
        }
        if k < m - 1 {
            upper[k] = up;
        } else {
            rhs[k] -= up * g_b;
        }
    }

    let interior = solve_tridiagonal(&lower, &diag, &upper, &rhs)?;
    let mut values = Vec::with_capacity(m + 2);
    values.push(g_a);
    values.extend_from_slice(&interior);
    values.push(g_b);
    PdeField::new(grid, values)
}

/// Solve the transformed exit problem
/// `eps h'' + b h' - alpha f h = 0` with boundary data `exp(-alpha g)`;
/// the solution is the conditional moment generating function
/// `h(x) = E[exp(-alpha S) | X_0 = x]`.
pub fn solve_mgf_bvp(
    model: &SdeModel,
    f: impl Fn(f64) -> f64,
    g_a: f64,
    g_b: f64,
    alpha: f64,
    grid: Grid1d,
) -> Result<PdeField> {
    if !(alpha >= 0.0) {
        return Err(Error::invalid_argument("alpha must be >= 0"));
    }
    let (eps, b) = require_1d(model)?;
    let m = grid.interior_nodes();
    let h = grid.h();
    let ga = (-alpha * g_a).exp();
    let gb = (-alpha * g_b).exp();

    let mut lower = vec![0.0; m - 1];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m - 1];
    let mut rhs = vec![0.0; m];

    for k in 0..m {
        let x = grid.node(k + 1);
        let bi = b(x);
        let lo = eps / (h * h) - bi / (2.0 * h);
        let up = eps / (h * h) + bi / (2.0 * h);
        diag[k] = -2.0 * eps / (h * h) - alpha * f(x);
        if k > 0 {
            lower[k - 1] = lo;
        } else {
            rhs[k] -= lo * ga;
        }
        if k < m - 1 {
            upper[k] = up;
        } else {
            rhs[k] -= up * gb;
        }
    }

    let interior = solve_tridiagonal(&lower, &diag, &upper, &rhs)?;
    let mut values = Vec::with_capacity(m + 2);
    values.push(ga);
    values.extend_from_slice(&interior);
    values.push(gb);
    PdeField::new(grid, values)
}

/// Nodewise log transform `V = -(1/alpha) log h` of a moment generating
/// function field. Fails if the field is not strictly positive.
pub fn value_from_mgf(h: &PdeField, alpha: f64) -> Result<PdeField> {
    if !(alpha > 0.0) {
        return Err(Error::invalid_argument("alpha must be > 0"));
    }
    let mut values = Vec::with_capacity(h.values().len());
    for (i, &hi) in h.values().iter().enumerate() {
        if hi <= 0.0 {
            return Err(Error::InvalidField(format!(
                "mgf field must be positive, node {i} has value {hi}"
            )));
        }
        values.push(-hi.ln() / alpha);
    }
    PdeField::new(h.grid().clone(), values)
}

/// Optimal feedback control field `u*(x) = -alpha sigma dV/dx` extracted from
/// a value-function field; evaluate off-node by linear interpolation.
pub fn control_from_value(v: &PdeField, alpha: f64, sigma: f64) -> Result<PdeField> {
    if !(alpha > 0.0) {
        return Err(Error::invalid_argument("alpha must be > 0"));
    }
    let values = v
        .nodal_derivative()
        .iter()
        .map(|d| -alpha * sigma * d)
        .collect();
    PdeField::new(v.grid().clone(), values)
}

/// Time-indexed solution of the backward parabolic exit-probability problem.
#[derive(Debug, Clone)]
pub struct ParabolicSolution {
    grid: Grid1d,
    horizon: f64,
    /// `fields[k]` is the spatial slice at time `k * horizon / (fields.len()-1)`.
    fields: Vec<PdeField>,
}

impl ParabolicSolution {
    pub fn grid(&self) -> &Grid1d {
        &self.grid
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn time_steps(&self) -> usize {
        self.fields.len() - 1
    }

    /// Spatial slice at time index `k`.
    pub fn field_at_index(&self, k: usize) -> &PdeField {
        &self.fields[k]
    }

    fn time_locate(&self, t: f64) -> (usize, f64) {
        let k_max = self.fields.len() - 1;
        let dt = self.horizon / k_max as f64;
        let s = (t / dt).clamp(0.0, k_max as f64);
        let k = (s.floor() as usize).min(k_max - 1);
        (k, s - k as f64)
    }

    /// Bilinear (time x space) interpolation of the solution.
    pub fn value_at(&self, t: f64, x: f64) -> f64 {
        let (k, w) = self.time_locate(t);
        self.fields[k].value_at(x) * (1.0 - w) + self.fields[k + 1].value_at(x) * w
    }

    /// Spatial derivative, interpolated in time.
    pub fn space_derivative_at(&self, t: f64, x: f64) -> f64 {
        let (k, w) = self.time_locate(t);
        self.fields[k].derivative_at(x) * (1.0 - w) + self.fields[k + 1].derivative_at(x) * w
    }
}

/// Solve the backward parabolic problem for the exit probability
/// `psi(t, x) = P(tau <= T | X_t = x)`:
/// `d psi/dt + eps psi'' + b psi' = 0` with `psi = 1` on the spatial boundary
/// and `psi(T, .) = 0` in the interior, by implicit Euler in time.
pub fn solve_parabolic_fk(
    model: &SdeModel,
    horizon: f64,
    time_steps: usize,
    grid: Grid1d,
) -> Result<ParabolicSolution> {
    if !(horizon > 0.0) {
        return Err(Error::invalid_argument("horizon must be > 0"));
    }
    if time_steps == 0 {
        return Err(Error::invalid_argument("need at least one time step"));
    }
    let (eps, b) = require_1d(model)?;
    let m = grid.interior_nodes();
    let h = grid.h();
    let dt = horizon / time_steps as f64;

    let mut lower = vec![0.0; m - 1];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m - 1];
    let mut boundary_a = 0.0;
    let mut boundary_b = 0.0;
    for k in 0..m {
        let x = grid.node(k + 1);
        let bi = b(x);
        let lo = -eps / (h * h) + bi / (2.0 * h);
        let up = -eps / (h * h) - bi / (2.0 * h);
        diag[k] = 1.0 / dt + 2.0 * eps / (h * h);
        if k > 0 {
            lower[k - 1] = lo;
        } else {
            boundary_a = lo;
        }
        if k < m - 1 {
            upper[k] = up;
        } else {
            boundary_b = up;
        }
    }

    // Terminal slice: 1 on the boundary, 0 in the interior.
    let mut terminal = vec![0.0; m + 2];
    terminal[0] = 1.0;
    terminal[m + 1] = 1.0;
    let mut slices = vec![PdeField::new(grid.clone(), terminal)?];

    let mut rhs = vec![0.0; m];
    for _ in 0..time_steps {
        let prev = slices.last().unwrap();
        for k in 0..m {
            rhs[k] = prev.values()[k + 1] / dt;
        }
        rhs[0] -= boundary_a; // psi = 1 at the left boundary
        rhs[m - 1] -= boundary_b; // psi = 1 at the right boundary
        let interior = solve_tridiagonal(&lower, &diag, &upper, &rhs)?;
        let mut values = Vec::with_capacity(m + 2);
        values.push(1.0);
        values.extend_from_slice(&interior);
        values.push(1.0);
        slices.push(PdeField::new(grid.clone(), values)?);
    }

    // Slices were computed backward from the terminal condition; index 0 of
    // the stored vector must correspond to t = 0.
    slices.reverse();
    Ok(ParabolicSolution {
        grid,
        horizon,
        fields: slices,
    })
}

/// Maximum interior-node residual of the stationary risk-sensitive equation
/// `eps V'' + b V' - (alpha/2) |V'|^2_{sigma sigma^T} + f = 0`,
/// computed with central differences. In 1-D the weighted norm is
/// `2 eps (V')^2`.
pub fn hjb_residual(
    v: &PdeField,
    model: &SdeModel,
    f: impl Fn(f64) -> f64,
    alpha: f64,
) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::invalid_argument("alpha must be > 0"));
    }
    let (eps, b) = require_1d(model)?;
    let grid = v.grid();
    let h = grid.h();
    let vals = v.values();
    let mut max_resid = 0.0f64;
    for i in 1..=grid.interior_nodes() {
        let x = grid.node(i);
        let d1 = (vals[i + 1] - vals[i - 1]) / (2.0 * h);
        let d2 = (vals[i + 1] - 2.0 * vals[i] + vals[i - 1]) / (h * h);
        let resid = eps * d2 + b(x) * d1 - alpha * eps * d1 * d1 + f(x);
        max_resid = max_resid.max(resid.abs());
    }
    Ok(max_resid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::SdeModel;
    use approx::assert_relative_eq;

    fn bm_1d() -> SdeModel {
        SdeModel::brownian(1, 0.05).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid1d::new(1.0, -1.0, 10).is_err());
        assert!(Grid1d::new(-1.0, 1.0, 2).is_err());
        let g = Grid1d::new(-1.0, 1.0, 3).unwrap();
        assert_relative_eq!(g.h(), 0.5);
        assert_relative_eq!(g.node(0), -1.0);
        assert_relative_eq!(g.node(4), 1.0);
    }

    #[test]
    fn linear_bvp_zero_data_gives_zero() {
        let grid = Grid1d::new(-1.0, 1.0, 99).unwrap();
        let phi = solve_linear_bvp(&bm_1d(), |_| 0.0, 0.0, 0.0, grid).unwrap();
        assert!(phi.values().iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn linear_bvp_reproduces_linear_functions_exactly() {
        // f = 0 with boundary data 0/1 gives the committor (x - a)/(b - a).
        let grid = Grid1d::new(-1.0, 1.0, 199).unwrap();
        let phi = solve_linear_bvp(&bm_1d(), |_| 0.0, 0.0, 1.0, grid).unwrap();
        let err = phi.max_error_against(|x| (x + 1.0) / 2.0);
        assert!(err <= 1e-12, "max error {err}");
    }

    #[test]
    fn linear_bvp_exit_time_is_exact_for_quadratics() {
        let grid = Grid1d::new(-1.0, 1.0, 1999).unwrap();
        let phi = solve_linear_bvp(&bm_1d(), |_| 1.0, 0.0, 0.0, grid).unwrap();
        let err = phi.max_error_against(|x| (1.0 - x * x) / 0.1);
        assert!(err <= 1e-6, "max error {err}");
        assert_relative_eq!(phi.value_at(0.0), 10.0, max_relative = 1e-7);
    }

    #[test]
    fn mgf_bvp_matches_analytic_solution() {
        let grid = Grid1d::new(-1.0, 1.0, 1999).unwrap();
        let h = solve_mgf_bvp(&bm_1d(), |_| 1.0, 0.0, 0.0, 0.1, grid).unwrap();
        let err = h.max_error_against(|x| {
            crate::analytic::mgf_exit_bm_1d(x, 1.0, 0.05, 0.1).unwrap()
        });
        assert!(err <= 1e-6, "max error {err}");
    }

    #[test]
    fn mgf_bvp_alpha_zero_is_one() {
        let grid = Grid1d::new(-1.0, 1.0, 49).unwrap();
        let h = solve_mgf_bvp(&bm_1d(), |_| 1.0, 0.0, 0.0, 0.0, grid).unwrap();
        assert!(h.values().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn mgf_bvp_no_running_cost_harmonic() {
        let grid = Grid1d::new(-1.0, 1.0, 49).unwrap();
        let h = solve_mgf_bvp(&bm_1d(), |_| 0.0, 0.0, 0.0, 0.3, grid).unwrap();
        assert!(h.values().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn mgf_positivity_discrete_maximum_principle() {
        let grid = Grid1d::new(-1.0, 1.0, 513).unwrap();
        for &alpha in &[0.05, 0.1, 0.4, 1.0] {
            let h = solve_mgf_bvp(&bm_1d(), |_| 1.0, 0.0, 0.0, alpha, grid.clone()).unwrap();
            assert!(
                h.values().iter().all(|&v| v > 0.0 && v <= 1.0 + 1e-15),
                "positivity violated at alpha = {alpha}"
            );
        }
    }

    #[test]
    fn grid_halving_is_second_order() {
        let oracle = |x: f64| crate::analytic::mgf_exit_bm_1d(x, 1.0, 0.05, 0.1).unwrap();
        let coarse = solve_mgf_bvp(
            &bm_1d(),
            |_| 1.0,
            0.0,
            0.0,
            0.1,
            Grid1d::new(-1.0, 1.0, 249).unwrap(),
        )
        .unwrap();
        let fine = solve_mgf_bvp(
            &bm_1d(),
            |_| 1.0,
            0.0,
            0.0,
            0.1,
            Grid1d::new(-1.0, 1.0, 499).unwrap(),
        )
        .unwrap();
        let e_coarse = coarse.max_error_against(oracle);
        let e_fine = fine.max_error_against(oracle);
        assert!(
            e_coarse / e_fine >= 3.5,
            "halving ratio {} too small",
            e_coarse / e_fine
        );
    }

    #[test]
    fn value_from_mgf_reference_point_and_boundary() {
        let grid = Grid1d::new(-1.0, 1.0, 1999).unwrap();
        let h = solve_mgf_bvp(&bm_1d(), |_| 1.0, 0.0, 0.0, 0.1, grid).unwrap();
        let v = value_from_mgf(&h, 0.1).unwrap();
        let expected = crate::analytic::value_exit_bm_1d(0.0, 1.0, 0.05, 0.1).unwrap();
        assert_relative_eq!(v.value_at(0.0), expected, max_relative = 1e-6);
        // Boundary nodes carry V = g = 0 exactly.
        assert_eq!(v.values()[0], 0.0);
        assert_eq!(*v.values().last().unwrap(), 0.0);

        let flat = PdeField::from_fn(Grid1d::new(-1.0, 1.0, 9).unwrap(), |_| 1.0).unwrap();
        let v = value_from_mgf(&flat, 0.5).unwrap();
        assert!(v.values().iter().all(|&x| x.abs() < 1e-15));

        let bad = PdeField::from_fn(Grid1d::new(-1.0, 1.0, 9).unwrap(), |x| x).unwrap();
        assert!(value_from_mgf(&bad, 0.5).is_err());
    }

    #[test]
    fn control_field_symmetry_and_risk_neutral_limit() {
        let sigma = (0.1f64).sqrt();
        let grid = Grid1d::new(-1.0, 1.0, 1999).unwrap();

        // Constant value function: zero control.
        let flat = PdeField::from_fn(grid.clone(), |_| 3.0).unwrap();
        let u = control_from_value(&flat, 0.1, sigma).unwrap();
        assert!(u.values().iter().all(|&v| v.abs() < 1e-12));

        // Symmetric problem: u*(0) = 0.
        let h = solve_mgf_bvp(&bm_1d(), |_| 1.0, 0.0, 0.0, 0.1, grid.clone()).unwrap();
        let v = value_from_mgf(&h, 0.1).unwrap();
        let u = control_from_value(&v, 0.1, sigma).unwrap();
        assert!(u.value_at(0.0).abs() <= 1e-6);

        // u*/alpha at x = 0.5 approaches -sigma phi'(0.5) = sqrt(0.1) * 10.
        let alpha = 1e-3;
        let h = solve_mgf_bvp(&bm_1d(), |_| 1.0, 0.0, 0.0, alpha, grid).unwrap();
        let v = value_from_mgf(&h, alpha).unwrap();
        let u = control_from_value(&v, alpha, sigma).unwrap();
        let expected = sigma * 10.0;
        let got = u.value_at(0.5) / alpha;
        assert!(
            (got - expected).abs() / expected <= 0.02,
            "u*/alpha = {got}, expected {expected}"
        );
    }

    #[test]
    fn hjb_residual_consistency() {
        let model = bm_1d();
        let grid = Grid1d::new(-1.0, 1.0, 1999).unwrap();
        let h = solve_mgf_bvp(&model, |_| 1.0, 0.0, 0.0, 0.1, grid.clone()).unwrap();
        let v = value_from_mgf(&h, 0.1).unwrap();
        let resid = hjb_residual(&v, &model, |_| 1.0, 0.1).unwrap();
        assert!(resid <= 1e-3, "residual {resid}");

        // Zero field with f = 0 solves the equation exactly.
        let zero = PdeField::from_fn(grid.clone(), |_| 0.0).unwrap();
        assert_eq!(hjb_residual(&zero, &model, |_| 0.0, 0.1).unwrap(), 0.0);

        // Risk-neutral field: the alpha term alone is bounded by
        // alpha * eps * max(phi')^2.
        let phi = solve_linear_bvp(&model, |_| 1.0, 0.0, 0.0, grid).unwrap();
        for &alpha in &[1e-2, 1e-3, 1e-4] {
            let resid = hjb_residual(&phi, &model, |_| 1.0, alpha).unwrap();
            let dmax = phi
                .nodal_derivative()
                .iter()
                .fold(0.0f64, |a, d| a.max(d.abs()));
            let bound = alpha * 0.05 * dmax * dmax + 1e-4;
            assert!(resid <= bound, "alpha={alpha}: resid {resid} > bound {bound}");
        }
    }

    #[test]
    fn parabolic_terminal_and_boundary_data_exact() {
        let model = bm_1d();
        let grid = Grid1d::new(-1.0, 1.0, 99).unwrap();
        let sol = solve_parabolic_fk(&model, 2.0, 50, grid).unwrap();
        let terminal = sol.field_at_index(sol.time_steps());
        assert_eq!(terminal.values()[0], 1.0);
        assert_eq!(terminal.values()[50], 0.0);
        for k in 0..=sol.time_steps() {
            let f = sol.field_at_index(k);
            assert_eq!(f.values()[0], 1.0);
            assert_eq!(*f.values().last().unwrap(), 1.0);
        }
    }

    #[test]
    fn parabolic_long_horizon_and_monotonicity() {
        let model = bm_1d();
        let grid = Grid1d::new(-1.0, 1.0, 199).unwrap();
        // 20x the mean exit time from the centre.
        let sol = solve_parabolic_fk(&model, 200.0, 400, grid).unwrap();
        let psi0 = sol.field_at_index(0);
        assert!(
            psi0.values().iter().all(|&v| (v - 1.0).abs() <= 1e-3),
            "exit is almost sure for long horizons"
        );

        // At a horizon of order the exit time, psi(0, x) grows with |x|.
        let sol = solve_parabolic_fk(&model, 5.0, 200, Grid1d::new(-1.0, 1.0, 199).unwrap()).unwrap();
        let psi0 = sol.field_at_index(0);
        let vals = psi0.values();
        let mid = vals.len() / 2;
        for i in mid..vals.len() - 1 {
            assert!(
                vals[i + 1] >= vals[i] - 1e-12,
                "psi must be nondecreasing toward the boundary"
            );
        }
        for i in 0..mid {
            assert!(vals[i] >= vals[i + 1] - 1e-12);
        }
    }

    #[test]
    fn field_csv_round_trip() {
        let grid = Grid1d::new(-1.0, 1.0, 9).unwrap();
        let f = PdeField::from_fn(grid, |x| x * x).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let g = PdeField::read_csv(&buf[..]).unwrap();
        assert_eq!(f.values(), g.values());
        assert_eq!(f.grid(), g.grid());
    }

    #[test]
    fn derivative_accessor_linear_exactness() {
        let grid = Grid1d::new(-2.0, 3.0, 17).unwrap();
        let f = PdeField::from_fn(grid, |x| 2.5 * x - 1.0).unwrap();
        for &x in &[-2.0, -1.3, 0.0, 0.7, 2.9, 3.0] {
            assert_relative_eq!(f.derivative_at(x), 2.5, max_relative = 1e-12);
        }
        assert_relative_eq!(f.value_at(0.7), 2.5 * 0.7 - 1.0, max_relative = 1e-12);
    }
}
