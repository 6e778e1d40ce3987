//! Full-order finite-difference model of
//! `y_t - θ y_xx + y_x + ρ (y³ - y) = u` on (0, 1) with homogeneous Dirichlet
//! conditions, discretized by second-order central differences in space and
//! implicit Euler in time.
//!
//! Only interior nodal values are stored; boundary values are zero and enter
//! through the stencils.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{inf_norm, solve_tridiagonal};
use crate::trajectory::Trajectory;

pub const NEWTON_TOL: f64 = 1e-10;
pub const MAX_NEWTON: usize = 25;

#[derive(Clone, Debug, PartialEq)]
pub struct SpatialGrid {
    n_interior: usize,
    dx: f64,
    nodes: Vec<f64>,
}

impl SpatialGrid {
    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Samples `f` at the interior nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&x| f(x)).collect()
    }
}

pub fn build_grid(n_interior: usize) -> Result<SpatialGrid> {
    if n_interior < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid needs at least 2 interior nodes, got {n_interior}"
        )));
    }
    let dx = 1.0 / (n_interior + 1) as f64;
    let nodes = (1..=n_interior).map(|i| i as f64 * dx).collect();
    Ok(SpatialGrid {
        n_interior,
        dx,
        nodes,
    })
}

/// Constants of one problem instance. Infinite control bounds encode the
/// unconstrained case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub theta: f64,
    pub rho: f64,
    pub lambda: f64,
    pub u_a: f64,
    pub u_b: f64,
    pub dt: f64,
    /// Desired state at the interior nodes; `None` means `y_d = 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_d: Option<Vec<f64>>,
}

impl ModelParams {
    pub fn new(theta: f64, rho: f64, lambda: f64, dt: f64) -> Result<Self> {
        Self::with_bounds(theta, rho, lambda, f64::NEG_INFINITY, f64::INFINITY, dt)
    }

    pub fn with_bounds(theta: f64, rho: f64, lambda: f64, u_a: f64, u_b: f64, dt: f64) -> Result<Self> {
        let p = Self {
            theta,
            rho,
            lambda,
            u_a,
            u_b,
            dt,
            y_d: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return bad("theta must be positive");
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad("rho must be positive");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if self.u_a.is_nan() || self.u_b.is_nan() || self.u_a > 0.0 || self.u_b < 0.0 {
            return bad("control bounds must satisfy u_a <= 0 <= u_b");
        }
        if let Some(yd) = &self.y_d {
            if yd.iter().any(|v| !v.is_finite()) {
                return bad("desired state must be finite");
            }
        }
        Ok(())
    }

    pub fn is_unconstrained(&self) -> bool {
        self.u_a == f64::NEG_INFINITY && self.u_b == f64::INFINITY
    }

    pub fn desired(&self, i: usize) -> f64 {
        self.y_d.as_ref().map_or(0.0, |yd| yd[i])
    }

    pub(crate) fn check_grid(&self, grid: &SpatialGrid) -> Result<()> {
        if let Some(yd) = &self.y_d {
            check_dim("desired state", grid.n_interior(), yd.len())?;
        }
        Ok(())
    }
}

/// Stencil coefficients of `A = θ L + B` where `L` is the negative discrete
/// Laplacian and `B` the central first-derivative matrix.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Stencil {
    pub diag: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Stencil {
    pub fn new(theta: f64, dx: f64) -> Self {
        let diff = theta / (dx * dx);
        let adv = 0.5 / dx;
        Self {
            diag: 2.0 * diff,
            lower: -diff - adv,
            upper: -diff + adv,
        }
    }

    pub fn transposed(self) -> Self {
        Self {
            diag: self.diag,
            lower: self.upper,
            upper: self.lower,
        }
    }

    /// `out = A y`.
    pub fn apply(&self, y: &[f64], out: &mut [f64]) {
        let n = y.len();
        for i in 0..n {
            let left = if i > 0 { y[i - 1] } else { 0.0 };
            let right = if i + 1 < n { y[i + 1] } else { 0.0 };
            out[i] = self.lower * left + self.diag * y[i] + self.upper * right;
        }
    }
}

/// Reaction term `ρ (y³ - y)` and its derivative.
#[inline]
pub fn reaction(rho: f64, y: f64) -> f64 {
    rho * (y * y * y - y)
}

#[inline]
pub fn reaction_derivative(rho: f64, y: f64) -> f64 {
    rho * (3.0 * y * y - 1.0)
}

/// Reusable buffers for the implicit Euler / Newton steps.
pub(crate) struct StepWorkspace {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    rhs: Vec<f64>,
    scratch: Vec<f64>,
    ay: Vec<f64>,
}

impl StepWorkspace {
    pub fn new(n: usize) -> Self {
        Self {
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
            rhs: vec![0.0; n],
            scratch: vec![0.0; n],
            ay: vec![0.0; n],
        }
    }
}

/// One implicit Euler step of
/// `(y - y_prev)/dt + A y + gain y + ρ(y³ - y) = u`, solved by Newton.
/// `y` holds the initial guess on entry and the solution on exit.
#[allow(clippy::too_many_arguments)]
pub(crate) fn implicit_step(
    stencil: &Stencil,
    rho: f64,
    dt: f64,
    gain: f64,
    y_prev: &[f64],
    u: Option<&[f64]>,
    y: &mut [f64],
    ws: &mut StepWorkspace,
    step: usize,
) -> Result<()> {
    let n = y.len();
    let inv_dt = 1.0 / dt;
    let mut residual = f64::INFINITY;
    for _ in 0..=MAX_NEWTON {
        stencil.apply(y, &mut ws.ay);
        for i in 0..n {
            let forcing = u.map_or(0.0, |u| u[i]);
            ws.rhs[i] = -((y[i] - y_prev[i]) * inv_dt + ws.ay[i] + gain * y[i] + reaction(rho, y[i]) - forcing);
        }
        residual = inf_norm(&ws.rhs);
        if residual <= NEWTON_TOL {
            return Ok(());
        }
        if !residual.is_finite() {
            break;
        }
        for i in 0..n {
            ws.lower[i] = stencil.lower;
            ws.upper[i] = stencil.upper;
            ws.diag[i] = inv_dt + stencil.diag + gain + reaction_derivative(rho, y[i]);
        }
        solve_tridiagonal(&ws.lower, &ws.diag, &ws.upper, &mut ws.rhs, &mut ws.scratch)?;
        for i in 0..n {
            y[i] += ws.rhs[i];
        }
    }
    Err(Error::NewtonDivergence { step, residual })
}

fn check_initial(grid: &SpatialGrid, y0: &[f64]) -> Result<()> {
    check_dim("initial state", grid.n_interior(), y0.len())?;
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("initial state must be finite".into()));
    }
    Ok(())
}

/// Forward solve over `n_steps` implicit Euler steps. Row `k` of `u` is the
/// control acting on `(t_k, t_{k+1}]`; `None` means `u = 0`.
///
/// Returns `n_steps + 1` rows starting with `y0`.
pub fn solve_state(
    params: &ModelParams,
    grid: &SpatialGrid,
    t0: f64,
    n_steps: usize,
    y0: &[f64],
    u: Option<&Trajectory>,
) -> Result<Trajectory> {
    params.check_grid(grid)?;
    check_initial(grid, y0)?;
    if let Some(u) = u {
        check_dim("control width", grid.n_interior(), u.width())?;
        check_dim("control rows", n_steps, u.len())?;
    }
    let n = grid.n_interior();
    let stencil = Stencil::new(params.theta, grid.dx());
    let mut ws = StepWorkspace::new(n);
    let mut out = Trajectory::with_capacity(t0, params.dt, n, n_steps + 1);
    out.push_row(y0)?;
    let mut prev = y0.to_vec();
    let mut next = y0.to_vec();
    for k in 0..n_steps {
        let uk = u.map(|u| u.row(k));
        implicit_step(&stencil, params.rho, params.dt, 0.0, &prev, uk, &mut next, &mut ws, k + 1)?;
        out.push_row(&next)?;
        prev.copy_from_slice(&next);
    }
    Ok(out)
}

/// Backward solve of the discrete adjoint of [`solve_state`] for the
/// left-rectangle tracking cost:
///
/// `(p_j - p_{j+1})/dt + (Aᵀ + ρ(3ȳ_j² - 1)) p_j = y_d - ȳ_j`, `p_N = 0`.
///
/// The reduced gradient of the horizon cost with respect to the control on
/// `(t_k, t_{k+1}]` is `λ u_k - p_{k+1}`.
pub fn solve_adjoint(params: &ModelParams, grid: &SpatialGrid, ybar: &Trajectory) -> Result<Trajectory> {
    params.check_grid(grid)?;
    check_dim("state width", grid.n_interior(), ybar.width())?;
    let rows = ybar.len();
    if rows == 0 {
        return Err(Error::InvalidArgument("empty state trajectory".into()));
    }
    let n = grid.n_interior();
    let st = Stencil::new(params.theta, grid.dx()).transposed();
    let inv_dt = 1.0 / params.dt;
    let mut p = Trajectory::zeros(ybar.t0(), ybar.dt(), rows, n);
    let (mut lower, mut diag, mut upper) = (vec![st.lower; n], vec![0.0; n], vec![st.upper; n]);
    let mut scratch = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for j in (0..rows - 1).rev() {
        let yj = ybar.row(j);
        let next = p.row(j + 1);
        for i in 0..n {
            diag[i] = inv_dt + st.diag + reaction_derivative(params.rho, yj[i]);
            rhs[i] = next[i] * inv_dt + params.desired(i) - yj[i];
        }
        lower.iter_mut().for_each(|v| *v = st.lower);
        upper.iter_mut().for_each(|v| *v = st.upper);
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs, &mut scratch)?;
        p.row_mut(j).copy_from_slice(&rhs);
    }
    Ok(p)
}

#[derive(Clone, Debug)]
pub struct FeedbackRollout {
    pub state: Trajectory,
    /// `u_k = -K y_k` at every time level (same row count as `state`).
    pub control: Trajectory,
    /// Set when some recorded control value leaves `[u_a, u_b]`.
    pub bound_violation: bool,
}

/// Closed loop under the linear feedback `u = -K y`, folded into the implicit
/// system of each step.
pub fn feedback_rollout(
    params: &ModelParams,
    grid: &SpatialGrid,
    t0: f64,
    n_steps: usize,
    y0: &[f64],
    gain: f64,
) -> Result<FeedbackRollout> {
    params.check_grid(grid)?;
    check_initial(grid, y0)?;
    if !(gain >= 0.0 && gain.is_finite()) {
        return Err(Error::InvalidArgument(format!("feedback gain must be >= 0, got {gain}")));
    }
    let n = grid.n_interior();
    let stencil = Stencil::new(params.theta, grid.dx());
    let mut ws = StepWorkspace::new(n);
    let mut state = Trajectory::with_capacity(t0, params.dt, n, n_steps + 1);
    state.push_row(y0)?;
    let mut prev = y0.to_vec();
    let mut next = y0.to_vec();
    for k in 0..n_steps {
        implicit_step(&stencil, params.rho, params.dt, gain, &prev, None, &mut next, &mut ws, k + 1)?;
        state.push_row(&next)?;
        prev.copy_from_slice(&next);
    }
    let control = state.map(|v| if v == 0.0 { 0.0 } else { -gain * v });
    let bound_violation = control
        .as_slice()
        .iter()
        .any(|&u| u < params.u_a || u > params.u_b);
    Ok(FeedbackRollout {
        state,
        control,
        bound_violation,
    })
}

/// `‖φ‖_H² = Δx Σ φ_i²`.
pub fn h_norm_sq(grid: &SpatialGrid, phi: &[f64]) -> f64 {
    grid.dx() * phi.iter().map(|v| v * v).sum::<f64>()
}

pub fn h_norm(grid: &SpatialGrid, phi: &[f64]) -> f64 {
    h_norm_sq(grid, phi).sqrt()
}

pub fn h_inner(grid: &SpatialGrid, a: &[f64], b: &[f64]) -> f64 {
    grid.dx() * crate::linalg::dot(a, b)
}

/// `⟨a, b⟩_V = Σ (a_{i+1} - a_i)(b_{i+1} - b_i) / Δx` with zero boundary values.
pub fn v_inner(grid: &SpatialGrid, a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let at = |v: &[f64], i: isize| if i < 0 || i as usize >= n { 0.0 } else { v[i as usize] };
    let mut s = 0.0;
    for i in -1..n as isize {
        s += (at(a, i + 1) - at(a, i)) * (at(b, i + 1) - at(b, i));
    }
    s / grid.dx()
}

pub fn v_norm_sq(grid: &SpatialGrid, phi: &[f64]) -> f64 {
    v_inner(grid, phi, phi)
}

/// `‖y‖²_{L²(t0,T;H)}` by the left-rectangle rule (the final row carries no weight).
pub fn l2_time_h_norm_sq(grid: &SpatialGrid, y: &Trajectory) -> f64 {
    let rows = y.len();
    if rows < 2 {
        return 0.0;
    }
    y.rows().take(rows - 1).map(|r| h_norm_sq(grid, r)).sum::<f64>() * y.dt()
}

pub fn l2_time_h_norm(grid: &SpatialGrid, y: &Trajectory) -> f64 {
    l2_time_h_norm_sq(grid, y).sqrt()
}

/// Per-time-level norms of a trajectory.
pub fn h_norm_history(grid: &SpatialGrid, y: &Trajectory) -> Vec<f64> {
    y.rows().map(|r| h_norm(grid, r)).collect()
}
