//! Finite-horizon open-loop problem: minimize the left-rectangle quadrature of
//! the running cost over piecewise-constant controls in the admissible box,
//! by projected gradient with Armijo backtracking. The model is abstract so
//! the same solver drives the full finite-difference model and the reduced
//! POD model.

use crate::error::{check_dim, Error, Result};
use crate::fd_model::{self, h_norm_sq, ModelParams, SpatialGrid};
use crate::trajectory::Trajectory;

/// Forward/adjoint oracle for one open-loop horizon.
///
/// States live in model coordinates (grid values or reduced coefficients);
/// controls and adjoints are always grid functions.
pub trait HorizonModel {
    fn params(&self) -> &ModelParams;
    fn grid(&self) -> &SpatialGrid;
    fn state_dim(&self) -> usize;

    /// States for `controls.len()` steps, `controls.len() + 1` rows.
    fn simulate(&self, t0: f64, y0: &[f64], controls: &Trajectory) -> Result<Trajectory>;

    /// `½‖y - y_d‖²_H` for a state in model coordinates.
    fn tracking_cost(&self, y: &[f64]) -> f64;

    /// Discrete adjoint for a simulated trajectory, lifted to the grid.
    fn adjoint(&self, states: &Trajectory) -> Result<Trajectory>;
}

/// The full-order finite-difference model.
#[derive(Clone, Debug)]
pub struct FullModel {
    params: ModelParams,
    grid: SpatialGrid,
}

impl FullModel {
    pub fn new(params: ModelParams, grid: SpatialGrid) -> Result<Self> {
        params.validate()?;
        params.check_grid(&grid)?;
        Ok(Self { params, grid })
    }
}

impl HorizonModel for FullModel {
    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    fn state_dim(&self) -> usize {
        self.grid.n_interior()
    }

    fn simulate(&self, t0: f64, y0: &[f64], controls: &Trajectory) -> Result<Trajectory> {
        fd_model::solve_state(&self.params, &self.grid, t0, controls.len(), y0, Some(controls))
    }

    fn tracking_cost(&self, y: &[f64]) -> f64 {
        match &self.params.y_d {
            None => 0.5 * h_norm_sq(&self.grid, y),
            Some(yd) => {
                0.5 * self.grid.dx() * y.iter().zip(yd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            }
        }
    }

    fn adjoint(&self, states: &Trajectory) -> Result<Trajectory> {
        fd_model::solve_adjoint(&self.params, &self.grid, states)
    }
}

/// `ℓ(y, u) = ½(‖y - y_d‖²_H + λ‖u‖²_H)`.
pub fn running_cost(params: &ModelParams, grid: &SpatialGrid, y: &[f64], u: &[f64]) -> f64 {
    let dx = grid.dx();
    let track: f64 = y
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let e = v - params.desired(i);
            e * e
        })
        .sum();
    0.5 * dx * track + 0.5 * params.lambda * h_norm_sq(grid, u)
}

/// Left-rectangle quadrature of the running cost: rows `0..controls.len()`.
pub(crate) fn quadrature_cost<M: HorizonModel + ?Sized>(model: &M, states: &Trajectory, controls: &Trajectory) -> f64 {
    let control_sq = crate::linalg::dot(controls.as_slice(), controls.as_slice());
    quadrature_cost_with(model, states, controls.len(), control_sq)
}

/// Same as [`quadrature_cost`] with `Σ_k Σ_i u_{k,i}²` supplied by the caller.
fn quadrature_cost_with<M: HorizonModel + ?Sized>(model: &M, states: &Trajectory, rows: usize, control_sq: f64) -> f64 {
    let params = model.params();
    let tracking: f64 = (0..rows).map(|k| model.tracking_cost(states.row(k))).sum();
    (tracking + 0.5 * params.lambda * model.grid().dx() * control_sq) * params.dt
}

/// `⟨a, b⟩_{L²(t;H)}` for control-shaped trajectories.
pub fn l2_inner(grid: &SpatialGrid, a: &Trajectory, b: &Trajectory) -> f64 {
    a.dt() * grid.dx() * crate::linalg::dot(a.as_slice(), b.as_slice())
}

pub fn l2_norm(grid: &SpatialGrid, a: &Trajectory) -> f64 {
    l2_inner(grid, a, a).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Stop when `‖u - Proj(u - g)‖_{L²} ≤ tol`.
    pub tol: f64,
    pub max_outer: usize,
    pub armijo_c: f64,
    pub max_backtracks: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_outer: 500,
            armijo_c: 1e-4,
            max_backtracks: 60,
        }
    }
}

pub struct OpenLoopProblem<'a, M: HorizonModel + ?Sized> {
    pub model: &'a M,
    pub t0: f64,
    pub horizon_steps: usize,
    pub y0: Vec<f64>,
}

impl<'a, M: HorizonModel + ?Sized> OpenLoopProblem<'a, M> {
    pub fn new(model: &'a M, t0: f64, horizon_steps: usize, y0: Vec<f64>) -> Result<Self> {
        if horizon_steps == 0 {
            return Err(Error::InvalidArgument("horizon must have at least one step".into()));
        }
        check_dim("initial state", model.state_dim(), y0.len())?;
        Ok(Self {
            model,
            t0,
            horizon_steps,
            y0,
        })
    }

    pub fn zero_control(&self) -> Trajectory {
        Trajectory::zeros(
            self.t0,
            self.model.params().dt,
            self.horizon_steps,
            self.model.grid().n_interior(),
        )
    }

    fn check_control(&self, u: &Trajectory) -> Result<()> {
        check_dim("control width", self.model.grid().n_interior(), u.width())?;
        check_dim("control rows", self.horizon_steps, u.len())
    }
}

#[derive(Clone, Debug)]
pub struct OpenLoopSolution {
    pub u_opt: Trajectory,
    /// Optimal states in model coordinates.
    pub y_opt: Trajectory,
    pub cost: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub cost_history: Vec<f64>,
}

pub fn horizon_cost<M: HorizonModel + ?Sized>(problem: &OpenLoopProblem<'_, M>, u: &Trajectory) -> Result<f64> {
    problem.check_control(u)?;
    let y = problem.model.simulate(problem.t0, &problem.y0, u)?;
    Ok(quadrature_cost(problem.model, &y, u))
}

/// `g_k = λ u_k - p_{k+1}`: the control on `(t_k, t_{k+1}]` pairs with the
/// adjoint at the end of its interval.
pub fn reduced_gradient(lambda: f64, u: &Trajectory, p: &Trajectory) -> Result<Trajectory> {
    check_dim("adjoint width", u.width(), p.width())?;
    check_dim("adjoint rows", u.len() + 1, p.len())?;
    let mut g = u.clone();
    for k in 0..u.len() {
        let pk = p.row(k + 1);
        for (gi, &pi) in g.row_mut(k).iter_mut().zip(pk) {
            *gi = lambda * *gi - pi;
        }
    }
    Ok(g)
}

/// Entrywise clamp to `[u_a, u_b]`.
pub fn project_box(params: &ModelParams, u: &Trajectory) -> Trajectory {
    u.map(|v| v.clamp(params.u_a, params.u_b))
}

fn stationarity(params: &ModelParams, grid: &SpatialGrid, u: &Trajectory, g: &Trajectory) -> f64 {
    let s: f64 = u
        .as_slice()
        .iter()
        .zip(g.as_slice())
        .map(|(&ui, &gi)| {
            let d = ui - (ui - gi).clamp(params.u_a, params.u_b);
            d * d
        })
        .sum();
    (s * u.dt() * grid.dx()).sqrt()
}

/// Projected-gradient solve with Armijo backtracking starting from the step
/// `1/λ` (which maps `u` to `Proj(p/λ)`).
pub fn solve_open_loop<M: HorizonModel + ?Sized>(
    problem: &OpenLoopProblem<'_, M>,
    u_init: &Trajectory,
    opts: &SolverOptions,
) -> Result<OpenLoopSolution> {
    problem.check_control(u_init)?;
    let model = problem.model;
    let params = model.params();
    let grid = model.grid();
    let lambda = params.lambda;

    let mut u = project_box(params, u_init);
    let mut trial = u.clone();
    let mut g = u.clone();
    let mut y = model.simulate(problem.t0, &problem.y0, &u)?;
    let mut cost = quadrature_cost(model, &y, &u);
    let mut history = vec![cost];
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let weight = u.dt() * grid.dx();
    let width = u.width();

    while iterations < opts.max_outer {
        let p = model.adjoint(&y)?;
        check_dim("adjoint width", width, p.width())?;
        check_dim("adjoint rows", u.len() + 1, p.len())?;
        // Gradient λu_k - p_{k+1} and the projected-gradient residual in one pass.
        let mut res_sq = 0.0;
        for ((gi, &ui), &pi) in g
            .as_mut_slice()
            .iter_mut()
            .zip(u.as_slice())
            .zip(&p.as_slice()[width..])
        {
            *gi = lambda * ui - pi;
            let d = ui - (ui - *gi).clamp(params.u_a, params.u_b);
            res_sq += d * d;
        }
        residual = (res_sq * weight).sqrt();
        if residual <= opts.tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut step = 1.0 / lambda;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            // Projected step, ⟨g, trial - u⟩ and ‖trial‖² in one pass.
            let mut decrease = 0.0;
            let mut control_sq = 0.0;
            for ((t, &ui), &gi) in trial.as_mut_slice().iter_mut().zip(u.as_slice()).zip(g.as_slice()) {
                let v = (ui - step * gi).clamp(params.u_a, params.u_b);
                decrease += gi * (v - ui);
                control_sq += v * v;
                *t = v;
            }
            decrease *= weight;
            if let Ok(y_trial) = model.simulate(problem.t0, &problem.y0, &trial) {
                let c = quadrature_cost_with(model, &y_trial, trial.len(), control_sq);
                if c <= cost + opts.armijo_c * decrease {
                    accepted = Some((y_trial, c));
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((y_trial, c)) => {
                std::mem::swap(&mut u, &mut trial);
                y = y_trial;
                cost = c;
                history.push(c);
            }
            None => break,
        }
    }
    if !converged && iterations == opts.max_outer {
        let p = model.adjoint(&y)?;
        let g = reduced_gradient(lambda, &u, &p)?;
        residual = stationarity(params, grid, &u, &g);
        converged = residual <= opts.tol;
    }

    Ok(OpenLoopSolution {
        u_opt: u,
        y_opt: y,
        cost,
        kkt_residual: residual,
        iterations,
        converged,
        cost_history: history,
    })
}

/// Warm start for the next receding-horizon problem: drop the first step and
/// repeat the last one.
pub fn shift_warm_start(u: &Trajectory, t0: f64) -> Trajectory {
    let rows = u.len();
    let mut out = Trajectory::with_capacity(t0, u.dt(), u.width(), rows);
    for k in 1..rows {
        out.push_row(u.row(k)).expect("same width");
    }
    if let Some(last) = u.last_row() {
        out.push_row(last).expect("same width");
    }
    out
}
