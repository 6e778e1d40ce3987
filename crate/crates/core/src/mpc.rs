//! Receding-horizon drivers: full-order NMPC, POD(-DEIM) NMPC with the full
//! model as plant, the `u = -K y` reference loop, initial-state noise and
//! closed-loop metrics.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fd_model::{self, h_norm, l2_time_h_norm, ModelParams, SpatialGrid};
use crate::openloop::{
    running_cost, shift_warm_start, solve_open_loop, FullModel, HorizonModel, OpenLoopProblem, SolverOptions,
};
use crate::pod_rom::{
    build_deim, build_rom, choose_rank, collect_snapshots, compute_pod_basis, nonlinearity_snapshots, EnergyNorm,
    InnerProduct, PodBasis, ReducedModel, SnapshotConfig, SnapshotRole,
};
use crate::stability::rom_error_term;
use crate::trajectory::Trajectory;

/// Wall-clock timer; reads zero on targets without a system clock
/// (`wasm32-unknown-unknown`).
struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    started: std::time::Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Self {
            #[cfg(not(target_arch = "wasm32"))]
            started: std::time::Instant::now(),
        }
    }

    fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.started.elapsed().as_secs_f64();
        #[cfg(target_arch = "wasm32")]
        return 0.0;
    }
}

/// Reduced-order settings of the POD-NMPC loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RomSettings {
    /// Fixed POD rank; when absent the rank is chosen from `tau_pod`.
    #[serde(default)]
    pub pod_rank: Option<usize>,
    /// DEIM rank for the cubic term; absent means exact Galerkin evaluation.
    #[serde(default)]
    pub deim_rank: Option<usize>,
    #[serde(default = "default_tau_pod")]
    pub tau_pod: f64,
    #[serde(default)]
    pub energy_norm: EnergyNorm,
    #[serde(default)]
    pub space: InnerProduct,
    #[serde(default)]
    pub snapshots: SnapshotConfig,
    /// Reduce requested ranks that exceed what the snapshots support instead
    /// of failing.
    #[serde(default)]
    pub clamp_ranks: bool,
}

fn default_tau_pod() -> f64 {
    1e-4
}

impl Default for RomSettings {
    fn default() -> Self {
        Self {
            pod_rank: None,
            deim_rank: None,
            tau_pod: default_tau_pod(),
            energy_norm: EnergyNorm::default(),
            space: InnerProduct::default(),
            snapshots: SnapshotConfig::default(),
            clamp_ranks: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MpcConfig {
    pub params: ModelParams,
    pub grid: SpatialGrid,
    pub t_final: f64,
    /// Prediction horizon in `Δt` steps.
    pub horizon: usize,
    pub y0: Vec<f64>,
    pub rom: Option<RomSettings>,
    /// Amplitude of the multiplicative noise on the optimizer's initial state.
    pub noise_level: f64,
    pub rng_seed: u64,
    pub solver: SolverOptions,
}

impl MpcConfig {
    pub fn new(params: ModelParams, grid: SpatialGrid, t_final: f64, horizon: usize, y0: Vec<f64>) -> Self {
        Self {
            params,
            grid,
            t_final,
            horizon,
            y0,
            rom: None,
            noise_level: 0.0,
            rng_seed: 0,
            solver: SolverOptions::default(),
        }
    }

    /// Number of closed-loop steps `T / Δt`.
    pub fn steps(&self) -> Result<usize> {
        let ratio = self.t_final / self.params.dt;
        let steps = ratio.round();
        if !(steps >= 0.0) || (ratio - steps).abs() > 1e-8 {
            return Err(Error::Config(format!(
                "final time {} is not a multiple of dt = {}",
                self.t_final, self.params.dt
            )));
        }
        Ok(steps as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.params.check_grid(&self.grid)?;
        check_dim("initial state", self.grid.n_interior(), self.y0.len())?;
        self.steps()?;
        if self.horizon < 2 {
            return Err(Error::Config(format!("horizon must be >= 2, got {}", self.horizon)));
        }
        if !(0.0..1.0).contains(&self.noise_level) {
            return Err(Error::Config(format!("noise level must lie in [0, 1), got {}", self.noise_level)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MpcResult {
    /// Plant states `y_0..y_M`.
    pub state: Trajectory,
    /// Applied controls; row `n` acts on `(t_n, t_{n+1}]`.
    pub control: Trajectory,
    pub closed_loop_cost: f64,
    pub err_vs_reference: Option<f64>,
    /// Relative gap between the lifted one-step reduced prediction and the
    /// plant at `t_1..t_M` (empty for the full-order loop).
    pub err_term_history: Vec<Option<f64>>,
    /// Lifted reduced predictions at `t_1..t_M` (empty for the full-order loop).
    pub rom_predictions: Option<Trajectory>,
    /// Wall-clock time spent in open-loop solves.
    pub wall_time_total: f64,
    pub wall_time_per_step: Vec<f64>,
    /// Snapshot, POD and DEIM construction time.
    pub offline_time: f64,
    pub iterations: Vec<usize>,
    pub max_kkt_residual: f64,
    pub rom_info: Option<RomInfo>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RomInfo {
    pub pod_rank: usize,
    pub deim_rank: Option<usize>,
    pub eigenvalues: Vec<f64>,
    pub total_energy: f64,
}

/// `y_i (1 + δ_i)` with `δ_i` uniform on `[-noise_level, noise_level]`.
pub fn perturb_initial<R: Rng + ?Sized>(y: &[f64], noise_level: f64, rng: &mut R) -> Vec<f64> {
    if noise_level == 0.0 {
        return y.to_vec();
    }
    let dist = Uniform::new_inclusive(-noise_level, noise_level);
    y.iter().map(|&v| v * (1.0 + dist.sample(rng))).collect()
}

/// Left-rectangle quadrature of the running cost along a closed loop.
pub fn closed_loop_cost(params: &ModelParams, grid: &SpatialGrid, state: &Trajectory, control: &Trajectory) -> f64 {
    control
        .rows()
        .enumerate()
        .map(|(k, u)| running_cost(params, grid, state.row(k), u))
        .sum::<f64>()
        * params.dt
}

struct LoopOutput {
    state: Trajectory,
    control: Trajectory,
    predictions: Option<Trajectory>,
    wall: Vec<f64>,
    iterations: Vec<usize>,
    max_kkt: f64,
}

/// Lifts a model-coordinate state trajectory back to the grid.
type Predictor<'a> = dyn Fn(&Trajectory) -> Vec<f64> + 'a;

/// Generic receding-horizon loop; `measure` maps the (perturbed) plant state
/// into model coordinates.
fn receding_horizon<M: HorizonModel>(
    config: &MpcConfig,
    model: &M,
    measure: impl Fn(&[f64]) -> Result<Vec<f64>>,
    predict: Option<&Predictor<'_>>,
) -> Result<LoopOutput> {
    let steps = config.steps()?;
    let params = &config.params;
    let grid = &config.grid;
    let n = grid.n_interior();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);

    let mut state = Trajectory::with_capacity(0.0, params.dt, n, steps + 1);
    state.push_row(&config.y0)?;
    let mut control = Trajectory::with_capacity(0.0, params.dt, n, steps);
    let mut predictions = predict.map(|_| Trajectory::with_capacity(params.dt, params.dt, n, steps));
    let mut wall = Vec::with_capacity(steps);
    let mut iterations = Vec::with_capacity(steps);
    let mut max_kkt: f64 = 0.0;
    let mut warm: Option<Trajectory> = None;
    let mut y = config.y0.clone();

    for step in 0..steps {
        let t0 = step as f64 * params.dt;
        let wrap = |e: Error| Error::MpcStep {
            step,
            source: Box::new(e),
        };
        let measured = perturb_initial(&y, config.noise_level, &mut rng);
        let y_model = measure(&measured).map_err(wrap)?;
        let problem = OpenLoopProblem::new(model, t0, config.horizon, y_model).map_err(wrap)?;
        let init = match warm.take() {
            Some(u) => shift_warm_start(&u, t0),
            None => problem.zero_control(),
        };
        let clock = Stopwatch::start();
        let sol = solve_open_loop(&problem, &init, &config.solver).map_err(wrap)?;
        wall.push(clock.seconds());
        iterations.push(sol.iterations);
        max_kkt = max_kkt.max(sol.kkt_residual);

        let u0 = sol.u_opt.truncated(1);
        let next = fd_model::solve_state(params, grid, t0, 1, &y, Some(&u0)).map_err(wrap)?;
        y = next.row(1).to_vec();
        state.push_row(&y)?;
        control.push_row(u0.row(0))?;
        if let (Some(pred), Some(f)) = (predictions.as_mut(), predict) {
            pred.push_row(&f(&sol.y_opt))?;
        }
        warm = Some(sol.u_opt);
    }
    Ok(LoopOutput {
        state,
        control,
        predictions,
        wall,
        iterations,
        max_kkt,
    })
}

fn finish(config: &MpcConfig, out: LoopOutput, offline_time: f64, rom_info: Option<RomInfo>) -> Result<MpcResult> {
    let cost = closed_loop_cost(&config.params, &config.grid, &out.state, &out.control);
    let err_term_history = match &out.predictions {
        Some(pred) if !pred.is_empty() => {
            let plant = plant_after_first(&out.state);
            match rom_error_term(&config.grid, &plant, pred) {
                Ok(e) => e.values,
                Err(Error::UndefinedErrorTerm) => vec![None; pred.len()],
                Err(e) => return Err(e),
            }
        }
        _ => Vec::new(),
    };
    Ok(MpcResult {
        closed_loop_cost: cost,
        err_vs_reference: None,
        err_term_history,
        rom_predictions: out.predictions,
        wall_time_total: out.wall.iter().fold(0.0, |a, b| a + b),
        wall_time_per_step: out.wall,
        offline_time,
        iterations: out.iterations,
        max_kkt_residual: out.max_kkt,
        rom_info,
        state: out.state,
        control: out.control,
    })
}

/// Plant states at `t_1..t_M`.
pub fn plant_after_first(state: &Trajectory) -> Trajectory {
    let mut out = Trajectory::with_capacity(state.t0() + state.dt(), state.dt(), state.width(), state.len().saturating_sub(1));
    for r in state.rows().skip(1) {
        out.push_row(r).expect("same width");
    }
    out
}

/// Full-order NMPC: at every sampling instant solve the open-loop problem on
/// the finite-difference model and apply its first control step.
pub fn run_nmpc(config: &MpcConfig) -> Result<MpcResult> {
    config.validate()?;
    if config.rom.is_some() {
        return Err(Error::Config("run_nmpc expects no reduced-order settings".into()));
    }
    let model = FullModel::new(config.params.clone(), config.grid.clone())?;
    let out = receding_horizon(config, &model, |y| Ok(y.to_vec()), None)?;
    finish(config, out, 0.0, None)
}

/// Offline stage of POD-NMPC: uncontrolled snapshots on `[0, T]`, POD basis,
/// rank selection and optional DEIM.
pub fn build_reduced_model(config: &MpcConfig, settings: &RomSettings) -> Result<(ReducedModel, PodBasis, RomInfo)> {
    let params = &config.params;
    let grid = &config.grid;
    let snaps = collect_snapshots(params, grid, 0.0, config.t_final, &config.y0, &settings.snapshots)?;
    let basis = compute_pod_basis(&snaps, settings.space, grid)?;
    let ell = match settings.pod_rank {
        Some(l) if settings.clamp_ranks => l.min(basis.rank()),
        Some(l) => l,
        None => choose_rank(&basis, settings.tau_pod, settings.energy_norm).max(1),
    };
    let deim = match settings.deim_rank {
        Some(m) => {
            let states = &snaps
                .block(SnapshotRole::State)
                .ok_or(Error::ZeroSnapshots)?
                .trajectory;
            let nl = nonlinearity_snapshots(params, states);
            match build_deim(&nl, m) {
                Err(Error::RankTooLarge { available, .. }) if settings.clamp_ranks && available > 0 => {
                    Some(build_deim(&nl, available)?)
                }
                other => Some(other?),
            }
        }
        None => None,
    };
    let rom = build_rom(&basis, ell, deim.as_ref(), params, grid)?;
    let info = RomInfo {
        pod_rank: ell,
        deim_rank: deim.as_ref().map(|d| d.rank()),
        eigenvalues: basis.eigenvalues.clone(),
        total_energy: basis.total_energy,
    };
    Ok((rom, basis, info))
}

/// POD-NMPC: the open-loop problems are solved on the reduced model started
/// from the reduced coordinates of the measured plant state; the computed
/// first control step drives the full-order plant.
pub fn run_pod_nmpc(config: &MpcConfig) -> Result<MpcResult> {
    config.validate()?;
    let settings = config
        .rom
        .as_ref()
        .ok_or_else(|| Error::Config("run_pod_nmpc requires reduced-order settings".into()))?;
    let clock = Stopwatch::start();
    let (rom, _, info) = build_reduced_model(config, settings)?;
    let offline = clock.seconds();
    let predict = |coeffs: &Trajectory| rom.lift(coeffs.row(1));
    let out = receding_horizon(config, &rom, |y| rom.reduce(y), Some(&predict))?;
    finish(config, out, offline, Some(info))
}

/// Closed loop under `u = -K y` on `[0, T]`; the applied control on
/// `(t_k, t_{k+1}]` is `-K y_{k+1}` (implicit feedback).
pub fn run_feedback(config: &MpcConfig, gain: f64) -> Result<MpcResult> {
    config.validate()?;
    let steps = config.steps()?;
    let roll = fd_model::feedback_rollout(&config.params, &config.grid, 0.0, steps, &config.y0, gain)?;
    let n = config.grid.n_interior();
    let mut control = Trajectory::with_capacity(0.0, config.params.dt, n, steps);
    for k in 0..steps {
        control.push_row(roll.control.row(k + 1))?;
    }
    let out = LoopOutput {
        state: roll.state,
        control,
        predictions: None,
        wall: Vec::new(),
        iterations: Vec::new(),
        max_kkt: 0.0,
    };
    finish(config, out, 0.0, None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub closed_loop_cost: f64,
    pub err_l2: Option<f64>,
    pub err_sup: Option<f64>,
    pub initial_norm: f64,
    pub final_norm: f64,
    pub wall_time_s: f64,
    /// Reference open-loop wall time over this run's.
    pub speedup: Option<f64>,
}

/// Cost, final-state norm and, with a reference, the `L²(0,T;H)` state
/// distance and the open-loop wall-time ratio.
pub fn evaluate_metrics(grid: &SpatialGrid, result: &MpcResult, reference: Option<&MpcResult>) -> Result<Metrics> {
    let (err_l2, speedup) = match reference {
        Some(r) => {
            if r.state.len() != result.state.len() || (r.state.dt() - result.state.dt()).abs() > 1e-15 {
                return Err(Error::InvalidArgument("reference run covers a different time window".into()));
            }
            let diff = result.state.sub(&r.state)?;
            let speed = (result.wall_time_total > 0.0 && r.wall_time_total > 0.0)
                .then(|| r.wall_time_total / result.wall_time_total);
            (Some(l2_time_h_norm(grid, &diff)), speed)
        }
        None => (None, None),
    };
    let err_sup = result
        .err_term_history
        .iter()
        .flatten()
        .copied()
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    Ok(Metrics {
        closed_loop_cost: result.closed_loop_cost,
        err_l2,
        err_sup,
        initial_norm: h_norm(grid, result.state.row(0)),
        final_norm: h_norm(grid, result.state.last_row().unwrap_or(&[])),
        wall_time_s: result.wall_time_total,
        speedup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd_model::build_grid;
    use std::f64::consts::PI;

    fn config(n: usize, t_final: f64, horizon: usize) -> MpcConfig {
        let g = build_grid(n).unwrap();
        let p = ModelParams::new(1.0, 11.0, 0.01, 0.01).unwrap();
        let y0 = g.sample(|x| 0.2 * (PI * x).sin());
        MpcConfig::new(p, g, t_final, horizon, y0)
    }

    #[test]
    fn zero_initial_state_gives_zero_loop() {
        let mut c = config(20, 0.05, 3);
        c.y0 = vec![0.0; 20];
        let r = run_nmpc(&c).unwrap();
        assert_eq!(r.closed_loop_cost, 0.0);
        assert!(r.control.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(r.state.len(), 6);
        assert_eq!(r.control.len(), 5);
    }

    #[test]
    fn perturbation_bounds_and_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<f64> = (0..50).map(|i| (i as f64 * 0.1).sin()).collect();
        assert_eq!(perturb_initial(&y, 0.0, &mut rng), y);
        let z = perturb_initial(&y, 0.3, &mut rng);
        let sup = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in z.iter().zip(&y) {
            assert!((a - b).abs() <= 0.3 * b.abs() + 1e-15);
            assert!((a - b).abs() <= 0.3 * sup);
        }
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(perturb_initial(&y, 0.2, &mut r1), perturb_initial(&y, 0.2, &mut r2));
    }

    #[test]
    fn config_validation() {
        let mut c = config(10, 0.055, 3);
        assert!(c.validate().is_err());
        c.t_final = 0.05;
        c.horizon = 1;
        assert!(c.validate().is_err());
        c.horizon = 2;
        c.noise_level = 1.0;
        assert!(c.validate().is_err());
        c.noise_level = 0.0;
        assert!(c.validate().is_ok());
        c.rom = Some(RomSettings::default());
        assert!(run_nmpc(&c).is_err());
        c.rom = None;
        assert!(run_pod_nmpc(&c).is_err());
    }

    #[test]
    fn metrics_against_itself() {
        let c = config(20, 0.03, 3);
        let r = run_nmpc(&c).unwrap();
        let m = evaluate_metrics(&c.grid, &r, Some(&r)).unwrap();
        assert_eq!(m.err_l2, Some(0.0));
        assert!(m.closed_loop_cost > 0.0);
    }

    #[test]
    fn feedback_loop_controls_are_implicit() {
        let c = config(20, 0.05, 3);
        let r = run_feedback(&c, 2.0).unwrap();
        for k in 0..5 {
            for (u, y) in r.control.row(k).iter().zip(r.state.row(k + 1)) {
                assert_eq!(*u, -2.0 * y);
            }
        }
    }
}
