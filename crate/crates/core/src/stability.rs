//! Exponential-controllability constants of the feedback class `u = -K y`,
//! the relaxed dynamic programming degree `α^N(K)`, its reduced-order
//! correction, and the minimal stabilizing horizon search.
//!
//! The decay rate uses the sharp Poincaré constant of (0, 1):
//! `γ(K) = K + θπ² - ρ`, and the per-step contraction is
//! `σ = exp(-2γ(K)Δt)` because the horizon is counted in Δt-steps.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd_model::{h_norm, ModelParams, SpatialGrid};
use crate::trajectory::Trajectory;

/// Lower margin in `γ(K) ≥ ε`.
pub const GAMMA_EPS: f64 = 1e-3;
pub const GAIN_GRID_POINTS: usize = 1000;
pub const GAIN_TOL: f64 = 1e-3;
pub const DEFAULT_MAX_HORIZON: usize = 200;
/// Reduced states with smaller H-norm are excluded from the error term.
pub const ERR_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityConstants {
    pub gain: f64,
    pub gamma: f64,
    /// Overshoot `C(K) = 1 + λK²`.
    pub overshoot: f64,
    pub sigma_step: f64,
    pub dt: f64,
}

pub fn decay_rate(params: &ModelParams, gain: f64) -> f64 {
    gain + params.theta * PI * PI - params.rho
}

pub fn controllability_constants(params: &ModelParams, gain: f64) -> Result<StabilityConstants> {
    if !(gain >= 0.0 && gain.is_finite()) {
        return Err(Error::InfeasibleGain(format!("K = {gain} must be finite and >= 0")));
    }
    let gamma = decay_rate(params, gain);
    if gamma < GAMMA_EPS {
        return Err(Error::InfeasibleGain(format!(
            "γ(K) = {gamma:.6} < ε = {GAMMA_EPS} at K = {gain}"
        )));
    }
    Ok(StabilityConstants {
        gain,
        gamma,
        overshoot: 1.0 + params.lambda * gain * gain,
        sigma_step: (-2.0 * gamma * params.dt).exp(),
        dt: params.dt,
    })
}

/// `α = 1 - (η_N - 1) Π(η_i - 1) / (Π η_i - Π(η_i - 1))`, `i = 2..N`, with
/// `η_i = C (1 - σ^i) / (1 - σ)`. Products are accumulated as log ratios.
pub fn alpha_formula(overshoot: f64, sigma: f64, horizon: usize) -> Result<f64> {
    if horizon < 2 {
        return Err(Error::InvalidArgument(format!("horizon must be >= 2, got {horizon}")));
    }
    if !(sigma > 0.0 && sigma < 1.0) || !(overshoot >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need C >= 1 and 0 < σ < 1, got C = {overshoot}, σ = {sigma}"
        )));
    }
    let ln_sigma = sigma.ln();
    let one_minus_sigma = -ln_sigma.exp_m1();
    let eta = |i: usize| overshoot * (-(i as f64 * ln_sigma).exp_m1()) / one_minus_sigma;
    let mut log_ratio = 0.0;
    for i in 2..=horizon {
        log_ratio += (-1.0 / eta(i)).ln_1p();
    }
    let denom = -log_ratio.exp_m1();
    if !(denom > 0.0) {
        return Err(Error::FormulaBreakdown(denom));
    }
    Ok(1.0 - (eta(horizon) - 1.0) * log_ratio.exp() / denom)
}

pub fn alpha_horizon(constants: &StabilityConstants, horizon: usize) -> Result<f64> {
    alpha_formula(constants.overshoot, constants.sigma_step, horizon)
}

/// `C^ℓ = C + 2 Err + Err²`.
pub fn rom_overshoot(overshoot: f64, err_sup: f64) -> f64 {
    overshoot + 2.0 * err_sup + err_sup * err_sup
}

pub fn alpha_horizon_rom(constants: &StabilityConstants, horizon: usize, err_sup: f64) -> Result<f64> {
    if !(err_sup >= 0.0 && err_sup.is_finite()) {
        return Err(Error::InvalidArgument(format!("error term must be >= 0, got {err_sup}")));
    }
    alpha_formula(rom_overshoot(constants.overshoot, err_sup), constants.sigma_step, horizon)
}

/// Which row/column of the feedback-constraint table produced the upper bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GainBoundRule {
    /// `y_∘b = 0`, `y_∘a < 0`.
    Unconstrained,
    /// `y_∘b < 0`, `y_∘a < 0`: `K ≤ u_b / |y_∘b|`.
    UpperOverMax,
    /// `y_∘b > 0`, `y_∘a < 0`: `K ≤ min(|u_a|/y_∘b, u_b/|y_∘a|)`.
    TwoSided,
    /// `y_∘b > 0`, `y_∘a ≥ 0`: `K ≤ |u_a| / y_∘b`.
    LowerOverMax,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainInterval {
    pub lower: f64,
    /// `f64::INFINITY` when the control bounds impose nothing.
    pub upper: f64,
    pub rule: GainBoundRule,
}

impl GainInterval {
    pub fn is_bounded(&self) -> bool {
        self.upper.is_finite()
    }
}

/// Upper gain bound keeping `u_a ≤ -K y ≤ u_b` for states bounded by the
/// initial extremes, together with the stabilization lower bound.
pub fn feedback_bounds(y0: &[f64], params: &ModelParams) -> Result<GainInterval> {
    if y0.is_empty() || y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("initial state must be non-empty and finite".into()));
    }
    let y_min = y0.iter().copied().fold(f64::INFINITY, f64::min);
    let y_max = y0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ua = params.u_a.abs();
    let ub = params.u_b;
    let (upper, rule) = if y_max == 0.0 {
        if y_min < 0.0 {
            (f64::INFINITY, GainBoundRule::Unconstrained)
        } else {
            return Err(Error::InfeasibleGain(
                "initial state is identically zero (case not considered)".into(),
            ));
        }
    } else if y_max < 0.0 {
        (ub / y_max.abs(), GainBoundRule::UpperOverMax)
    } else if y_min < 0.0 {
        ((ua / y_max).min(ub / y_min.abs()), GainBoundRule::TwoSided)
    } else {
        (ua / y_max, GainBoundRule::LowerOverMax)
    };
    let lower = (params.rho - params.theta * PI * PI + GAMMA_EPS).max(0.0);
    Ok(GainInterval { lower, upper, rule })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainChoice {
    pub gain: f64,
    pub alpha: f64,
}

fn objective(params: &ModelParams, horizon: usize, rom_err: Option<f64>, gain: f64) -> f64 {
    let value = controllability_constants(params, gain).and_then(|c| match rom_err {
        Some(e) => alpha_horizon_rom(&c, horizon, e),
        None => alpha_horizon(&c, horizon),
    });
    value.unwrap_or(f64::NEG_INFINITY)
}

/// Finite scan range for an unbounded gain interval: doubles until `α` stops
/// improving (it tends to -∞ as `K → ∞` because `C(K)` grows quadratically).
fn scan_upper(params: &ModelParams, horizon: usize, rom_err: Option<f64>, lower: f64) -> f64 {
    let mut hi = (2.0 * lower).max(lower + 1.0);
    for _ in 0..40 {
        if objective(params, horizon, rom_err, 2.0 * hi) > objective(params, horizon, rom_err, hi) {
            hi *= 2.0;
        } else {
            break;
        }
    }
    2.0 * hi
}

/// Maximizes `α^N(K)` (or `α^{N,ℓ}(K)` with `rom_err`) over the admissible
/// gain interval: dense scan, then golden-section refinement around the best
/// scan point. Ties go to the smaller gain.
pub fn optimize_feedback_gain(
    params: &ModelParams,
    y0: &[f64],
    horizon: usize,
    rom_err: Option<f64>,
) -> Result<GainChoice> {
    let interval = feedback_bounds(y0, params)?;
    optimize_on_interval(params, &interval, horizon, rom_err)
}

pub fn optimize_on_interval(
    params: &ModelParams,
    interval: &GainInterval,
    horizon: usize,
    rom_err: Option<f64>,
) -> Result<GainChoice> {
    if horizon < 2 {
        return Err(Error::InvalidArgument(format!("horizon must be >= 2, got {horizon}")));
    }
    let lo = interval.lower;
    let hi = if interval.is_bounded() {
        interval.upper
    } else {
        scan_upper(params, horizon, rom_err, lo)
    };
    if !(hi >= lo) {
        return Err(Error::InfeasibleGain(format!(
            "empty gain interval [{lo:.6}, {hi:.6}]"
        )));
    }
    let f = |k: f64| objective(params, horizon, rom_err, k);

    let n = GAIN_GRID_POINTS;
    let grid: Vec<f64> = (0..n)
        .map(|j| if j + 1 == n { hi } else { lo + (hi - lo) * j as f64 / (n - 1) as f64 })
        .collect();
    let mut best_j = 0;
    let mut best = f(grid[0]);
    for (j, &k) in grid.iter().enumerate().skip(1) {
        let v = f(k);
        if v > best {
            best = v;
            best_j = j;
        }
    }
    if best == f64::NEG_INFINITY {
        return Err(Error::InfeasibleGain("α undefined on the whole gain interval".into()));
    }

    let mut a = grid[best_j.saturating_sub(1)];
    let mut b = grid[(best_j + 1).min(n - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > GAIN_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let refined = 0.5 * (a + b);
    let fr = f(refined);
    let choice = if fr > best {
        GainChoice { gain: refined, alpha: fr }
    } else {
        GainChoice { gain: grid[best_j], alpha: best }
    };
    Ok(choice)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonResult {
    pub n_min: usize,
    pub gain: f64,
    pub alpha: f64,
    /// Optimized `α` at `n_min - 1` (absent when `n_min = 2`).
    pub alpha_prev: Option<f64>,
    pub interval: GainInterval,
    /// Whether the optimal gain sits on the control-constraint bound.
    pub bound_active: bool,
    pub rom_err: Option<f64>,
}

/// Smallest `N ∈ [2, max_horizon]` whose optimized `α` is positive.
pub fn minimal_horizon(
    params: &ModelParams,
    y0: &[f64],
    rom_err: Option<f64>,
    max_horizon: usize,
) -> Result<HorizonResult> {
    let interval = feedback_bounds(y0, params)?;
    let mut prev: Option<f64> = None;
    for n in 2..=max_horizon {
        let choice = optimize_on_interval(params, &interval, n, rom_err)?;
        if choice.alpha > 0.0 {
            let bound_active = interval.is_bounded() && (interval.upper - choice.gain).abs() <= GAIN_TOL;
            return Ok(HorizonResult {
                n_min: n,
                gain: choice.gain,
                alpha: choice.alpha,
                alpha_prev: prev,
                interval,
                bound_active,
                rom_err,
            });
        }
        prev = Some(choice.alpha);
    }
    Err(Error::HorizonNotFound(max_horizon))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorTerm {
    /// `Err(t_k)`; `None` where the reduced norm is below [`ERR_FLOOR`].
    pub values: Vec<Option<f64>>,
    pub sup: f64,
}

impl ErrorTerm {
    pub fn excluded(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(k, v)| v.is_none().then_some(k))
            .collect()
    }
}

/// `Err(t) = ‖y(t) - y^ℓ(t)‖_H / ‖y^ℓ(t)‖_H` per time level and its supremum.
/// Both trajectories must be grid functions on the same window.
pub fn rom_error_term(grid: &SpatialGrid, full_state: &Trajectory, rom_state: &Trajectory) -> Result<ErrorTerm> {
    let diff = full_state.sub(rom_state)?;
    let values: Vec<Option<f64>> = diff
        .rows()
        .zip(rom_state.rows())
        .map(|(d, r)| {
            let denom = h_norm(grid, r);
            (denom >= ERR_FLOOR).then(|| h_norm(grid, d) / denom)
        })
        .collect();
    let sup = values
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if sup == f64::NEG_INFINITY {
        return Err(Error::UndefinedErrorTerm);
    }
    Ok(ErrorTerm { values, sup })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd_model::build_grid;

    fn run1() -> ModelParams {
        ModelParams::new(1.0, 11.0, 0.01, 0.01).unwrap()
    }

    #[test]
    fn constants_at_zero_gain() {
        let p = ModelParams::new(2.0, 11.0, 0.3, 0.01).unwrap();
        let c = controllability_constants(&p, 0.0).unwrap();
        assert_eq!(c.overshoot, 1.0);
        assert!((c.gamma - (2.0 * PI * PI - 11.0)).abs() < 1e-14);
    }

    #[test]
    fn constants_run1() {
        let c = controllability_constants(&run1(), 2.46).unwrap();
        assert!((c.gamma - 1.3296).abs() < 1e-4, "{}", c.gamma);
        assert!((c.overshoot - 1.060516).abs() < 1e-6);
        assert!((c.sigma_step - 0.97376).abs() < 1e-4, "{}", c.sigma_step);
        assert!(controllability_constants(&run1(), 1.0).is_err());
    }

    #[test]
    fn constants_run3() {
        let p = ModelParams::with_bounds(1.0 / 2f64.sqrt(), 10.0, 0.01, -1.0, 0.0, 0.01).unwrap();
        let c = controllability_constants(&p, 5.0).unwrap();
        assert!((c.gamma - 1.979).abs() < 1e-3);
    }

    #[test]
    fn alpha_sign_flip_run1() {
        let c = controllability_constants(&run1(), 2.46).unwrap();
        let a10 = alpha_horizon(&c, 10).unwrap();
        let a9 = alpha_horizon(&c, 9).unwrap();
        assert!(a10 > 0.0 && a10 < 0.03, "{a10}");
        assert!(a9 < 0.0, "{a9}");
        assert!(alpha_horizon(&c, 200).unwrap() > 0.99);
        assert!(alpha_horizon(&c, 1).is_err());
    }

    #[test]
    fn alpha_tends_to_one_for_vanishing_sigma() {
        let a = alpha_formula(1.0, 1e-9, 5).unwrap();
        assert!((a - 1.0).abs() < 1e-6, "{a}");
    }

    #[test]
    fn rom_alpha_reduces_to_full_alpha() {
        let c = controllability_constants(&run1(), 2.46).unwrap();
        for n in [2, 7, 10, 40] {
            assert_eq!(alpha_horizon_rom(&c, n, 0.0).unwrap(), alpha_horizon(&c, n).unwrap());
        }
        assert!(alpha_horizon_rom(&c, 10, 1e-3).unwrap() > 0.0);
    }

    #[test]
    fn table_bounds() {
        let g = build_grid(99).unwrap();
        let sin = g.sample(|x| 0.2 * (PI * x).sin());
        let p2 = ModelParams::with_bounds(1.0, 11.0, 0.01, -0.3, 0.0, 0.01).unwrap();
        let b = feedback_bounds(&sin, &p2).unwrap();
        assert_eq!(b.rule, GainBoundRule::LowerOverMax);
        assert!((b.upper - 1.5).abs() < 1e-12);

        let sgn = g.sample(|x| 0.1 * (x - 0.3f64).signum() * if (x - 0.3).abs() < 1e-12 { 0.0 } else { 1.0 });
        let p4 = ModelParams::with_bounds(0.5, 5.0, 0.01, -1.0, 1.0, 0.01).unwrap();
        let b = feedback_bounds(&sgn, &p4).unwrap();
        assert_eq!(b.rule, GainBoundRule::TwoSided);
        assert!((b.upper - 10.0).abs() < 1e-9);

        let b = feedback_bounds(&sin, &run1()).unwrap();
        assert!(!b.is_bounded());
        assert!((b.lower - (11.0 - PI * PI + GAMMA_EPS)).abs() < 1e-12);

        let neg: Vec<f64> = sin.iter().map(|v| -v).collect();
        let b = feedback_bounds(&neg, &p4).unwrap();
        assert_eq!(b.rule, GainBoundRule::UpperOverMax);

        assert!(feedback_bounds(&[0.0; 5], &p4).is_err());
    }

    #[test]
    fn error_term_basics() {
        let g = build_grid(10).unwrap();
        let a = Trajectory::from_rows(0.0, 0.1, &[vec![1.0; 10], vec![0.5; 10]]).unwrap();
        let e = rom_error_term(&g, &a, &a).unwrap();
        assert_eq!(e.sup, 0.0);

        let b = a.map(|v| v * 1.01);
        let c = a.map(|v| v * 1.02);
        let e1 = rom_error_term(&g, &b, &a).unwrap();
        let e2 = rom_error_term(&g, &c, &a).unwrap();
        for (x, y) in e1.values.iter().zip(&e2.values) {
            assert!((2.0 * x.unwrap() - y.unwrap()).abs() < 1e-12);
        }

        let z = Trajectory::zeros(0.0, 0.1, 2, 10);
        assert!(matches!(rom_error_term(&g, &a, &z), Err(Error::UndefinedErrorTerm)));
    }
}
