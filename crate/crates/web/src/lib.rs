//! Browser bindings: horizon analysis, closed-loop simulation and the
//! error-to-horizon sweep, each taking and returning JSON.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use podmpc::config::ExperimentConfig;
use podmpc::fd_model::h_norm_history;
use podmpc::mpc::{run_feedback, run_nmpc, run_pod_nmpc, RomSettings};
use podmpc::pipeline::sweep_err_horizon;
use podmpc::presets::InitialState;
use podmpc::stability::{feedback_bounds, minimal_horizon, optimize_on_interval};

/// Preset with optional parameter edits; `null` bounds mean unbounded.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemInput {
    preset: String,
    #[serde(default)]
    theta: Option<f64>,
    #[serde(default)]
    rho: Option<f64>,
    #[serde(default)]
    lambda: Option<f64>,
    #[serde(default)]
    bounds: Option<(Option<f64>, Option<f64>)>,
    #[serde(default)]
    initial: Option<InitialState>,
    #[serde(default)]
    nx: Option<usize>,
}

impl ProblemInput {
    fn resolve(&self) -> Result<ExperimentConfig, String> {
        let mut cfg = ExperimentConfig::from_preset(&self.preset).map_err(|e| e.to_string())?;
        let p = &mut cfg.params;
        if let Some(v) = self.theta {
            p.theta = v;
        }
        if let Some(v) = self.rho {
            p.rho = v;
        }
        if let Some(v) = self.lambda {
            p.lambda = v;
        }
        if let Some((a, b)) = self.bounds {
            p.u_a = a.unwrap_or(f64::NEG_INFINITY);
            p.u_b = b.unwrap_or(f64::INFINITY);
        }
        if let Some(init) = self.initial {
            cfg.initial = init;
        }
        if let Some(n) = self.nx {
            cfg.set_n_interior(n).map_err(|e| e.to_string())?;
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CurveInput {
    #[serde(flatten)]
    problem: ProblemInput,
    #[serde(default = "default_n_max")]
    n_max: usize,
    #[serde(default)]
    err: Option<f64>,
}

fn default_n_max() -> usize {
    60
}

#[derive(Debug, Serialize)]
struct CurveOutput {
    horizons: Vec<usize>,
    alpha: Vec<f64>,
    gain: Vec<f64>,
    n_min: Option<usize>,
    gain_upper: Option<f64>,
}

/// Optimized `α^N` (or its reduced-model variant when `err` is given) and
/// the maximizing gain for `N = 2..=n_max`.
pub fn horizon_curve_json(input: &str) -> Result<String, String> {
    let req: CurveInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let cfg = req.problem.resolve()?;
    let y0 = cfg.y0();
    let interval = feedback_bounds(&y0, &cfg.params).map_err(|e| e.to_string())?;
    let mut out = CurveOutput {
        horizons: Vec::new(),
        alpha: Vec::new(),
        gain: Vec::new(),
        n_min: None,
        gain_upper: interval.is_bounded().then_some(interval.upper),
    };
    for n in 2..=req.n_max.max(2) {
        let c = optimize_on_interval(&cfg.params, &interval, n, req.err).map_err(|e| e.to_string())?;
        if out.n_min.is_none() && c.alpha > 0.0 {
            out.n_min = Some(n);
        }
        out.horizons.push(n);
        out.alpha.push(c.alpha);
        out.gain.push(c.gain);
    }
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Controller {
    Nmpc,
    Pod,
    Feedback,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoopInput {
    #[serde(flatten)]
    problem: ProblemInput,
    controller: Controller,
    #[serde(default)]
    horizon: Option<usize>,
    #[serde(default)]
    gain: Option<f64>,
    #[serde(default)]
    pod_rank: Option<usize>,
    #[serde(default)]
    deim_rank: Option<usize>,
    #[serde(default)]
    noise: f64,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Serialize)]
struct LoopOutput {
    horizon: usize,
    gain: f64,
    times: Vec<f64>,
    nodes: Vec<f64>,
    /// Row-major `times × nodes`.
    state: Vec<f64>,
    norms: Vec<f64>,
    cost: f64,
    pod_rank: Option<usize>,
    deim_rank: Option<usize>,
}

/// Closed-loop state field under NMPC, POD-NMPC or `u = -K y`; horizon and
/// gain default to the minimal stabilizing pair.
pub fn closed_loop_json(input: &str) -> Result<String, String> {
    let req: LoopInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let mut cfg = req.problem.resolve()?;
    cfg.noise_level = req.noise;
    cfg.seed = req.seed;
    cfg.validate().map_err(|e| e.to_string())?;
    let y0 = cfg.y0();
    let (horizon, gain) = match (req.horizon, req.gain) {
        (Some(n), Some(k)) => (n, k),
        (n, k) => {
            let h = minimal_horizon(&cfg.params, &y0, None, cfg.max_horizon).map_err(|e| e.to_string())?;
            (n.unwrap_or(h.n_min), k.unwrap_or(h.gain))
        }
    };
    let result = match req.controller {
        Controller::Nmpc => run_nmpc(&cfg.mpc_config(horizon, None)),
        Controller::Feedback => run_feedback(&cfg.mpc_config(horizon, None), gain),
        Controller::Pod => {
            let settings = RomSettings {
                pod_rank: Some(req.pod_rank.unwrap_or(3)),
                deim_rank: req.deim_rank,
                clamp_ranks: true,
                ..RomSettings::default()
            };
            run_pod_nmpc(&cfg.mpc_config(horizon, Some(settings)))
        }
    }
    .map_err(|e| e.to_string())?;
    let info = result.rom_info.as_ref();
    let out = LoopOutput {
        horizon,
        gain,
        times: result.state.times(),
        nodes: cfg.grid.nodes().to_vec(),
        state: result.state.as_slice().to_vec(),
        norms: h_norm_history(&cfg.grid, &result.state),
        cost: result.closed_loop_cost,
        pod_rank: info.map(|i| i.pod_rank),
        deim_rank: info.and_then(|i| i.deim_rank),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepInput {
    #[serde(flatten)]
    problem: ProblemInput,
    errs: Vec<f64>,
}

/// Minimal reduced-model horizon for each error level.
pub fn err_sweep_json(input: &str) -> Result<String, String> {
    let req: SweepInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let cfg = req.problem.resolve()?;
    let rows = sweep_err_horizon(&cfg.params, &cfg.grid, &cfg.y0(), &req.errs, cfg.max_horizon, 1)
        .map_err(|e| e.to_string())?;
    serde_json::to_string(&rows).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn horizon_curve(input: &str) -> Result<String, JsError> {
    horizon_curve_json(input).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn closed_loop(input: &str) -> Result<String, JsError> {
    closed_loop_json(input).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn err_sweep(input: &str) -> Result<String, JsError> {
    err_sweep_json(input).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn curve_reports_minimal_horizon() {
        let v: Value = serde_json::from_str(&horizon_curve_json(r#"{"preset": "run1", "n_max": 12}"#).unwrap()).unwrap();
        assert_eq!(v["n_min"], 10);
        assert_eq!(v["horizons"].as_array().unwrap().len(), 11);
        assert!(v["gain_upper"].is_null());
        let a = v["alpha"].as_array().unwrap();
        assert!(a[7].as_f64().unwrap() < 0.0 && a[8].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn closed_loop_field_has_grid_shape() {
        let v: Value = serde_json::from_str(
            &closed_loop_json(r#"{"preset": "run2", "controller": "pod", "nx": 29, "pod_rank": 3, "deim_rank": 2}"#)
                .unwrap(),
        )
        .unwrap();
        let times = v["times"].as_array().unwrap().len();
        let nodes = v["nodes"].as_array().unwrap().len();
        assert_eq!(nodes, 29);
        assert_eq!(times, 51);
        assert_eq!(v["state"].as_array().unwrap().len(), times * nodes);
        let norms = v["norms"].as_array().unwrap();
        assert!(norms.last().unwrap().as_f64().unwrap() < norms[0].as_f64().unwrap());
    }

    #[test]
    fn sweep_and_input_errors() {
        let v: Value =
            serde_json::from_str(&err_sweep_json(r#"{"preset": "run2", "errs": [0, 0.01]}"#).unwrap()).unwrap();
        assert_eq!(v[0]["n_min"], 14);
        assert!(v[1]["n_min"].as_u64().unwrap() >= 14);
        assert!(closed_loop_json(r#"{"preset": "run1", "controller": "magic"}"#).is_err());
        assert!(horizon_curve_json(r#"{"preset": "run1", "bounds": [0.5, 1.0]}"#).is_err());
    }
}
