//! End-to-end experiment driver: horizon search, reference feedback loop,
//! NMPC and POD-NMPC closed loops, metrics and reference-value gates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fd_model::{ModelParams, SpatialGrid};
use crate::mpc::{build_reduced_model, evaluate_metrics, run_feedback, run_nmpc, run_pod_nmpc, Metrics, MpcResult};
use crate::pod_rom::feedback_error_term;
use crate::presets::{PodVariant, COST_REL_TOL, ERR_REL_TOL, POD_VS_FULL_TOL};
use crate::stability::{minimal_horizon, HorizonResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Horizon,
    Nmpc,
    PodNmpc,
    Feedback,
    All,
}

impl Mode {
    fn wants_horizon_gates(self) -> bool {
        matches!(self, Mode::Horizon | Mode::All)
    }
    fn wants_feedback(self) -> bool {
        matches!(self, Mode::Feedback | Mode::All)
    }
    /// POD rows are compared against full NMPC, so both need the full loop.
    fn wants_nmpc(self) -> bool {
        matches!(self, Mode::Nmpc | Mode::PodNmpc | Mode::All)
    }
    fn wants_pod(self) -> bool {
        matches!(self, Mode::PodNmpc | Mode::All)
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "horizon" => Mode::Horizon,
            "nmpc" => Mode::Nmpc,
            "pod-nmpc" => Mode::PodNmpc,
            "feedback" => Mode::Feedback,
            "all" => Mode::All,
            other => return Err(Error::Config(format!("unknown mode `{other}`"))),
        })
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Horizon => "horizon",
            Mode::Nmpc => "nmpc",
            Mode::PodNmpc => "pod-nmpc",
            Mode::Feedback => "feedback",
            Mode::All => "all",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowKind {
    Feedback,
    Nmpc,
    PodNmpc,
}

/// One closed-loop run of an experiment.
#[derive(Clone, Debug)]
pub struct RowReport {
    pub label: String,
    pub kind: RowKind,
    /// Requested ranks (the effective ones are in `result.rom_info`).
    pub variant: Option<PodVariant>,
    pub result: MpcResult,
    pub metrics: Metrics,
}

/// Comparison of one computed quantity against its reference value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub name: String,
    pub value: f64,
    pub reference: f64,
    pub lower: f64,
    pub upper: f64,
    pub passed: bool,
}

impl Gate {
    pub fn within(name: impl Into<String>, value: f64, reference: f64, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            value,
            reference,
            lower,
            upper,
            passed: value >= lower && value <= upper,
        }
    }

    pub fn relative(name: impl Into<String>, value: f64, reference: f64, tol: f64) -> Self {
        let d = tol * reference.abs();
        Self::within(name, value, reference, reference - d, reference + d)
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {:.6e} (reference {:.6e}, accepted [{:.6e}, {:.6e}])",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.reference,
            self.lower,
            self.upper
        )
    }
}

#[derive(Clone, Debug)]
pub struct Report {
    pub name: String,
    pub mode: Mode,
    pub horizon: HorizonResult,
    /// Horizon certified for the reduced model through its error term.
    pub rom_horizon: Option<HorizonResult>,
    /// `sup_t Err(t; ℓ)` of the reduced feedback loop behind `rom_horizon`.
    pub rom_err_sup: Option<f64>,
    /// Horizon used by the closed loops.
    pub horizon_used: usize,
    pub gain_used: f64,
    pub rows: Vec<RowReport>,
    pub gates: Vec<Gate>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.gates.iter().all(|g| g.passed)
    }

    pub fn row(&self, label: &str) -> Option<&RowReport> {
        self.rows.iter().find(|r| r.label == label)
    }
}

fn err_gate_value(m: &Metrics) -> f64 {
    m.err_l2.unwrap_or(f64::NAN)
}

/// `sup_t Err(t; ℓ)` for the reduced model of `settings` driven by `u = -K y`.
fn rom_feedback_error(cfg: &ExperimentConfig, horizon: usize, gain: f64) -> Result<Option<f64>> {
    let Some((_, settings)) = cfg.rom_settings().into_iter().next() else {
        return Ok(None);
    };
    let mpc = cfg.mpc_config(horizon, Some(settings.clone()));
    let (rom, _, _) = build_reduced_model(&mpc, &settings)?;
    let steps = mpc.steps()?;
    let term = feedback_error_term(&rom, 0.0, steps, &mpc.y0, gain)?;
    Ok(Some(term.sup))
}

/// Runs the requested pipeline and evaluates the reference-value gates
/// available for it.
pub fn run_experiment(cfg: &ExperimentConfig, mode: Mode) -> Result<Report> {
    cfg.validate()?;
    let y0 = cfg.y0();
    let horizon = minimal_horizon(&cfg.params, &y0, None, cfg.max_horizon)?;
    let horizon_used = cfg.horizon.unwrap_or(horizon.n_min);
    let gain_used = cfg.gain.unwrap_or(horizon.gain);
    let golden = cfg.golden.as_ref();
    let mut gates = Vec::new();

    let (mut rom_horizon, mut rom_err_sup) = (None, None);
    if mode.wants_horizon_gates() {
        if let Some(g) = golden {
            gates.push(Gate::within(
                "minimal horizon",
                horizon.n_min as f64,
                g.horizon as f64,
                g.horizon as f64,
                g.horizon as f64,
            ));
            let mid = 0.5 * (g.gain_range.0 + g.gain_range.1);
            gates.push(Gate::within("feedback gain", horizon.gain, mid, g.gain_range.0, g.gain_range.1));
        }
        rom_err_sup = rom_feedback_error(cfg, horizon_used, horizon.gain)?;
        if let Some(e) = rom_err_sup {
            let h = minimal_horizon(&cfg.params, &y0, Some(e), cfg.max_horizon)?;
            if let Some(g) = golden {
                gates.push(Gate::within(
                    "reduced-model minimal horizon",
                    h.n_min as f64,
                    g.horizon as f64,
                    g.horizon as f64,
                    g.horizon as f64,
                ));
            }
            rom_horizon = Some(h);
        }
    }

    let mut rows = Vec::new();
    let reference = if mode.wants_nmpc() {
        let r = run_nmpc(&cfg.mpc_config(horizon_used, None))?;
        let metrics = evaluate_metrics(&cfg.grid, &r, None)?;
        if let Some(g) = golden {
            gates.push(Gate::relative("NMPC cost", r.closed_loop_cost, g.cost_nmpc, COST_REL_TOL));
        }
        rows.push(RowReport {
            label: "nmpc".into(),
            kind: RowKind::Nmpc,
            variant: None,
            result: r.clone(),
            metrics,
        });
        Some(r)
    } else {
        None
    };

    if mode.wants_feedback() {
        let mut r = run_feedback(&cfg.mpc_config(horizon_used, None), gain_used)?;
        let metrics = evaluate_metrics(&cfg.grid, &r, reference.as_ref())?;
        r.err_vs_reference = metrics.err_l2;
        if let Some(g) = golden {
            gates.push(Gate::relative("-Ky cost", r.closed_loop_cost, g.cost_feedback, COST_REL_TOL));
            if reference.is_some() {
                gates.push(Gate::relative("-Ky error", err_gate_value(&metrics), g.err_feedback, ERR_REL_TOL));
            }
        }
        rows.push(RowReport {
            label: "feedback".into(),
            kind: RowKind::Feedback,
            variant: None,
            result: r,
            metrics,
        });
    }

    if mode.wants_pod() {
        for (variant, settings) in cfg.rom_settings() {
            let r_ref = reference.as_ref().expect("POD rows run with the full reference");
            let mut r = run_pod_nmpc(&cfg.mpc_config(horizon_used, Some(settings)))?;
            let metrics = evaluate_metrics(&cfg.grid, &r, Some(r_ref))?;
            r.err_vs_reference = metrics.err_l2;
            let label = variant.map_or_else(|| "pod_tau".to_string(), |v| v.label());
            let golden_idx = match (golden, variant) {
                (Some(_), Some(v)) => crate::presets::preset(&cfg.name)
                    .ok()
                    .and_then(|p| p.pod_variants.iter().position(|w| *w == v)),
                _ => None,
            };
            if let (Some(g), Some(i)) = (golden, golden_idx) {
                gates.push(Gate::relative(
                    format!("{label} cost"),
                    r.closed_loop_cost,
                    g.cost_pod[i],
                    COST_REL_TOL,
                ));
                gates.push(Gate::relative(format!("{label} error"), err_gate_value(&metrics), g.err_pod[i], ERR_REL_TOL));
            }
            gates.push(Gate::relative(
                format!("{label} cost vs NMPC"),
                r.closed_loop_cost,
                r_ref.closed_loop_cost,
                POD_VS_FULL_TOL,
            ));
            rows.push(RowReport {
                label,
                kind: RowKind::PodNmpc,
                variant,
                result: r,
                metrics,
            });
        }
    }

    Ok(Report {
        name: cfg.name.clone(),
        mode,
        horizon,
        rom_horizon,
        rom_err_sup,
        horizon_used,
        gain_used,
        rows,
        gates,
    })
}

/// One row of the error-to-horizon table; `n_min` is `None` when no
/// stabilizing horizon exists up to the search limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub err: f64,
    pub n_min: Option<usize>,
    pub gain: Option<f64>,
    pub alpha: Option<f64>,
}

/// Worker count from `PODMPC_THREADS`, else the available parallelism.
pub fn thread_count() -> usize {
    std::env::var("PODMPC_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Minimal ROM-corrected horizon for every error level of a sorted,
/// non-negative grid, evaluated on up to `threads` worker threads.
pub fn sweep_err_horizon(
    params: &ModelParams,
    grid: &SpatialGrid,
    y0: &[f64],
    errs: &[f64],
    max_horizon: usize,
    threads: usize,
) -> Result<Vec<SweepRow>> {
    crate::error::check_dim("initial state", grid.n_interior(), y0.len())?;
    if errs.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
        return Err(Error::InvalidArgument("error levels must be finite and non-negative".into()));
    }
    if errs.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("error levels must be sorted".into()));
    }
    let one = |e: f64| -> Result<SweepRow> {
        match minimal_horizon(params, y0, Some(e), max_horizon) {
            Ok(h) => Ok(SweepRow {
                err: e,
                n_min: Some(h.n_min),
                gain: Some(h.gain),
                alpha: Some(h.alpha),
            }),
            Err(Error::HorizonNotFound(_) | Error::InfeasibleGain(_)) => Ok(SweepRow {
                err: e,
                n_min: None,
                gain: None,
                alpha: None,
            }),
            Err(other) => Err(other),
        }
    };
    let workers = threads.clamp(1, errs.len().max(1));
    if workers == 1 {
        return errs.iter().map(|&e| one(e)).collect();
    }
    let chunk = errs.len().div_ceil(workers);
    let parts: Vec<Result<Vec<SweepRow>>> = std::thread::scope(|s| {
        let handles: Vec<_> = errs
            .chunks(chunk)
            .map(|part| s.spawn(|| part.iter().map(|&e| one(e)).collect::<Result<Vec<_>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    let mut rows = Vec::with_capacity(errs.len());
    for p in parts {
        rows.extend(p?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd_model::build_grid;

    #[test]
    fn mode_round_trip() {
        for m in [Mode::Horizon, Mode::Nmpc, Mode::PodNmpc, Mode::Feedback, Mode::All] {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("everything".parse::<Mode>().is_err());
    }

    #[test]
    fn sweep_is_thread_count_independent_and_monotone() {
        let g = build_grid(20).unwrap();
        let p = ModelParams::with_bounds(1.0, 11.0, 0.01, -0.3, 0.0, 0.01).unwrap();
        let y0 = g.sample(|x| 0.2 * (std::f64::consts::PI * x).sin());
        let errs = [0.0, 1e-3, 1e-2, 0.05, 0.1];
        let a = sweep_err_horizon(&p, &g, &y0, &errs, 200, 1).unwrap();
        let b = sweep_err_horizon(&p, &g, &y0, &errs, 200, 3).unwrap();
        assert_eq!(a, b);
        let ns: Vec<usize> = a.iter().map(|r| r.n_min.unwrap()).collect();
        assert!(ns.windows(2).all(|w| w[0] <= w[1]), "{ns:?}");
        assert_eq!(ns[0], 14);
        assert!(sweep_err_horizon(&p, &g, &y0, &[0.1, 0.0], 200, 1).is_err());
    }

    #[test]
    fn gates() {
        assert!(Gate::relative("x", 1.2, 1.0, 0.25).passed);
        assert!(!Gate::relative("x", 1.3, 1.0, 0.25).passed);
        assert!(!Gate::relative("x", f64::NAN, 1.0, 0.25).passed);
    }
}
