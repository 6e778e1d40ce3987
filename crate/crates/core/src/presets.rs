//! The four benchmark runs with their published reference values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd_model::{ModelParams, SpatialGrid};

/// Relative tolerance on closed-loop costs.
pub const COST_REL_TOL: f64 = 0.25;
/// Relative tolerance on `L²(0,T;H)` state errors.
pub const ERR_REL_TOL: f64 = 0.40;
/// Maximal relative gap between POD-NMPC and full NMPC costs.
pub const POD_VS_FULL_TOL: f64 = 0.10;

/// Named initial states.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialState {
    /// `a sin(πx)`.
    Sin { amplitude: f64 },
    /// `a sgn(x - c)`.
    Sgn { amplitude: f64, center: f64 },
}

impl InitialState {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            InitialState::Sin { amplitude } => amplitude * (std::f64::consts::PI * x).sin(),
            InitialState::Sgn { amplitude, center } => {
                let s = x - center;
                amplitude * if s > 0.0 { 1.0 } else if s < 0.0 { -1.0 } else { 0.0 }
            }
        }
    }

    pub fn sample(&self, grid: &SpatialGrid) -> Vec<f64> {
        grid.sample(|x| self.eval(x))
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            InitialState::Sin { amplitude } => amplitude.is_finite(),
            InitialState::Sgn { amplitude, center } => amplitude.is_finite() && center.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config("initial state parameters must be finite".into()))
        }
    }
}

/// POD and DEIM ranks of one reduced-order table row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PodVariant {
    pub pod_rank: usize,
    #[serde(default)]
    pub deim_rank: Option<usize>,
}

impl PodVariant {
    pub fn label(&self) -> String {
        match self.deim_rank {
            Some(m) => format!("pod_l{}_deim{}", self.pod_rank, m),
            None => format!("pod_l{}", self.pod_rank),
        }
    }
}

/// Published reference values of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Golden {
    pub horizon: usize,
    /// Admissible range for the optimized feedback gain.
    pub gain_range: (f64, f64),
    pub cost_feedback: f64,
    pub cost_nmpc: f64,
    /// One entry per [`RunPreset::pod_variants`] row.
    pub cost_pod: Vec<f64>,
    pub err_feedback: f64,
    pub err_pod: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunPreset {
    pub name: String,
    pub theta: f64,
    pub rho: f64,
    pub lambda: f64,
    pub u_a: f64,
    pub u_b: f64,
    pub dt: f64,
    pub n_interior: usize,
    pub t_final: f64,
    pub initial: InitialState,
    pub pod_variants: Vec<PodVariant>,
    pub golden: Golden,
}

impl RunPreset {
    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::with_bounds(self.theta, self.rho, self.lambda, self.u_a, self.u_b, self.dt)
    }
}

pub const PRESET_NAMES: [&str; 5] = ["run1", "run2", "run3", "run4", "run4-printed"];

fn sin_run(name: &str, theta: f64, rho: f64, u_a: f64, u_b: f64, pod: [(usize, usize); 2], golden: Golden) -> RunPreset {
    RunPreset {
        name: name.to_string(),
        theta,
        rho,
        lambda: 0.01,
        u_a,
        u_b,
        dt: 0.01,
        n_interior: 99,
        t_final: 0.5,
        initial: InitialState::Sin { amplitude: 0.2 },
        pod_variants: pod
            .iter()
            .map(|&(l, m)| PodVariant {
                pod_rank: l,
                deim_rank: Some(m),
            })
            .collect(),
        golden,
    }
}

/// Built-in benchmark runs.
///
/// `run4` uses `ρ = 10`: with the printed `ρ = 5` the uncontrolled operator is
/// almost stable and the horizon search returns `N = 2`, whereas `ρ = 10`
/// reproduces the published horizon and gain bound. `run4-printed` keeps the
/// printed value.
pub fn preset(name: &str) -> Result<RunPreset> {
    let inf = f64::INFINITY;
    let p = match name {
        "run1" => sin_run(
            name,
            1.0,
            11.0,
            -inf,
            inf,
            [(13, 15), (3, 2)],
            Golden {
                horizon: 10,
                gain_range: (2.41, 2.51),
                cost_feedback: 0.0025,
                cost_nmpc: 0.0015,
                cost_pod: vec![0.0016, 0.0016],
                err_feedback: 0.0145,
                err_pod: vec![0.0047, 0.0058],
            },
        ),
        "run2" => sin_run(
            name,
            1.0,
            11.0,
            -0.3,
            0.0,
            [(13, 15), (3, 2)],
            Golden {
                horizon: 14,
                gain_range: (1.49, 1.51),
                cost_feedback: 0.0035,
                cost_nmpc: 0.0027,
                cost_pod: vec![0.0032, 0.0033],
                err_feedback: 0.0089,
                err_pod: vec![0.0054, 0.0055],
            },
        ),
        "run3" => sin_run(
            name,
            std::f64::consts::FRAC_1_SQRT_2,
            10.0,
            -1.0,
            0.0,
            [(16, 16), (2, 3)],
            Golden {
                horizon: 30,
                gain_range: (4.99, 5.01),
                cost_feedback: 0.0021,
                cost_nmpc: 0.0016,
                cost_pod: vec![0.0017, 0.0018],
                err_feedback: 0.0208,
                err_pod: vec![0.0092, 0.0093],
            },
        ),
        "run4" | "run4-printed" => {
            let mut p = sin_run(
                name,
                0.5,
                if name == "run4" { 10.0 } else { 5.0 },
                -1.0,
                1.0,
                [(17, 19), (3, 4)],
                Golden {
                    horizon: 43,
                    gain_range: (9.90, 10.00),
                    cost_feedback: 4.7e-4,
                    cost_nmpc: 4.1e-4,
                    cost_pod: vec![4.4e-4, 4.4e-4],
                    err_feedback: 0.0060,
                    err_pod: vec![0.0034, 0.0035],
                },
            );
            p.initial = InitialState::Sgn {
                amplitude: 0.1,
                center: 0.3,
            };
            p
        }
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    Ok(p)
}
