//! JSON experiment configuration: a named preset plus optional overrides.
//!
//! ```json
//! { "preset": "run2", "noise": 0.3, "seed": 7 }
//! { "theta": 1.0, "rho": 11.0, "u_a": null, "u_b": null,
//!   "y0": { "kind": "sgn", "amplitude": 0.1, "center": 0.3 } }
//! ```
//!
//! A `null` control bound means "unbounded" in that direction.

use std::path::Path;

use serde::{Deserialize, Deserializer};

use crate::error::{Error, Result};
use crate::fd_model::{build_grid, ModelParams, SpatialGrid};
use crate::mpc::{MpcConfig, RomSettings};
use crate::pod_rom::EnergyNorm;
use crate::presets::{preset, Golden, InitialState, PodVariant};
use crate::stability::DEFAULT_MAX_HORIZON;

/// Distinguishes an absent key from an explicit `null`.
fn nullable<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Option<f64>>, D::Error> {
    Option::<f64>::deserialize(d).map(Some)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    preset: Option<String>,
    theta: Option<f64>,
    rho: Option<f64>,
    lambda: Option<f64>,
    #[serde(default, deserialize_with = "nullable")]
    u_a: Option<Option<f64>>,
    #[serde(default, deserialize_with = "nullable")]
    u_b: Option<Option<f64>>,
    dt: Option<f64>,
    nx: Option<usize>,
    t_final: Option<f64>,
    y0: Option<InitialState>,
    horizon: Option<usize>,
    gain: Option<f64>,
    pod_variants: Option<Vec<PodVariant>>,
    tau_pod: Option<f64>,
    energy_norm: Option<EnergyNorm>,
    noise: Option<f64>,
    seed: Option<u64>,
    max_horizon: Option<usize>,
}

/// Fully resolved experiment.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub name: String,
    pub params: ModelParams,
    pub grid: SpatialGrid,
    pub t_final: f64,
    pub initial: InitialState,
    /// Fixed prediction horizon; otherwise the minimal stabilizing one.
    pub horizon: Option<usize>,
    /// Fixed feedback gain; otherwise the optimized one.
    pub gain: Option<f64>,
    /// Reduced-order rows; an empty list with `tau_pod` set means one row
    /// with energy-based rank selection.
    pub pod_variants: Vec<PodVariant>,
    pub tau_pod: Option<f64>,
    pub energy_norm: EnergyNorm,
    pub noise_level: f64,
    pub seed: u64,
    pub max_horizon: usize,
    /// Published values, present for presets.
    pub golden: Option<Golden>,
}

impl ExperimentConfig {
    pub fn from_preset(name: &str) -> Result<Self> {
        let p = preset(name)?;
        Ok(Self {
            name: p.name.clone(),
            params: p.params()?,
            grid: build_grid(p.n_interior)?,
            t_final: p.t_final,
            initial: p.initial,
            horizon: None,
            gain: None,
            pod_variants: p.pod_variants.clone(),
            tau_pod: None,
            energy_norm: EnergyNorm::default(),
            noise_level: 0.0,
            seed: 0,
            max_horizon: DEFAULT_MAX_HORIZON,
            golden: Some(p.golden),
        })
    }

    pub fn y0(&self) -> Vec<f64> {
        self.initial.sample(&self.grid)
    }

    /// Replaces the grid, keeping every other setting.
    pub fn set_n_interior(&mut self, n: usize) -> Result<()> {
        self.grid = build_grid(n)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.initial.validate()?;
        if !(0.0..1.0).contains(&self.noise_level) {
            return Err(Error::Config(format!("noise must lie in [0, 1), got {}", self.noise_level)));
        }
        if let Some(g) = self.gain {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("gain must be a non-negative number, got {g}")));
            }
        }
        if let Some(t) = self.tau_pod {
            if !(t >= 0.0) {
                return Err(Error::Config(format!("tau_pod must be non-negative, got {t}")));
            }
        }
        if self.pod_variants.iter().any(|v| v.pod_rank == 0 || v.deim_rank == Some(0)) {
            return Err(Error::Config("POD and DEIM ranks must be positive".into()));
        }
        let steps = self.t_final / self.params.dt;
        if !(steps >= 1.0) || (steps - steps.round()).abs() > 1e-8 {
            return Err(Error::Config(format!(
                "t_final = {} must be a positive multiple of dt = {}",
                self.t_final, self.params.dt
            )));
        }
        Ok(())
    }

    /// Closed-loop configuration with the given horizon and optional reduced
    /// model.
    pub fn mpc_config(&self, horizon: usize, rom: Option<RomSettings>) -> MpcConfig {
        let mut c = MpcConfig::new(self.params.clone(), self.grid.clone(), self.t_final, horizon, self.y0());
        c.rom = rom;
        c.noise_level = self.noise_level;
        c.rng_seed = self.seed;
        c
    }

    /// Reduced-order settings for each table row.
    pub fn rom_settings(&self) -> Vec<(Option<PodVariant>, RomSettings)> {
        let base = RomSettings {
            energy_norm: self.energy_norm,
            clamp_ranks: true,
            ..RomSettings::default()
        };
        if self.pod_variants.is_empty() {
            return match self.tau_pod {
                Some(tau) => vec![(None, RomSettings { tau_pod: tau, ..base })],
                None => Vec::new(),
            };
        }
        self.pod_variants
            .iter()
            .map(|v| {
                (
                    Some(*v),
                    RomSettings {
                        pod_rank: Some(v.pod_rank),
                        deim_rank: v.deim_rank,
                        ..base.clone()
                    },
                )
            })
            .collect()
    }
}

fn resolve(file: ConfigFile) -> Result<ExperimentConfig> {
    let mut cfg = match &file.preset {
        Some(name) => ExperimentConfig::from_preset(name)?,
        None => {
            let theta = file
                .theta
                .ok_or_else(|| Error::Config("`theta` is required without a preset".into()))?;
            let rho = file
                .rho
                .ok_or_else(|| Error::Config("`rho` is required without a preset".into()))?;
            ExperimentConfig {
                name: "custom".into(),
                params: ModelParams::new(theta, rho, 0.01, 0.01)?,
                grid: build_grid(99)?,
                t_final: 0.5,
                initial: InitialState::Sin { amplitude: 0.2 },
                horizon: None,
                gain: None,
                pod_variants: Vec::new(),
                tau_pod: None,
                energy_norm: EnergyNorm::default(),
                noise_level: 0.0,
                seed: 0,
                max_horizon: DEFAULT_MAX_HORIZON,
                golden: None,
            }
        }
    };
    let p = &mut cfg.params;
    if let Some(v) = file.theta {
        p.theta = v;
    }
    if let Some(v) = file.rho {
        p.rho = v;
    }
    if let Some(v) = file.lambda {
        p.lambda = v;
    }
    if let Some(v) = file.u_a {
        p.u_a = v.unwrap_or(f64::NEG_INFINITY);
    }
    if let Some(v) = file.u_b {
        p.u_b = v.unwrap_or(f64::INFINITY);
    }
    if let Some(v) = file.dt {
        p.dt = v;
    }
    if let Some(n) = file.nx {
        cfg.set_n_interior(n)?;
    }
    if let Some(v) = file.t_final {
        cfg.t_final = v;
    }
    if let Some(v) = file.y0 {
        cfg.initial = v;
    }
    cfg.horizon = file.horizon.or(cfg.horizon);
    cfg.gain = file.gain.or(cfg.gain);
    if let Some(v) = file.pod_variants {
        cfg.pod_variants = v;
    }
    cfg.tau_pod = file.tau_pod.or(cfg.tau_pod);
    if let Some(v) = file.energy_norm {
        cfg.energy_norm = v;
    }
    if let Some(v) = file.noise {
        cfg.noise_level = v;
    }
    if let Some(v) = file.seed {
        cfg.seed = v;
    }
    if let Some(v) = file.max_horizon {
        cfg.max_horizon = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let file: ConfigFile = serde_json::from_str(text)?;
    resolve(file)
}

/// Reads and resolves a JSON configuration file; parse errors carry the
/// line and column.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_config(&text).map_err(|e| match e {
        Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
        other => other,
    })
}
