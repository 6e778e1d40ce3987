//! Receding-horizon control of a one-dimensional reaction–advection–diffusion
//! equation with finite-difference and POD reduced-order models, plus the
//! relaxed dynamic-programming stability analysis used to pick the horizon.

// `!(x > 0.0)` deliberately rejects NaN, and index loops mirror the
// numerical formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod error;
pub mod export;
pub mod fd_model;
pub mod linalg;
pub mod mpc;
pub mod openloop;
pub mod pipeline;
pub mod pod_rom;
pub mod presets;
pub mod stability;
pub mod trajectory;

pub use error::{Error, Result};
pub use trajectory::Trajectory;
