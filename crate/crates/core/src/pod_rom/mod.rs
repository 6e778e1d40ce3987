//! Proper orthogonal decomposition by the method of snapshots, DEIM for the
//! cubic reaction term, and POD-Galerkin state/adjoint solvers.

mod basis;
mod deim;
mod rom;

pub use basis::{
    choose_rank, collect_snapshots, compute_pod_basis, pod_energy, project_onto_basis, EnergyNorm, InnerProduct,
    PodBasis, SnapshotBlock, SnapshotConfig, SnapshotRole, SnapshotSet, EIG_REL_THRESHOLD,
};
pub use deim::{build_deim, nonlinearity_snapshots, DeimData};
pub use rom::{feedback_error_term, solve_rom_adjoint, solve_rom_state, build_rom, ReducedModel};
