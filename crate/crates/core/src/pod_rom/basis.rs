use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fd_model::{self, ModelParams, SpatialGrid};
use crate::trajectory::Trajectory;

/// Eigenvalues below this fraction of the largest one are treated as zero
/// (singular values below `1e-12 σ₁`).
pub const EIG_REL_THRESHOLD: f64 = 1e-24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum InnerProduct {
    /// `⟨a, b⟩ = Δx Σ a_i b_i`.
    #[default]
    H,
    /// `⟨a, b⟩ = Σ (a_{i+1} - a_i)(b_{i+1} - b_i) / Δx`.
    V,
}

impl InnerProduct {
    /// `out = W a` where `⟨a, b⟩_X = bᵀ W a`.
    pub(crate) fn apply_weight(self, dx: f64, a: &[f64], out: &mut [f64]) {
        match self {
            InnerProduct::H => {
                for (o, &v) in out.iter_mut().zip(a) {
                    *o = dx * v;
                }
            }
            InnerProduct::V => {
                let n = a.len();
                for i in 0..n {
                    let left = if i > 0 { a[i - 1] } else { 0.0 };
                    let right = if i + 1 < n { a[i + 1] } else { 0.0 };
                    out[i] = (2.0 * a[i] - left - right) / dx;
                }
            }
        }
    }

    pub fn inner(self, grid: &SpatialGrid, a: &[f64], b: &[f64]) -> f64 {
        match self {
            InnerProduct::H => fd_model::h_inner(grid, a, b),
            InnerProduct::V => fd_model::v_inner(grid, a, b),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SnapshotRole {
    State,
    Adjoint,
    /// Backward difference quotients `(y_k - y_{k-1}) / Δt`.
    Derivative,
}

#[derive(Clone, Debug)]
pub struct SnapshotBlock {
    pub role: SnapshotRole,
    pub trajectory: Trajectory,
    /// Quadrature weight of each row.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SnapshotSet {
    pub blocks: Vec<SnapshotBlock>,
}

impl SnapshotSet {
    pub fn new(blocks: Vec<SnapshotBlock>) -> Result<Self> {
        let width = blocks
            .first()
            .map(|b| b.trajectory.width())
            .ok_or(Error::ZeroSnapshots)?;
        for b in &blocks {
            check_dim("snapshot width", width, b.trajectory.width())?;
            check_dim("snapshot weights", b.trajectory.len(), b.weights.len())?;
        }
        let nonzero = blocks.iter().any(|b| b.trajectory.as_slice().iter().any(|&v| v != 0.0));
        if !nonzero {
            return Err(Error::ZeroSnapshots);
        }
        Ok(Self { blocks })
    }

    /// Builds a single-block set with uniform weights.
    pub fn from_trajectory(role: SnapshotRole, trajectory: Trajectory, weight: f64) -> Result<Self> {
        let weights = vec![weight; trajectory.len()];
        Self::new(vec![SnapshotBlock { role, trajectory, weights }])
    }

    pub fn width(&self) -> usize {
        self.blocks[0].trajectory.width()
    }

    pub fn block(&self, role: SnapshotRole) -> Option<&SnapshotBlock> {
        self.blocks.iter().find(|b| b.role == role)
    }

    pub(crate) fn columns(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.blocks
            .iter()
            .flat_map(|b| b.trajectory.rows().zip(b.weights.iter().copied()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotConfig {
    pub include_adjoint: bool,
    pub include_derivatives: bool,
}

impl Default for SnapshotConfig {
    fn default() -> Self {
        Self {
            include_adjoint: true,
            include_derivatives: false,
        }
    }
}

/// Uncontrolled forward solve on `[t0, t_final]`, optionally with the adjoint
/// of that trajectory and the backward difference quotients. Every row is
/// weighted by `Δt`.
pub fn collect_snapshots(
    params: &ModelParams,
    grid: &SpatialGrid,
    t0: f64,
    t_final: f64,
    y0: &[f64],
    config: &SnapshotConfig,
) -> Result<SnapshotSet> {
    let steps_f = (t_final - t0) / params.dt;
    let n_steps = steps_f.round();
    if !(n_steps >= 1.0) || (steps_f - n_steps).abs() > 1e-8 {
        return Err(Error::InvalidArgument(format!(
            "snapshot window [{t0}, {t_final}] is not a positive multiple of dt = {}",
            params.dt
        )));
    }
    let n_steps = n_steps as usize;
    let y = fd_model::solve_state(params, grid, t0, n_steps, y0, None)?;
    let dt = params.dt;
    let mut blocks = Vec::new();
    if config.include_adjoint {
        let p = fd_model::solve_adjoint(params, grid, &y)?;
        blocks.push(SnapshotBlock {
            role: SnapshotRole::Adjoint,
            weights: vec![dt; p.len()],
            trajectory: p,
        });
    }
    if config.include_derivatives {
        let mut d = Trajectory::with_capacity(t0 + dt, dt, grid.n_interior(), n_steps);
        let mut row = vec![0.0; grid.n_interior()];
        for k in 1..=n_steps {
            for ((r, a), b) in row.iter_mut().zip(y.row(k)).zip(y.row(k - 1)) {
                *r = (a - b) / dt;
            }
            d.push_row(&row)?;
        }
        blocks.push(SnapshotBlock {
            role: SnapshotRole::Derivative,
            weights: vec![dt; d.len()],
            trajectory: d,
        });
    }
    blocks.insert(
        0,
        SnapshotBlock {
            role: SnapshotRole::State,
            weights: vec![dt; y.len()],
            trajectory: y,
        },
    );
    SnapshotSet::new(blocks)
}

#[derive(Clone, Debug)]
pub struct PodBasis {
    pub space: InnerProduct,
    /// `n_interior × d`, orthonormal in `space`.
    pub modes: DMatrix<f64>,
    /// Nonincreasing, length `d`.
    pub eigenvalues: Vec<f64>,
    /// Trace of the snapshot Gramian (`ℰ(0)` before truncation).
    pub total_energy: f64,
}

impl PodBasis {
    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n_space(&self) -> usize {
        self.modes.nrows()
    }

    pub fn mode(&self, i: usize) -> Vec<f64> {
        self.modes.column(i).iter().copied().collect()
    }

    /// First `ell` modes.
    pub fn leading(&self, ell: usize) -> Result<DMatrix<f64>> {
        if ell > self.rank() {
            return Err(Error::RankTooLarge {
                requested: ell,
                available: self.rank(),
            });
        }
        Ok(self.modes.columns(0, ell).into_owned())
    }

    /// `⟨φ, ψ_i⟩_X` for the first `ell` modes.
    pub fn coefficients(&self, grid: &SpatialGrid, ell: usize, phi: &[f64]) -> Result<Vec<f64>> {
        check_dim("grid function", self.n_space(), phi.len())?;
        if ell > self.rank() {
            return Err(Error::RankTooLarge {
                requested: ell,
                available: self.rank(),
            });
        }
        let mut w = vec![0.0; phi.len()];
        self.space.apply_weight(grid.dx(), phi, &mut w);
        Ok((0..ell)
            .map(|i| self.modes.column(i).iter().zip(&w).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `Σ_j w_j ‖y_j - Σ_{i≤ℓ} ⟨y_j, ψ_i⟩_X ψ_i‖²_X`, recomputed directly.
    pub fn projection_residual(&self, snapshots: &SnapshotSet, grid: &SpatialGrid, ell: usize) -> Result<f64> {
        let mut total = 0.0;
        for (col, w) in snapshots.columns() {
            let c = self.coefficients(grid, ell, col)?;
            let mut r = col.to_vec();
            for (i, ci) in c.iter().enumerate() {
                for (rv, m) in r.iter_mut().zip(self.modes.column(i).iter()) {
                    *rv -= ci * m;
                }
            }
            total += w * self.space.inner(grid, &r, &r);
        }
        Ok(total)
    }
}

/// Method of snapshots, computed stably: with a factor `F` of the X Gram
/// matrix (`FᵀF = W`), the thin SVD of `B = F Y diag(√w)` yields the
/// eigenvalues `σ²` of the weighted time Gramian and the modes
/// `ψ = W⁻¹ Fᵀ u` from its left singular vectors. This resolves the spectrum
/// far below `ε λ₁`, where an eigensolver on the Gramian itself cannot.
pub fn compute_pod_basis(snapshots: &SnapshotSet, space: InnerProduct, grid: &SpatialGrid) -> Result<PodBasis> {
    let n = snapshots.width();
    check_dim("snapshot width", grid.n_interior(), n)?;
    let dx = grid.dx();
    let cols: Vec<(&[f64], f64)> = snapshots.columns().collect();
    let m = cols.len();
    let sdx = dx.sqrt();

    let rows = match space {
        InnerProduct::H => n,
        InnerProduct::V => n + 1,
    };
    let mut b = DMatrix::<f64>::zeros(rows, m);
    for (j, (col, w)) in cols.iter().enumerate() {
        let sw = w.sqrt();
        match space {
            InnerProduct::H => {
                for i in 0..n {
                    b[(i, j)] = sw * sdx * col[i];
                }
            }
            InnerProduct::V => {
                for r in 0..=n {
                    let hi = if r < n { col[r] } else { 0.0 };
                    let lo = if r > 0 { col[r - 1] } else { 0.0 };
                    b[(r, j)] = sw * (hi - lo) / sdx;
                }
            }
        }
    }
    let total_energy = b.norm_squared();
    if !(total_energy > 0.0) {
        return Err(Error::ZeroSnapshots);
    }

    let svd = b.svd(true, false);
    let u = svd.u.ok_or_else(|| Error::Singular("SVD of weighted snapshots".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let lambda_max = svd.singular_values[order[0]].powi(2);
    let kept: Vec<usize> = order
        .into_iter()
        .take_while(|&k| svd.singular_values[k].powi(2) > EIG_REL_THRESHOLD * lambda_max)
        .take(n)
        .collect();
    let d = kept.len();

    let mut modes = DMatrix::<f64>::zeros(n, d);
    let mut eigenvalues = Vec::with_capacity(d);
    let (lower, diag, upper) = (vec![-1.0 / dx; n], vec![2.0 / dx; n], vec![-1.0 / dx; n]);
    let mut rhs = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    for (i, &k) in kept.iter().enumerate() {
        let uk = u.column(k);
        match space {
            InnerProduct::H => {
                for r in 0..n {
                    modes[(r, i)] = uk[r] / sdx;
                }
            }
            InnerProduct::V => {
                for r in 0..n {
                    rhs[r] = (uk[r] - uk[r + 1]) / sdx;
                }
                crate::linalg::solve_tridiagonal(&lower, &diag, &upper, &mut rhs, &mut scratch)?;
                for r in 0..n {
                    modes[(r, i)] = rhs[r];
                }
            }
        }
        eigenvalues.push(svd.singular_values[k].powi(2));
    }
    reorthonormalize(&mut modes, space, dx)?;

    Ok(PodBasis {
        space,
        modes,
        eigenvalues,
        total_energy,
    })
}

/// Two passes of modified Gram-Schmidt in the X inner product; removes the
/// loss of orthogonality of modes attached to tiny eigenvalues.
fn reorthonormalize(modes: &mut DMatrix<f64>, space: InnerProduct, dx: f64) -> Result<()> {
    let (n, d) = modes.shape();
    let mut w = vec![0.0; n];
    for _pass in 0..2 {
        for i in 0..d {
            for j in 0..i {
                let prev: Vec<f64> = modes.column(j).iter().copied().collect();
                space.apply_weight(dx, &prev, &mut w);
                let proj: f64 = modes.column(i).iter().zip(&w).map(|(a, b)| a * b).sum();
                for r in 0..n {
                    modes[(r, i)] -= proj * prev[r];
                }
            }
            let col: Vec<f64> = modes.column(i).iter().copied().collect();
            space.apply_weight(dx, &col, &mut w);
            let norm = col.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>().sqrt();
            if !(norm > 0.0) {
                return Err(Error::Singular(format!("POD mode {i} vanished during orthonormalization")));
            }
            for r in 0..n {
                modes[(r, i)] /= norm;
            }
        }
    }
    Ok(())
}

/// `ℰ(ℓ) = Σ_{i>ℓ} λ_i`.
pub fn pod_energy(basis: &PodBasis, ell: usize) -> Result<f64> {
    if ell > basis.rank() {
        return Err(Error::RankTooLarge {
            requested: ell,
            available: basis.rank(),
        });
    }
    Ok(basis.eigenvalues[ell..].iter().rev().sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum EnergyNorm {
    /// `ℰ(ℓ) / ℰ(0)`.
    #[default]
    Relative,
    Absolute,
}

/// Smallest `ℓ` with `ℰ(ℓ) ≤ τ` (relative or absolute).
pub fn choose_rank(basis: &PodBasis, tau_pod: f64, norm: EnergyNorm) -> usize {
    // Suffix sums keep the tiny tail eigenvalues exact.
    let d = basis.rank();
    let mut tails = vec![0.0; d + 1];
    for i in (0..d).rev() {
        tails[i] = tails[i + 1] + basis.eigenvalues[i];
    }
    let scale = match norm {
        EnergyNorm::Relative => tails[0],
        EnergyNorm::Absolute => 1.0,
    };
    (0..=d).find(|&ell| tails[ell] / scale <= tau_pod).unwrap_or(d)
}

/// V-orthogonal projection onto the span of the first `ell` modes. For
/// V-orthonormal modes this is `Σ ⟨φ, ψ_i⟩_V ψ_i`; for H-modes the
/// coefficients solve the Gram system in the V inner product.
pub fn project_onto_basis(basis: &PodBasis, grid: &SpatialGrid, ell: usize, phi: &[f64]) -> Result<Vec<f64>> {
    check_dim("grid function", basis.n_space(), phi.len())?;
    let modes = basis.leading(ell)?;
    let n = basis.n_space();
    let mut rhs = DVector::zeros(ell);
    let mut wphi = vec![0.0; n];
    InnerProduct::V.apply_weight(grid.dx(), phi, &mut wphi);
    for i in 0..ell {
        rhs[i] = modes.column(i).iter().zip(&wphi).map(|(a, b)| a * b).sum();
    }
    let coeffs = match basis.space {
        InnerProduct::V => rhs,
        InnerProduct::H => {
            let mut wm = DMatrix::zeros(n, ell);
            let mut buf = vec![0.0; n];
            for i in 0..ell {
                let col: Vec<f64> = modes.column(i).iter().copied().collect();
                InnerProduct::V.apply_weight(grid.dx(), &col, &mut buf);
                wm.set_column(i, &DVector::from_vec(buf.clone()));
            }
            let gram = modes.transpose() * wm;
            crate::linalg::solve_dense(gram, &rhs)?
        }
    };
    Ok((&modes * coeffs).iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd_model::build_grid;
    use std::f64::consts::PI;

    #[test]
    fn single_snapshot_gives_normalized_mode() {
        let g = build_grid(30).unwrap();
        let phi = g.sample(|x| x * (1.0 - x));
        let traj = Trajectory::from_rows(0.0, 0.1, &[phi.clone(), phi.clone(), phi.clone()]).unwrap();
        let snaps = SnapshotSet::from_trajectory(SnapshotRole::State, traj, 0.1).unwrap();
        for space in [InnerProduct::H, InnerProduct::V] {
            let b = compute_pod_basis(&snaps, space, &g).unwrap();
            assert_eq!(b.rank(), 1);
            let norm = space.inner(&g, &phi, &phi).sqrt();
            let m = b.mode(0);
            let sign = m[5].signum() * phi[5].signum();
            for (a, p) in m.iter().zip(&phi) {
                assert!((sign * a - p / norm).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_snapshots_rejected() {
        let z = Trajectory::zeros(0.0, 0.1, 3, 5);
        assert!(matches!(
            SnapshotSet::from_trajectory(SnapshotRole::State, z, 0.1),
            Err(Error::ZeroSnapshots)
        ));
        let g = build_grid(10).unwrap();
        let p = ModelParams::new(1.0, 11.0, 0.01, 0.01).unwrap();
        assert!(collect_snapshots(&p, &g, 0.0, 0.1, &[0.0; 10], &SnapshotConfig::default()).is_err());
    }

    #[test]
    fn derivative_snapshots_are_difference_quotients() {
        let g = build_grid(20).unwrap();
        let p = ModelParams::new(1.0, 11.0, 0.01, 0.01).unwrap();
        let y0 = g.sample(|x| 0.2 * (PI * x).sin());
        let cfg = SnapshotConfig {
            include_adjoint: true,
            include_derivatives: true,
        };
        let s = collect_snapshots(&p, &g, 0.0, 0.1, &y0, &cfg).unwrap();
        let y = &s.block(SnapshotRole::State).unwrap().trajectory;
        let d = &s.block(SnapshotRole::Derivative).unwrap().trajectory;
        assert_eq!(y.len(), 11);
        assert_eq!(d.len(), 10);
        for i in 0..20 {
            assert_eq!(d.row(0)[i], (y.row(1)[i] - y.row(0)[i]) / 0.01);
        }
    }

    #[test]
    fn rank_selection_edges() {
        let g = build_grid(25).unwrap();
        let p = ModelParams::new(1.0, 11.0, 0.01, 0.01).unwrap();
        let y0 = g.sample(|x| 0.2 * (PI * x).sin());
        let s = collect_snapshots(&p, &g, 0.0, 0.2, &y0, &SnapshotConfig::default()).unwrap();
        let b = compute_pod_basis(&s, InnerProduct::H, &g).unwrap();
        assert_eq!(choose_rank(&b, 0.0, EnergyNorm::Relative), b.rank());
        assert_eq!(choose_rank(&b, 1.0, EnergyNorm::Relative), 0);
        assert_eq!(choose_rank(&b, b.total_energy * 1.01, EnergyNorm::Absolute), 0);
        assert_eq!(pod_energy(&b, b.rank()).unwrap(), 0.0);
        assert!(pod_energy(&b, b.rank() + 1).is_err());
        let e0 = pod_energy(&b, 0).unwrap();
        assert!((e0 - b.total_energy).abs() <= 1e-10 * b.total_energy);
    }
}
