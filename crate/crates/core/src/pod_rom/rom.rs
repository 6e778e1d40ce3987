use nalgebra::{DMatrix, DVector};

use super::basis::{InnerProduct, PodBasis};
use super::deim::DeimData;
use crate::error::{check_dim, Error, Result};
use crate::fd_model::{self, reaction, reaction_derivative, ModelParams, SpatialGrid, MAX_NEWTON, NEWTON_TOL};
use crate::openloop::HorizonModel;
use crate::stability::{rom_error_term, ErrorTerm};
use crate::trajectory::Trajectory;

/// Tolerance of the build-time consistency checks on the Galerkin operators.
const OPERATOR_CHECK_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
struct DeimOperators {
    m: usize,
    /// `Δx Ψᵀ U (PᵀU)⁻¹`, `ℓ × m` row-major.
    projector: Vec<f64>,
    /// `Pᵀ Ψ`, `m × ℓ` row-major.
    sampled_basis: Vec<f64>,
}

/// POD-Galerkin model in the coefficients `c` of `y ≈ Ψ c`:
///
/// `M_r (c_{k+1} - c_k)/Δt + A_r c_{k+1} + N(c_{k+1}) = Δx Ψᵀ u_k`
///
/// with `M_r = Δx ΨᵀΨ`, `A_r = Δx Ψᵀ A Ψ` and `N(c) = Δx Ψᵀ ρ((Ψc)³ - Ψc)`,
/// or `U (PᵀU)⁻¹ ρ(PᵀΨc)³ - ρ M_r c` with DEIM.
///
/// Small dense operators are stored row-major so that the time-stepping
/// loops run without allocation.
#[derive(Clone, Debug)]
pub struct ReducedModel {
    params: ModelParams,
    grid: SpatialGrid,
    space: InnerProduct,
    ell: usize,
    psi: DMatrix<f64>,
    mass: DMatrix<f64>,
    stiffness: DMatrix<f64>,
    /// `Ψ`, `n × ℓ` row-major.
    psi_rows: Vec<f64>,
    /// `Δx Ψᵀ`, `ℓ × n` row-major.
    restriction: Vec<f64>,
    mass_f: Vec<f64>,
    stiff_f: Vec<f64>,
    /// `Δx Ψᵀ y_d`.
    target: Vec<f64>,
    target_norm_sq: f64,
    deim: Option<DeimOperators>,
    /// Coordinates used to reduce an initial grid function, `ℓ × n` row-major.
    coeff_weight: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    (0..r * c).map(|k| m[(k / c, k % c)]).collect()
}

fn mat_vec(a: &[f64], rows: usize, x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out[..rows].iter_mut().zip(a.chunks_exact(cols)) {
        let mut s = 0.0;
        for (p, q) in row.iter().zip(x) {
            s += p * q;
        }
        *o = s;
    }
}

pub fn build_rom(
    basis: &PodBasis,
    ell: usize,
    deim: Option<&DeimData>,
    params: &ModelParams,
    grid: &SpatialGrid,
) -> Result<ReducedModel> {
    params.validate()?;
    params.check_grid(grid)?;
    check_dim("basis rows", grid.n_interior(), basis.n_space())?;
    if ell == 0 {
        return Err(Error::InvalidArgument("POD rank must be positive".into()));
    }
    let psi = basis.leading(ell)?;
    let n = grid.n_interior();
    let dx = grid.dx();

    let mass = dx * psi.transpose() * &psi;
    let mut a_psi = DMatrix::zeros(n, ell);
    let stencil = fd_model::Stencil::new(params.theta, dx);
    let mut buf = vec![0.0; n];
    for j in 0..ell {
        let col: Vec<f64> = psi.column(j).iter().copied().collect();
        stencil.apply(&col, &mut buf);
        a_psi.set_column(j, &DVector::from_column_slice(&buf));
    }
    let stiffness = dx * psi.transpose() * a_psi;

    let yd = DVector::from_iterator(n, (0..n).map(|i| params.desired(i)));
    let target = dx * psi.transpose() * &yd;
    let target_norm_sq = dx * yd.norm_squared();

    // The symmetric part of A_r is θ times the V-Gram matrix of the basis; the
    // advection part is skew.
    let mut vgram = DMatrix::zeros(ell, ell);
    for i in 0..ell {
        for j in 0..ell {
            let a: Vec<f64> = psi.column(i).iter().copied().collect();
            let b: Vec<f64> = psi.column(j).iter().copied().collect();
            vgram[(i, j)] = fd_model::v_inner(grid, &a, &b);
        }
    }
    let sym = 0.5 * (&stiffness + stiffness.transpose());
    let scale = 1.0 + params.theta * vgram.abs().max();
    if (sym - params.theta * &vgram).abs().max() > OPERATOR_CHECK_TOL * scale {
        return Err(Error::Singular("reduced stiffness inconsistent with the V Gram matrix".into()));
    }
    if basis.space == InnerProduct::H && (&mass - DMatrix::identity(ell, ell)).abs().max() > 1e-10 {
        return Err(Error::Singular("H-orthonormal basis has non-identity mass matrix".into()));
    }

    let deim = match deim {
        None => None,
        Some(d) => {
            check_dim("DEIM basis rows", n, d.modes.nrows())?;
            let op = d.interpolation_operator()?;
            let projector = dx * psi.transpose() * op;
            let m = d.rank();
            let mut sampled_basis = DMatrix::zeros(m, ell);
            for (r, &p) in d.indices.iter().enumerate() {
                sampled_basis.set_row(r, &psi.row(p));
            }
            Some(DeimOperators {
                m,
                projector: row_major(&projector),
                sampled_basis: row_major(&sampled_basis),
            })
        }
    };

    let coeff_weight = match basis.space {
        InnerProduct::H => row_major(&(dx * psi.transpose())),
        InnerProduct::V => {
            let mut w = Vec::with_capacity(ell * n);
            for i in 0..ell {
                let col: Vec<f64> = psi.column(i).iter().copied().collect();
                InnerProduct::V.apply_weight(dx, &col, &mut buf);
                w.extend_from_slice(&buf);
            }
            w
        }
    };

    Ok(ReducedModel {
        params: params.clone(),
        grid: grid.clone(),
        space: basis.space,
        ell,
        psi_rows: row_major(&psi),
        restriction: row_major(&(dx * psi.transpose())),
        mass_f: row_major(&mass),
        stiff_f: row_major(&stiffness),
        target: target.iter().copied().collect(),
        target_norm_sq,
        psi,
        mass,
        stiffness,
        deim,
        coeff_weight,
    })
}

/// Scratch buffers of one reduced solve.
struct RomWorkspace {
    residual: Vec<f64>,
    jac: Vec<f64>,
    nl: Vec<f64>,
    jac_nl: Vec<f64>,
    /// Sampled or lifted state values.
    values: Vec<f64>,
    derivs: Vec<f64>,
    prev: Vec<f64>,
}

impl RomWorkspace {
    fn new(ell: usize, samples: usize) -> Self {
        Self {
            residual: vec![0.0; ell],
            jac: vec![0.0; ell * ell],
            nl: vec![0.0; ell],
            jac_nl: vec![0.0; ell * ell],
            values: vec![0.0; samples],
            derivs: vec![0.0; samples],
            prev: vec![0.0; ell],
        }
    }
}

impl ReducedModel {
    pub fn rank(&self) -> usize {
        self.ell
    }

    pub fn space(&self) -> InnerProduct {
        self.space
    }

    pub fn uses_deim(&self) -> bool {
        self.deim.is_some()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }

    fn workspace(&self) -> RomWorkspace {
        let samples = self.deim.as_ref().map_or(self.grid.n_interior(), |d| d.m);
        RomWorkspace::new(self.ell, samples)
    }

    /// X-coefficients `⟨y, ψ_i⟩_X` of a grid function.
    pub fn reduce(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim("grid function", self.grid.n_interior(), y.len())?;
        let mut c = vec![0.0; self.ell];
        mat_vec(&self.coeff_weight, self.ell, y, &mut c);
        Ok(c)
    }

    /// `Ψ c`.
    pub fn lift(&self, c: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.grid.n_interior()];
        self.lift_into(c, &mut y);
        y
    }

    /// `y = Σ cᵢ ψᵢ`, accumulated column by column.
    fn lift_into(&self, c: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (col, &ci) in self.psi.as_slice().chunks_exact(y.len()).zip(c) {
            for (v, p) in y.iter_mut().zip(col) {
                *v += ci * p;
            }
        }
    }

    pub fn lift_trajectory(&self, coeffs: &Trajectory) -> Trajectory {
        let n = self.grid.n_interior();
        let mut out = Trajectory::with_capacity(coeffs.t0(), coeffs.dt(), n, coeffs.len());
        let mut y = vec![0.0; n];
        for r in coeffs.rows() {
            self.lift_into(r, &mut y);
            out.push_row(&y).expect("lifted row has grid width");
        }
        out
    }

    /// Reduced reaction term and its Jacobian at `c`, into `ws.nl` / `ws.jac_nl`.
    fn nonlinearity(&self, c: &[f64], ws: &mut RomWorkspace) {
        let rho = self.params.rho;
        let l = self.ell;
        match &self.deim {
            Some(d) => {
                let m = d.m;
                let (pr, sb, mf) = (&d.projector, &d.sampled_basis, &self.mass_f);
                for r in 0..m {
                    let mut v = 0.0;
                    for k in 0..l {
                        v += sb[r * l + k] * c[k];
                    }
                    ws.derivs[r] = 3.0 * rho * v * v;
                    ws.values[r] = rho * v * v * v;
                }
                // N(c) = E f(PᵀΨc) - ρ M_r c and its Jacobian
                // E diag(f'(PᵀΨc)) PᵀΨ - ρ M_r, row by row.
                for i in 0..l {
                    let mut s = 0.0;
                    for k in 0..l {
                        s -= rho * mf[i * l + k] * c[k];
                        ws.jac_nl[i * l + k] = -rho * mf[i * l + k];
                    }
                    for r in 0..m {
                        let p = pr[i * m + r];
                        s += p * ws.values[r];
                        let w = p * ws.derivs[r];
                        for k in 0..l {
                            ws.jac_nl[i * l + k] += w * sb[r * l + k];
                        }
                    }
                    ws.nl[i] = s;
                }
            }
            None => {
                let n = self.grid.n_interior();
                let dx = self.grid.dx();
                mat_vec(&self.psi_rows, n, c, &mut ws.values);
                for j in 0..n {
                    let v = ws.values[j];
                    ws.derivs[j] = reaction_derivative(rho, v);
                    ws.values[j] = reaction(rho, v);
                }
                mat_vec(&self.restriction, l, &ws.values, &mut ws.nl);
                ws.jac_nl.iter_mut().for_each(|v| *v = 0.0);
                for (row, d) in self.psi_rows.chunks_exact(l).zip(&ws.derivs) {
                    let w = dx * d;
                    for (jrow, ri) in ws.jac_nl.chunks_exact_mut(l).zip(row) {
                        let wi = w * ri;
                        for (j, rk) in jrow.iter_mut().zip(row) {
                            *j += wi * rk;
                        }
                    }
                }
            }
        }
    }

    /// One implicit Euler step with optional restricted forcing `b` and the
    /// feedback `-K Ψ c` folded into the system; `c` holds `c_prev` on entry.
    fn step(&self, c: &mut [f64], forcing: Option<&[f64]>, gain: f64, step: usize, ws: &mut RomWorkspace) -> Result<()> {
        let l = self.ell;
        let inv_dt = 1.0 / self.params.dt;
        ws.prev.copy_from_slice(c);
        let mut residual = f64::INFINITY;
        for _ in 0..=MAX_NEWTON {
            self.nonlinearity(c, ws);
            for i in 0..l {
                let mut s = ws.nl[i] - forcing.map_or(0.0, |b| b[i]);
                for k in 0..l {
                    let mik = self.mass_f[i * l + k];
                    s += mik * ((c[k] - ws.prev[k]) * inv_dt + gain * c[k]) + self.stiff_f[i * l + k] * c[k];
                }
                ws.residual[i] = s;
            }
            residual = crate::linalg::inf_norm(&ws.residual);
            if residual <= NEWTON_TOL {
                return Ok(());
            }
            if !residual.is_finite() {
                break;
            }
            for idx in 0..l * l {
                ws.jac[idx] = self.mass_f[idx] * (inv_dt + gain) + self.stiff_f[idx] + ws.jac_nl[idx];
            }
            crate::linalg::solve_small_in_place(&mut ws.jac, &mut ws.residual, l)?;
            let mut dmax: f64 = 0.0;
            let mut cmax: f64 = 0.0;
            for i in 0..l {
                c[i] -= ws.residual[i];
                dmax = dmax.max(ws.residual[i].abs());
                cmax = cmax.max(c[i].abs());
            }
            if dmax <= 1e-15 * (1.0 + cmax) {
                return Ok(());
            }
        }
        Err(Error::NewtonDivergence { step, residual })
    }

    fn rollout(&self, t0: f64, c0: &[f64], controls: Option<&Trajectory>, n_steps: usize, gain: f64) -> Result<Trajectory> {
        check_dim("reduced initial state", self.ell, c0.len())?;
        if let Some(u) = controls {
            check_dim("control width", self.grid.n_interior(), u.width())?;
            check_dim("control rows", n_steps, u.len())?;
        }
        let mut ws = self.workspace();
        let mut out = Trajectory::with_capacity(t0, self.params.dt, self.ell, n_steps + 1);
        out.push_row(c0)?;
        let mut c = c0.to_vec();
        let mut b = vec![0.0; self.ell];
        for k in 0..n_steps {
            let forcing = match controls {
                Some(u) => {
                    mat_vec(&self.restriction, self.ell, u.row(k), &mut b);
                    Some(b.as_slice())
                }
                None => None,
            };
            self.step(&mut c, forcing, gain, k + 1, &mut ws)?;
            out.push_row(&c)?;
        }
        Ok(out)
    }
}

/// Reduced forward solve; rows are coefficient vectors.
pub fn solve_rom_state(
    rom: &ReducedModel,
    t0: f64,
    n_steps: usize,
    c0: &[f64],
    controls: Option<&Trajectory>,
) -> Result<Trajectory> {
    rom.rollout(t0, c0, controls, n_steps, 0.0)
}

/// Discrete adjoint of the reduced scheme, lifted to the grid:
///
/// `M_r (p_j - p_{j+1})/Δt + (A_r + N'(c_j))ᵀ p_j = Δx Ψᵀ y_d - M_r c_j`, `p_N = 0`.
pub fn solve_rom_adjoint(rom: &ReducedModel, coeffs: &Trajectory) -> Result<Trajectory> {
    check_dim("reduced state width", rom.ell, coeffs.width())?;
    let rows = coeffs.len();
    if rows == 0 {
        return Err(Error::InvalidArgument("empty reduced trajectory".into()));
    }
    let l = rom.ell;
    let n = rom.grid.n_interior();
    let inv_dt = 1.0 / rom.params.dt;
    let mut ws = rom.workspace();
    let mut reduced = vec![0.0; rows * l];
    let mut rhs = vec![0.0; l];
    for j in (0..rows - 1).rev() {
        let c = coeffs.row(j);
        rom.nonlinearity(c, &mut ws);
        let (head, tail) = reduced.split_at_mut((j + 1) * l);
        let p_next = &tail[..l];
        for i in 0..l {
            let mut s = rom.target[i];
            let mrow = &rom.mass_f[i * l..(i + 1) * l];
            for ((m, pn), ck) in mrow.iter().zip(p_next).zip(c) {
                s += m * (pn * inv_dt - ck);
            }
            rhs[i] = s;
            // transpose of (M/Δt + A + N')
            for k in 0..l {
                ws.jac[i * l + k] = rom.mass_f[k * l + i] * inv_dt + rom.stiff_f[k * l + i] + ws.jac_nl[k * l + i];
            }
        }
        crate::linalg::solve_small_in_place(&mut ws.jac, &mut rhs, l)?;
        head[j * l..].copy_from_slice(&rhs);
    }
    let mut lifted = Trajectory::with_capacity(coeffs.t0(), coeffs.dt(), n, rows);
    let mut y = vec![0.0; n];
    for pj in reduced.chunks_exact(l) {
        rom.lift_into(pj, &mut y);
        lifted.push_row(&y)?;
    }
    Ok(lifted)
}

impl HorizonModel for ReducedModel {
    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    fn state_dim(&self) -> usize {
        self.rank()
    }

    fn simulate(&self, t0: f64, y0: &[f64], controls: &Trajectory) -> Result<Trajectory> {
        self.rollout(t0, y0, Some(controls), controls.len(), 0.0)
    }

    /// `½‖Ψc - y_d‖²_H = ½cᵀM_r c - cᵀΔxΨᵀy_d + ½‖y_d‖²_H`.
    fn tracking_cost(&self, c: &[f64]) -> f64 {
        let l = self.ell;
        let mut quad = 0.0;
        for i in 0..l {
            let row = &self.mass_f[i * l..(i + 1) * l];
            quad += c[i] * row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
        }
        let lin: f64 = self.target.iter().zip(c).map(|(a, b)| a * b).sum();
        (0.5 * quad - lin + 0.5 * self.target_norm_sq).max(0.0)
    }

    fn adjoint(&self, states: &Trajectory) -> Result<Trajectory> {
        solve_rom_adjoint(self, states)
    }
}

/// Relative deviation between the reduced feedback closed loop and the full
/// model driven by the reduced feedback control.
///
/// The reduced loop applies `-K Ψ c` implicitly; the full model receives
/// `u_k = -K Ψ c_{k+1}` on `(t_k, t_{k+1}]`, which is the same control signal.
pub fn feedback_error_term(
    rom: &ReducedModel,
    t0: f64,
    n_steps: usize,
    y0: &[f64],
    gain: f64,
) -> Result<ErrorTerm> {
    if !(gain >= 0.0 && gain.is_finite()) {
        return Err(Error::InvalidArgument(format!("feedback gain must be >= 0, got {gain}")));
    }
    let c0 = rom.reduce(y0)?;
    let coeffs = rom.rollout(t0, &c0, None, n_steps, gain)?;
    let lifted = rom.lift_trajectory(&coeffs);
    let mut u = Trajectory::with_capacity(t0, rom.params.dt, rom.grid.n_interior(), n_steps);
    for k in 0..n_steps {
        let row: Vec<f64> = lifted.row(k + 1).iter().map(|v| -gain * v).collect();
        u.push_row(&row)?;
    }
    let full = fd_model::solve_state(&rom.params, &rom.grid, t0, n_steps, y0, Some(&u))?;
    rom_error_term(&rom.grid, &full, &lifted)
}

#[cfg(test)]
mod tests {
    use super::super::basis::{collect_snapshots, compute_pod_basis, SnapshotConfig};
    use super::*;
    use crate::fd_model::build_grid;
    use std::f64::consts::PI;

    fn setup(space: InnerProduct) -> (ModelParams, SpatialGrid, PodBasis, Vec<f64>) {
        let g = build_grid(40).unwrap();
        let p = ModelParams::new(1.0, 11.0, 0.01, 0.01).unwrap();
        let y0 = g.sample(|x| 0.2 * (PI * x).sin());
        let s = collect_snapshots(&p, &g, 0.0, 0.5, &y0, &SnapshotConfig::default()).unwrap();
        let b = compute_pod_basis(&s, space, &g).unwrap();
        (p, g, b, y0)
    }

    #[test]
    fn full_rank_rom_reproduces_training_trajectory() {
        for space in [InnerProduct::H, InnerProduct::V] {
            let (p, g, b, y0) = setup(space);
            let rom = build_rom(&b, b.rank().min(12), None, &p, &g).unwrap();
            let c0 = rom.reduce(&y0).unwrap();
            let c = solve_rom_state(&rom, 0.0, 50, &c0, None).unwrap();
            let full = fd_model::solve_state(&p, &g, 0.0, 50, &y0, None).unwrap();
            let lifted = rom.lift_trajectory(&c);
            let err = full.sub(&lifted).unwrap();
            let rel = fd_model::h_norm(&g, err.row(50)) / fd_model::h_norm(&g, full.row(50));
            assert!(rel < 1e-4, "{space:?}: {rel}");
        }
    }

    #[test]
    fn h_basis_mass_is_identity() {
        let (p, g, b, _) = setup(InnerProduct::H);
        let rom = build_rom(&b, 5, None, &p, &g).unwrap();
        assert!((rom.mass() - DMatrix::<f64>::identity(5, 5)).amax() < 1e-12);
        assert!(build_rom(&b, b.rank() + 1, None, &p, &g).is_err());
    }

    #[test]
    fn zero_gain_feedback_error_matches_projection_error() {
        let (p, g, b, y0) = setup(InnerProduct::H);
        let rom = build_rom(&b, 8, None, &p, &g).unwrap();
        let e = feedback_error_term(&rom, 0.0, 30, &y0, 0.0).unwrap();
        assert_eq!(e.values.len(), 31);
        assert!(e.sup < 1e-3, "{}", e.sup);
    }
}
