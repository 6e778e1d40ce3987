use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::fd_model::ModelParams;
use crate::trajectory::Trajectory;

/// Relative singular-value cutoff for the nonlinearity basis.
const SV_REL_THRESHOLD: f64 = 1e-12;

/// Interpolation data for the cubic part `ρ y³` of the reaction term.
#[derive(Clone, Debug)]
pub struct DeimData {
    /// `n × m` orthonormal (Euclidean) basis of the nonlinearity snapshots.
    pub modes: DMatrix<f64>,
    /// Greedily selected interpolation nodes, one per mode.
    pub indices: Vec<usize>,
    pub singular_values: Vec<f64>,
}

impl DeimData {
    pub fn rank(&self) -> usize {
        self.indices.len()
    }

    /// `U (Pᵀ U)⁻¹`, the `n × m` interpolation operator.
    pub fn interpolation_operator(&self) -> Result<DMatrix<f64>> {
        let m = self.rank();
        let mut pu = DMatrix::zeros(m, m);
        for (r, &idx) in self.indices.iter().enumerate() {
            for c in 0..m {
                pu[(r, c)] = self.modes[(idx, c)];
            }
        }
        let inv = pu
            .try_inverse()
            .ok_or_else(|| Error::Singular("DEIM interpolation matrix".into()))?;
        Ok(&self.modes * inv)
    }
}

/// `ρ y³` evaluated on every row of a state trajectory.
pub fn nonlinearity_snapshots(params: &ModelParams, states: &Trajectory) -> Trajectory {
    let rho = params.rho;
    states.map(|v| rho * v * v * v)
}

/// POD basis of the nonlinearity snapshots (Euclidean SVD) and greedy
/// interpolation-index selection.
pub fn build_deim(snapshots: &Trajectory, ell_deim: usize) -> Result<DeimData> {
    let n = snapshots.width();
    let m = snapshots.len();
    if ell_deim == 0 {
        return Err(Error::InvalidArgument("DEIM rank must be positive".into()));
    }
    let mat = DMatrix::from_fn(n, m, |i, j| snapshots.row(j)[i]);
    let svd = mat.svd(true, false);
    let u = svd.u.ok_or_else(|| Error::Singular("SVD of nonlinearity snapshots".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s_max = order.first().map_or(0.0, |&k| svd.singular_values[k]);
    if !(s_max > 0.0) {
        return Err(Error::ZeroSnapshots);
    }
    let available = order
        .iter()
        .take_while(|&&k| svd.singular_values[k] > SV_REL_THRESHOLD * s_max)
        .count();
    if ell_deim > available {
        return Err(Error::RankTooLarge {
            requested: ell_deim,
            available,
        });
    }
    let mut modes = DMatrix::zeros(n, ell_deim);
    let mut singular_values = Vec::with_capacity(ell_deim);
    for (c, &k) in order.iter().take(ell_deim).enumerate() {
        modes.set_column(c, &u.column(k));
        singular_values.push(svd.singular_values[k]);
    }
    let indices = greedy_indices(&modes)?;
    Ok(DeimData {
        modes,
        indices,
        singular_values,
    })
}

fn argmax_abs(v: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in v.enumerate() {
        if x.abs() > best.1 {
            best = (i, x.abs());
        }
    }
    best.0
}

/// Each new index maximizes the residual of interpolating the next mode from
/// the previous ones at the already chosen nodes.
fn greedy_indices(modes: &DMatrix<f64>) -> Result<Vec<usize>> {
    let m = modes.ncols();
    let mut idx = vec![argmax_abs(modes.column(0).iter().copied())];
    for l in 1..m {
        let mut pu = DMatrix::zeros(l, l);
        let mut rhs = nalgebra::DVector::zeros(l);
        for (r, &p) in idx.iter().enumerate() {
            for c in 0..l {
                pu[(r, c)] = modes[(p, c)];
            }
            rhs[r] = modes[(p, l)];
        }
        let coef = crate::linalg::solve_dense(pu, &rhs)?;
        let residual = modes.column(l) - modes.columns(0, l) * coef;
        let next = argmax_abs(residual.iter().copied());
        if idx.contains(&next) {
            return Err(Error::Singular(format!("DEIM index {next} selected twice")));
        }
        idx.push(next);
    }
    check_dim("DEIM indices", m, idx.len())?;
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_is_exact_on_the_basis() {
        let n = 40;
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|k| {
                (0..n)
                    .map(|i| {
                        let x = (i + 1) as f64 / (n + 1) as f64;
                        (-(k as f64) * x).exp() * x * (1.0 - x)
                    })
                    .collect()
            })
            .collect();
        let t = Trajectory::from_rows(0.0, 0.1, &rows).unwrap();
        let d = build_deim(&t, 3).unwrap();
        assert_eq!(d.indices.len(), 3);
        let op = d.interpolation_operator().unwrap();
        // U (PᵀU)⁻¹ Pᵀ U = U.
        for c in 0..3 {
            let sampled: Vec<f64> = d.indices.iter().map(|&p| d.modes[(p, c)]).collect();
            let rec = &op * nalgebra::DVector::from_vec(sampled);
            for i in 0..n {
                assert!((rec[i] - d.modes[(i, c)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rank_limited_by_snapshots() {
        let rows = vec![vec![1.0, 2.0, 3.0, 4.0]; 5];
        let t = Trajectory::from_rows(0.0, 0.1, &rows).unwrap();
        assert!(build_deim(&t, 1).is_ok());
        assert!(matches!(build_deim(&t, 2), Err(Error::RankTooLarge { .. })));
    }
}
