//! Small dense and banded kernels used by the full-order and reduced solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves a tridiagonal system in place with the Thomas algorithm.
///
/// `lower[i]` multiplies `x[i-1]` in row `i` (entry 0 unused), `upper[i]`
/// multiplies `x[i+1]` (last entry unused). `rhs` is overwritten with the
/// solution; `scratch` must have the same length.
pub fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &mut [f64],
    scratch: &mut [f64],
) -> Result<()> {
    let n = diag.len();
    debug_assert!(lower.len() == n && upper.len() == n && rhs.len() == n && scratch.len() == n);
    if n == 0 {
        return Ok(());
    }
    let scale = diag.iter().fold(0.0f64, |m, d| m.max(d.abs())).max(1.0);
    let tiny = 1e-14 * scale;

    let mut pivot = diag[0];
    if pivot.abs() <= tiny {
        return Err(Error::Singular(format!("tridiagonal pivot 0 = {pivot:e}")));
    }
    scratch[0] = upper[0] / pivot;
    rhs[0] /= pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i] * scratch[i - 1];
        if pivot.abs() <= tiny {
            return Err(Error::Singular(format!("tridiagonal pivot {i} = {pivot:e}")));
        }
        scratch[i] = upper[i] / pivot;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
    Ok(())
}

/// Dense LU solve for the small reduced systems.
pub fn solve_dense(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = a.nrows();
    a.lu()
        .solve(b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular(format!("dense {n}x{n} system")))
}

/// Gaussian elimination with partial pivoting on a row-major `n × n` matrix,
/// in place and without allocation; `b` is overwritten with the solution.
/// Meant for the small reduced systems inside time-stepping loops.
pub fn solve_small_in_place(a: &mut [f64], b: &mut [f64], n: usize) -> Result<()> {
    debug_assert!(a.len() == n * n && b.len() == n);
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tiny = 1e-14 * scale.max(f64::MIN_POSITIVE);
    for k in 0..n {
        let mut piv = k;
        for r in k + 1..n {
            if a[r * n + k].abs() > a[piv * n + k].abs() {
                piv = r;
            }
        }
        if !(a[piv * n + k].abs() > tiny) {
            return Err(Error::Singular(format!("dense {n}x{n} system, pivot {k}")));
        }
        if piv != k {
            let (top, bottom) = a.split_at_mut(piv * n);
            top[k * n..(k + 1) * n].swap_with_slice(&mut bottom[..n]);
            b.swap(k, piv);
        }
        let (head, tail) = a.split_at_mut((k + 1) * n);
        let pivot_row = &head[k * n..];
        let d = pivot_row[k];
        let bk = b[k];
        for (row, br) in tail.chunks_exact_mut(n).zip(&mut b[k + 1..]) {
            let f = row[k] / d;
            if f != 0.0 {
                for (x, p) in row[k + 1..].iter_mut().zip(&pivot_row[k + 1..]) {
                    *x -= f * p;
                }
                *br -= f * bk;
            }
        }
    }
    for k in (0..n).rev() {
        let row = &a[k * n..(k + 1) * n];
        let s: f64 = row[k + 1..].iter().zip(&b[k + 1..]).map(|(p, q)| p * q).sum();
        b[k] = (b[k] - s) / row[k];
    }
    Ok(())
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_matches_dense() {
        let n = 7;
        let lower: Vec<f64> = (0..n).map(|i| -1.0 - 0.1 * i as f64).collect();
        let upper: Vec<f64> = (0..n).map(|i| -0.5 + 0.05 * i as f64).collect();
        let diag: Vec<f64> = (0..n).map(|i| 4.0 + i as f64).collect();
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();

        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = diag[i];
            if i > 0 {
                a[(i, i - 1)] = lower[i];
            }
            if i + 1 < n {
                a[(i, i + 1)] = upper[i];
            }
        }
        let expected = solve_dense(a, &DVector::from_vec(rhs.clone())).unwrap();

        let mut x = rhs;
        let mut scratch = vec![0.0; n];
        solve_tridiagonal(&lower, &diag, &upper, &mut x, &mut scratch).unwrap();
        for i in 0..n {
            assert!((x[i] - expected[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn small_solver_matches_lu() {
        let n = 5;
        let a = DMatrix::from_fn(n, n, |i, j| 1.0 / (1.0 + i as f64 + 2.0 * j as f64) + if i == (j + 2) % n { 3.0 } else { 0.0 });
        let b = DVector::from_fn(n, |i, _| (i as f64).cos());
        let expected = solve_dense(a.clone(), &b).unwrap();
        let mut flat: Vec<f64> = (0..n * n).map(|k| a[(k / n, k % n)]).collect();
        let mut x: Vec<f64> = b.iter().copied().collect();
        solve_small_in_place(&mut flat, &mut x, n).unwrap();
        for i in 0..n {
            assert!((x[i] - expected[i]).abs() < 1e-12);
        }
        let mut z = vec![0.0; 4];
        assert!(solve_small_in_place(&mut z, &mut [1.0, 1.0], 2).is_err());
    }

    #[test]
    fn singular_tridiagonal_reported() {
        let mut x = vec![1.0, 1.0];
        let mut s = vec![0.0; 2];
        let err = solve_tridiagonal(&[0.0, 1.0], &[1.0, 1.0], &[1.0, 0.0], &mut x, &mut s);
        assert!(matches!(err, Err(Error::Singular(_))));
    }
}
