//! Randomized invariants: box projection, POD orthonormality and energy
//! identity, the V-projector, adjoint gradients against central differences
//! and the structure of the suboptimality estimate.

use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use podmpc::fd_model::{build_grid, h_norm_sq, solve_state, v_inner, v_norm_sq, ModelParams, SpatialGrid};
use podmpc::openloop::{
    horizon_cost, l2_inner, project_box, reduced_gradient, FullModel, HorizonModel, OpenLoopProblem,
};
use podmpc::pod_rom::{
    build_deim, build_rom, collect_snapshots, compute_pod_basis, nonlinearity_snapshots, pod_energy,
    project_onto_basis, InnerProduct, SnapshotConfig, SnapshotRole, SnapshotSet,
};
use podmpc::stability::{
    alpha_formula, alpha_horizon, alpha_horizon_rom, controllability_constants, minimal_horizon,
};
use podmpc::Trajectory;

fn random_trajectory(rng: &mut ChaCha8Rng, rows: usize, width: usize, scale: f64) -> Trajectory {
    let data: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..width).map(|_| scale * rng.gen_range(-1.0..1.0)).collect())
        .collect();
    Trajectory::from_rows(0.0, 0.01, &data).unwrap()
}

/// Smooth random state: a few sine modes with random amplitudes.
fn random_state(rng: &mut ChaCha8Rng, grid: &SpatialGrid, amplitude: f64) -> Vec<f64> {
    let a: Vec<f64> = (0..4).map(|_| amplitude * rng.gen_range(-1.0..1.0)).collect();
    grid.sample(|x| {
        a.iter()
            .enumerate()
            .map(|(j, aj)| aj * ((j + 1) as f64 * PI * x).sin() / (j + 1) as f64)
            .sum()
    })
}

/// Decaying mixture of random spatial profiles, as snapshot data.
fn random_snapshots(rng: &mut ChaCha8Rng, grid: &SpatialGrid, rows: usize) -> SnapshotSet {
    let n = grid.n_interior();
    let profiles: Vec<Vec<f64>> = (0..6).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let rates: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..20.0)).collect();
    let data: Vec<Vec<f64>> = (0..rows)
        .map(|k| {
            let t = k as f64 * 0.01;
            (0..n)
                .map(|i| profiles.iter().zip(&rates).map(|(p, r)| p[i] * (-r * t).exp()).sum())
                .collect()
        })
        .collect();
    let traj = Trajectory::from_rows(0.0, 0.01, &data).unwrap();
    SnapshotSet::from_trajectory(SnapshotRole::State, traj, 0.01).unwrap()
}

fn gram_error(basis: &podmpc::pod_rom::PodBasis, grid: &SpatialGrid) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..basis.rank() {
        let a = basis.mode(i);
        for j in 0..basis.rank() {
            let b = basis.mode(j);
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((basis.space.inner(grid, &a, &b) - target).abs());
        }
    }
    worst
}

/// `(Ĵ(u + εδ) - Ĵ(u - εδ)) / 2ε` against `⟨g, δ⟩_{L²}`.
fn gradient_mismatch<M: HorizonModel>(model: &M, y0: Vec<f64>, u: &Trajectory, dir: &Trajectory) -> f64 {
    let problem = OpenLoopProblem::new(model, 0.0, u.len(), y0).unwrap();
    let y = model.simulate(0.0, &problem.y0, u).unwrap();
    let p = model.adjoint(&y).unwrap();
    let g = reduced_gradient(model.params().lambda, u, &p).unwrap();
    let eps = 1e-5;
    let shifted = |s: f64| {
        let mut v = u.clone();
        for (a, d) in v.as_mut_slice().iter_mut().zip(dir.as_slice()) {
            *a += s * eps * d;
        }
        horizon_cost(&problem, &v).unwrap()
    };
    let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps);
    let analytic = l2_inner(model.grid(), &g, dir);
    (fd - analytic).abs() / analytic.abs().max(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn box_projection_is_feasible_and_idempotent(seed in any::<u64>(), lo in -2.0..0.0f64, hi in 0.0..2.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = ModelParams::with_bounds(1.0, 11.0, 0.01, lo, hi, 0.01).unwrap();
        let u = random_trajectory(&mut rng, 5, 7, 3.0);
        let once = project_box(&p, &u);
        prop_assert!(once.as_slice().iter().all(|v| (lo..=hi).contains(v)));
        let twice = project_box(&p, &once);
        prop_assert_eq!(twice.as_slice(), once.as_slice());
        for (a, b) in u.as_slice().iter().zip(once.as_slice()) {
            if (lo..=hi).contains(a) {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn pod_modes_orthonormal_and_energy_identity(seed in any::<u64>(), n in 10usize..40, v_space in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = build_grid(n).unwrap();
        let snaps = random_snapshots(&mut rng, &grid, 30);
        let space = if v_space { InnerProduct::V } else { InnerProduct::H };
        let basis = compute_pod_basis(&snaps, space, &grid).unwrap();
        prop_assert!(gram_error(&basis, &grid) <= 1e-10);
        prop_assert!(basis.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        let total = basis.total_energy;
        for ell in 0..=basis.rank() {
            let tail = pod_energy(&basis, ell).unwrap();
            let residual = basis.projection_residual(&snaps, &grid, ell).unwrap();
            // Relative agreement where the tail is resolvable; below that
            // both are rounding noise of the total energy.
            let scale = tail.max(1e-6 * total);
            prop_assert!((tail - residual).abs() <= 1e-8 * scale, "ell={} tail={} residual={}", ell, tail, residual);
        }
    }

    #[test]
    fn v_projector_is_idempotent_and_orthogonal(seed in any::<u64>(), ell in 1usize..6, v_space in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = build_grid(30).unwrap();
        let snaps = random_snapshots(&mut rng, &grid, 30);
        let space = if v_space { InnerProduct::V } else { InnerProduct::H };
        let basis = compute_pod_basis(&snaps, space, &grid).unwrap();
        let ell = ell.min(basis.rank());
        let phi: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let once = project_onto_basis(&basis, &grid, ell, &phi).unwrap();
        let twice = project_onto_basis(&basis, &grid, ell, &once).unwrap();
        let scale = v_norm_sq(&grid, &phi).sqrt();
        let diff: Vec<f64> = once.iter().zip(&twice).map(|(a, b)| a - b).collect();
        prop_assert!(v_norm_sq(&grid, &diff).sqrt() <= 1e-10 * scale);
        let resid: Vec<f64> = phi.iter().zip(&once).map(|(a, b)| a - b).collect();
        for i in 0..ell {
            let m = basis.mode(i);
            let mn = v_norm_sq(&grid, &m).sqrt();
            prop_assert!(v_inner(&grid, &resid, &m).abs() <= 1e-10 * scale * mn);
        }
    }

    #[test]
    fn discrete_poincare_inequality(seed in any::<u64>(), n in 5usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = build_grid(n).unwrap();
        let dx = grid.dx();
        let lam = 4.0 / (dx * dx) * (PI * dx / 2.0).sin().powi(2);
        let phi: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        prop_assert!(h_norm_sq(&grid, &phi) * lam <= v_norm_sq(&grid, &phi) * (1.0 + 1e-12));
    }

    #[test]
    fn deim_is_exact_at_its_nodes(seed in any::<u64>(), m in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = build_grid(40).unwrap();
        let params = ModelParams::new(1.0, 11.0, 0.01, 0.01).unwrap();
        let y0 = random_state(&mut rng, &grid, 0.5);
        let states = solve_state(&params, &grid, 0.0, 30, &y0, None).unwrap();
        let deim = build_deim(&nonlinearity_snapshots(&params, &states), m).unwrap();
        let op = deim.interpolation_operator().unwrap();
        let f: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sampled = nalgebra::DVector::from_iterator(deim.rank(), deim.indices.iter().map(|&i| f[i]));
        let approx = &op * sampled;
        for &i in &deim.indices {
            prop_assert!((approx[i] - f[i]).abs() <= 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn full_model_gradient_matches_central_differences(seed in any::<u64>(), steps in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = build_grid(25).unwrap();
        let params = ModelParams::new(rng.gen_range(0.5..1.0), rng.gen_range(5.0..12.0), 0.01, 0.01).unwrap();
        let model = FullModel::new(params, grid.clone()).unwrap();
        let y0 = random_state(&mut rng, &grid, 0.4);
        let u = random_trajectory(&mut rng, steps, 25, 0.5);
        let dir = random_trajectory(&mut rng, steps, 25, 1.0);
        let rel = gradient_mismatch(&model, y0, &u, &dir);
        prop_assert!(rel <= 1e-4, "relative mismatch {}", rel);
    }

    #[test]
    fn reduced_model_gradient_matches_central_differences(seed in any::<u64>(), deim in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = build_grid(30).unwrap();
        let params = ModelParams::new(1.0, 11.0, 0.01, 0.01).unwrap();
        let y0 = random_state(&mut rng, &grid, 0.3);
        let snaps = collect_snapshots(&params, &grid, 0.0, 0.3, &y0, &SnapshotConfig::default()).unwrap();
        let basis = compute_pod_basis(&snaps, InnerProduct::H, &grid).unwrap();
        let nl = nonlinearity_snapshots(&params, &snaps.block(SnapshotRole::State).unwrap().trajectory);
        let deim = if deim { Some(build_deim(&nl, 3).unwrap()) } else { None };
        let rom = build_rom(&basis, 4.min(basis.rank()), deim.as_ref(), &params, &grid).unwrap();
        let c0 = rom.reduce(&y0).unwrap();
        let u = random_trajectory(&mut rng, 6, 30, 0.5);
        let dir = random_trajectory(&mut rng, 6, 30, 1.0);
        let rel = gradient_mismatch(&rom, c0, &u, &dir);
        prop_assert!(rel <= 1e-4, "relative mismatch {}", rel);
    }

    #[test]
    fn rom_error_never_shortens_the_horizon(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = build_grid(99).unwrap();
        let params = ModelParams::with_bounds(1.0, 11.0, 0.01, -0.3, 0.0, 0.01).unwrap();
        let y0 = grid.sample(|x| 0.2 * (PI * x).sin());
        let mut errs: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..0.02)).collect();
        errs.push(0.0);
        errs.sort_by(f64::total_cmp);
        let horizons: Vec<usize> = errs
            .iter()
            .map(|&e| minimal_horizon(&params, &y0, Some(e), 200).unwrap().n_min)
            .collect();
        prop_assert!(horizons.windows(2).all(|w| w[0] <= w[1]), "{:?} at {:?}", horizons, errs);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rom_alpha_reduces_to_alpha_and_degrades_with_error(
        theta in 0.5..1.0f64,
        rho in 5.0..12.0f64,
        k_extra in 0.01..8.0f64,
        n in 2usize..80,
        err in 1e-6..0.1f64,
    ) {
        let params = ModelParams::new(theta, rho, 0.01, 0.01).unwrap();
        let k = (rho - theta * PI * PI).max(0.0) + k_extra;
        let c = controllability_constants(&params, k).unwrap();
        let a = alpha_horizon(&c, n).unwrap();
        prop_assert_eq!(alpha_horizon_rom(&c, n, 0.0).unwrap(), a);
        prop_assert!(alpha_horizon_rom(&c, n, err).unwrap() <= a);
    }

    /// Halving Δt while doubling γ and keeping λK² fixed leaves `(C, σ)`
    /// unchanged, and with them `α`.
    #[test]
    fn alpha_depends_only_on_overshoot_sigma_and_horizon(
        theta in 0.5..1.0f64,
        rho in 5.0..12.0f64,
        k_extra in 0.5..6.0f64,
        n in 2usize..80,
    ) {
        let p1 = ModelParams::new(theta, rho, 0.01, 0.01).unwrap();
        let k1 = (rho - theta * PI * PI).max(0.0) + k_extra;
        let c1 = controllability_constants(&p1, k1).unwrap();
        let k2 = 2.0 * c1.gamma - theta * PI * PI + rho;
        let lambda2 = 0.01 * k1 * k1 / (k2 * k2);
        let p2 = ModelParams::new(theta, rho, lambda2, 0.005).unwrap();
        let c2 = controllability_constants(&p2, k2).unwrap();
        prop_assert!((c1.overshoot - c2.overshoot).abs() <= 1e-12 * c1.overshoot);
        prop_assert!((c1.sigma_step - c2.sigma_step).abs() <= 1e-12);
        let a1 = alpha_horizon(&c1, n).unwrap();
        let a2 = alpha_horizon(&c2, n).unwrap();
        prop_assert!((a1 - a2).abs() <= 1e-9 * a1.abs().max(1.0), "{} vs {}", a1, a2);
        let direct = alpha_formula(c1.overshoot, c1.sigma_step, n).unwrap();
        prop_assert_eq!(direct, a1);
    }
}
