use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use qopen::driving::{fiber_sequence, DrivingKind, DrivingSystem, FiberOrbit};
use qopen::maps::{Interval, IntervalSet, PiecewiseLinearMap, StepFunction};
use qopen::transfer::{
    build_closed_matrix, conformal_sandwich, invariant_density, lambda_closed, push_cocycle, Closed, Engine,
    Grid, GridDensity,
};

fn constant_orbit(backward: usize, forward: usize) -> FiberOrbit {
    let d = DrivingSystem::new(DrivingKind::Constant { symbol: 0 }).unwrap();
    fiber_sequence(&d, backward, forward)
}

fn iid_orbit(k: usize, seed: u64, backward: usize, forward: usize) -> FiberOrbit {
    let d = DrivingSystem::new(DrivingKind::Iid {
        p: vec![1.0 / k as f64; k],
        seed,
    })
    .unwrap();
    fiber_sequence(&d, backward, forward)
}

#[test]
fn push_doubling_unit_mass() {
    let e = Engine::new(vec![PiecewiseLinearMap::doubling()], Grid::new(16).unwrap(), 1.0).unwrap();
    let orbit = constant_orbit(0, 20);
    let p = push_cocycle(&e, &orbit, &GridDensity::constant(e.grid(), 1.0), 20).unwrap();
    for lm in &p.log_mass {
        assert!(lm.abs() < 1e-15);
    }
}

#[test]
fn push_beta3_triples_at_r0() {
    let e = Engine::new(vec![PiecewiseLinearMap::beta(3.0).unwrap()], Grid::new(9).unwrap(), 0.0).unwrap();
    let orbit = constant_orbit(0, 30);
    let p = push_cocycle(&e, &orbit, &GridDensity::constant(e.grid(), 1.0), 30).unwrap();
    for (k, lm) in p.log_mass.iter().enumerate() {
        assert!((lm - k as f64 * 3f64.ln()).abs() < 1e-12, "step {k}");
    }
}

/// Perron vector of one closed matrix by a direct linear solve: replace one
/// row of `(M - I) v = 0` with the normalization `Σ v_i / N = 1`.
fn perron_vector_unit_eigenvalue(map: &PiecewiseLinearMap, n: usize) -> Vec<f64> {
    let m = build_closed_matrix(map, 1.0, Grid::new(n).unwrap(), 0);
    let dense = m.to_dense();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            a[(j, i)] = dense[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    let mut b = DVector::<f64>::zeros(n);
    for i in 0..n {
        a[(n - 1, i)] = 1.0 / n as f64;
    }
    b[n - 1] = 1.0;
    let v = a.lu().solve(&b).expect("singular");
    v.iter().copied().collect()
}

#[test]
fn stationary_density_matches_perron_vector() {
    // β = 2.5 has a non-constant invariant density; r = 1 keeps λ = 1.
    let map = PiecewiseLinearMap::beta(2.5).unwrap();
    let n = 40;
    let oracle = perron_vector_unit_eigenvalue(&map, n);
    let e = Engine::new(vec![map], Grid::new(n).unwrap(), 1.0).unwrap();
    let orbit = constant_orbit(80, 0);
    let phi = invariant_density(&e, &orbit, 80).unwrap();
    for (a, b) in phi.values.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
    assert!(phi.values.iter().any(|&v| (v - 1.0).abs() > 0.05));
}

#[test]
fn sandwich_examples() {
    let orbit = constant_orbit(0, 80);
    let d = Engine::new(vec![PiecewiseLinearMap::doubling()], Grid::new(8).unwrap(), 1.0).unwrap();
    let f = GridDensity::indicator(d.grid(), &IntervalSet::single(0.0, 0.5));
    let s = conformal_sandwich(&d, &orbit, &f, 60).unwrap();
    assert!(s.lo >= 0.5 - 1e-6 && s.hi <= 0.5 + 1e-6);

    let one = GridDensity::constant(d.grid(), 1.0);
    let s = conformal_sandwich(&d, &orbit, &one, 60).unwrap();
    assert_eq!((s.lo, s.hi), (1.0, 1.0));

    let t = Engine::new(vec![PiecewiseLinearMap::linear_full(3).unwrap()], Grid::new(9).unwrap(), 0.0).unwrap();
    let f = GridDensity::indicator(t.grid(), &IntervalSet::single(0.0, 1.0 / 3.0));
    let s = conformal_sandwich(&t, &orbit, &f, 60).unwrap();
    assert!((s.lo - 1.0 / 3.0).abs() < 1e-12 && (s.hi - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn invariant_density_examples() {
    let orbit = constant_orbit(60, 0);
    let d = Engine::new(vec![PiecewiseLinearMap::doubling()], Grid::new(32).unwrap(), 1.0).unwrap();
    let phi = invariant_density(&d, &orbit, 50).unwrap();
    assert!(phi.values.iter().all(|v| (v - 1.0).abs() < 1e-12));

    // Grid path (not the Lebesgue shortcut): push 1 backward-limit style for
    // a random ThreeBranch cocycle.
    let e = Engine::new(
        vec![PiecewiseLinearMap::three_branch(2.0).unwrap(), PiecewiseLinearMap::three_branch(4.0).unwrap()],
        Grid::new(64).unwrap(),
        1.0,
    )
    .unwrap();
    let orbit = iid_orbit(2, 5, 60, 0);
    let p = e
        .push_cocycle(&orbit, -50, &GridDensity::constant(e.grid(), 1.0), 50, &Closed)
        .unwrap();
    assert!(p.densities[50].values.iter().all(|v| (v - 1.0).abs() < 1e-12));

    let b3 = Engine::new(vec![PiecewiseLinearMap::beta(3.0).unwrap()], Grid::new(27).unwrap(), 1.0).unwrap();
    let orbit = constant_orbit(60, 0);
    let p = b3
        .push_cocycle(&orbit, -50, &GridDensity::constant(b3.grid(), 1.0), 50, &Closed)
        .unwrap();
    assert!(p.densities[50].values.iter().all(|v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn invariant_density_reports_non_convergence() {
    let map = PiecewiseLinearMap::beta(2.5).unwrap();
    let e = Engine::new(vec![map], Grid::new(200).unwrap(), 1.0).unwrap();
    let orbit = constant_orbit(3, 0);
    let err = e.density_at(&orbit, 0, 3, &Closed).unwrap_err();
    assert!(matches!(err, qopen::Error::NonConvergence { .. }), "{err}");
}

#[test]
fn lambda_closed_examples() {
    let orbit = constant_orbit(60, 200);
    // r = 1: the transfer operator preserves integrals, even for a map that
    // does not preserve Lebesgue.
    let e = Engine::new(vec![PiecewiseLinearMap::beta(2.5).unwrap()], Grid::new(50).unwrap(), 1.0).unwrap();
    let run = lambda_closed(&e, &orbit, 50, 20).unwrap();
    for l in run.lambdas() {
        assert!((l - 1.0).abs() < 1e-10);
    }
    for (k, t) in [(2usize, 0.3), (3, 0.5), (4, 0.0)] {
        let e = Engine::new(vec![PiecewiseLinearMap::linear_full(k).unwrap()], Grid::new(k * k).unwrap(), t).unwrap();
        let run = lambda_closed(&e, &orbit, 50, 20).unwrap();
        let want = k as f64 * (k as f64).powf(-t);
        for l in run.lambdas() {
            assert!((l - want).abs() < 1e-12 * want);
        }
    }
    let e = Engine::new(vec![PiecewiseLinearMap::beta(3.0).unwrap()], Grid::new(9).unwrap(), 0.0).unwrap();
    let run = lambda_closed(&e, &orbit, 50, 20).unwrap();
    for l in run.lambdas() {
        assert!((l - 3.0).abs() < 1e-12);
    }
}

fn random_cell_function(n: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    // piecewise constant on a coarse sub-grid, nonnegative
    let pieces = rng.random_range(1..=8usize);
    let vals: Vec<f64> = (0..pieces).map(|_| rng.random_range(0.0..2.0)).collect();
    (0..n).map(|i| vals[i * pieces / n]).collect()
}

#[test]
fn duality_residual_on_random_panel() {
    // Non-Lebesgue conformal measure: r = 1/2 with slopes 4, 2, 4.
    let e = Engine::new(
        vec![PiecewiseLinearMap::three_branch(2.0).unwrap(), PiecewiseLinearMap::linear_full(4).unwrap()],
        Grid::new(16).unwrap(),
        0.5,
    )
    .unwrap();
    let orbit = iid_orbit(2, 17, 60, 200);
    let run = lambda_closed(&e, &orbit, 50, 3).unwrap();
    for seed in 0..20u64 {
        for j in 0..3i64 {
            let f = random_cell_function(16, seed * 31 + j as u64);
            let lam = run.log_lambda[j as usize].exp();
            let s0 = e.conformal_sandwich(&orbit, j, &f, 60).unwrap();
            let lf = e.step(&orbit, j, &f, None).unwrap();
            let s1 = e.conformal_sandwich(&orbit, j + 1, &lf, 60).unwrap();
            let residual = (s1.mid() - lam * s0.mid()).abs();
            let tol = (10.0 * (s1.width() + lam * s0.width())).max(1e-14 * (1.0 + s1.mid().abs()));
            assert!(residual < tol, "seed {seed} site {j}: residual {residual:e} tol {tol:e}");
        }
    }
}

#[test]
fn equivariance_residual_after_burn_in() {
    let e = Engine::new(
        vec![PiecewiseLinearMap::three_branch(2.0).unwrap(), PiecewiseLinearMap::beta(3.0).unwrap()],
        Grid::new(48).unwrap(),
        0.5,
    )
    .unwrap();
    let orbit = iid_orbit(2, 3, 80, 200);
    let run = lambda_closed(&e, &orbit, 60, 5).unwrap();
    let phi0 = e.density_at(&orbit, 0, 60, &Closed).unwrap();
    let phi1 = e.density_at(&orbit, 1, 61, &Closed).unwrap();
    let lphi = e.step(&orbit, 0, &phi0.values, None).unwrap();
    let lam = run.log_lambda[0].exp();
    let resid = lphi
        .iter()
        .zip(&phi1.values)
        .fold(0.0f64, |m, (a, b)| m.max((a - lam * b).abs()))
        / phi0.sup_abs();
    assert!(resid < 1e-6, "{resid:e}");
}

#[test]
fn cross_engine_exactness_on_aligned_grids() {
    let maps = vec![PiecewiseLinearMap::doubling(), PiecewiseLinearMap::three_branch(2.0).unwrap()];
    let grid = Grid::new(64).unwrap();
    let orbit = iid_orbit(2, 9, 0, 8);
    let sets = [
        IntervalSet::single(0.0, 0.25),
        IntervalSet::from_intervals(vec![Interval::new(0.125, 0.375).unwrap(), Interval::new(0.5, 0.5625).unwrap()]),
    ];
    let targets = [IntervalSet::single(0.25, 0.75), IntervalSet::single(0.0, 0.0625)];
    for r in [0.0, 0.5, 1.0] {
        let e = Engine::new(maps.clone(), grid, r).unwrap();
        for s in &sets {
            for b in &targets {
                for n in 1..=5usize {
                    // matrix side: ∫_B L^n 1_S
                    let mut f = GridDensity::indicator(grid, s).values;
                    for k in 0..n {
                        f = e.step(&orbit, k as i64, &f, None).unwrap();
                    }
                    let matrix = GridDensity::from_values(f).integral_over(b);
                    // interval side: weighted pullback of B intersected with S
                    let mut pieces: Vec<(Interval, f64)> =
                        b.intervals().iter().map(|iv| (*iv, 1.0)).collect();
                    for k in (0..n).rev() {
                        pieces = e.map(orbit.symbol(k as i64)).weighted_pullback(&pieces, r);
                    }
                    let interval: f64 = pieces
                        .iter()
                        .map(|(iv, w)| w * IntervalSet::single(iv.lo, iv.hi).intersection(s).measure())
                        .sum();
                    assert!(
                        (matrix - interval).abs() < 1e-12 * (1.0 + interval),
                        "r={r} n={n}: {matrix} vs {interval}"
                    );
                }
            }
        }
    }
}

#[test]
fn exact_matrix_agrees_with_step_engine_along_orbit() {
    let maps = vec![PiecewiseLinearMap::beta(3.0).unwrap(), PiecewiseLinearMap::beta(5.0).unwrap()];
    let e = Engine::new(maps.clone(), Grid::new(15).unwrap(), 1.0).unwrap();
    assert!(e.exact());
    let orbit = iid_orbit(2, 1, 0, 12);
    let mut f = random_cell_function(15, 4);
    let mut g = StepFunction::from_cells(&f);
    for k in 0..12 {
        f = e.step(&orbit, k, &f, None).unwrap();
        g = g.transfer(&maps[orbit.symbol(k)], 1.0);
    }
    for (a, b) in f.iter().zip(g.cell_averages(15)) {
        assert!((a - b).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sandwich_lower_bound_nondecreasing(seed in 0u64..1000, fseed in 0u64..1000, r in 0.0f64..1.5) {
        let e = Engine::new(
            vec![PiecewiseLinearMap::three_branch(2.0).unwrap(), PiecewiseLinearMap::linear_full(4).unwrap()],
            Grid::new(16).unwrap(),
            r,
        ).unwrap();
        let orbit = iid_orbit(2, seed, 0, 80);
        let f = random_cell_function(16, fseed);
        let s = e.conformal_sandwich(&orbit, 0, &f, 40).unwrap();
        for w in s.history.windows(2) {
            prop_assert!(w[1].0 >= w[0].0 - 1e-14 * (1.0 + w[0].0.abs()));
            prop_assert!(w[1].1 <= w[0].1 + 1e-14 * (1.0 + w[0].1.abs()));
        }
        prop_assert!(s.lo <= s.hi);
    }

    #[test]
    fn matrices_are_nonnegative(which in 0usize..4, n in 2usize..64, r in 0.0f64..2.0) {
        let map = [
            PiecewiseLinearMap::doubling(),
            PiecewiseLinearMap::beta(2.5).unwrap(),
            PiecewiseLinearMap::three_branch(3.0).unwrap(),
            PiecewiseLinearMap::beta(5.0).unwrap(),
        ][which].clone();
        let m = build_closed_matrix(&map, r, Grid::new(n).unwrap(), 0);
        for i in 0..n {
            for (_, v) in m.column(i) {
                prop_assert!(v > 0.0);
            }
        }
        // At r = 1 every column carries its cell's unit mass.
        if r == 1.0 {
            for i in 0..n {
                prop_assert!((m.column_sum(i) - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn iid_orbits_are_deterministic_across_threads() {
    let d = DrivingSystem::new(DrivingKind::Iid { p: vec![0.5, 0.5], seed: 42 }).unwrap();
    let a = fiber_sequence(&d, 100, 1000);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let b = pool.install(|| fiber_sequence(&d, 100, 1000));
    assert_eq!(a, b);
}
