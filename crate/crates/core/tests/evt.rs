use qopen::driving::{fiber_sequence, DrivingKind, DrivingSystem, FiberOrbit};
use qopen::evt::{
    gumbel_prediction, gumbel_prediction_constant, hitting_time_mc, ks_exponential, solve_thresholds,
    survivor_probability_curve, CurveGrid, HittingSettings, ObservationFunction, StepSampler,
};
use qopen::maps::{IntervalSet, PiecewiseLinearMap, StepFunction};
use qopen::open::HoleField;
use qopen::perturb::{theta_field, ThetaEstimate, ThetaField};
use qopen::transfer::{Closed, Engine, Grid};

fn constant_driving() -> DrivingSystem {
    DrivingSystem::new(DrivingKind::Constant { symbol: 0 }).unwrap()
}

fn iid_driving(seed: u64) -> DrivingSystem {
    DrivingSystem::new(DrivingKind::Iid { p: vec![0.5, 0.5], seed }).unwrap()
}

fn orbit(d: &DrivingSystem, backward: usize, forward: usize) -> FiberOrbit {
    fiber_sequence(d, backward, forward)
}

fn one() -> StepFunction {
    StepFunction::constant(1.0)
}

#[test]
fn one_sided_threshold_under_lebesgue() {
    let obs = [ObservationFunction::NegDistance { center: 0.0 }];
    let s = solve_thresholds(&obs, &[one()], &[1.0], &[10, 100, 1000], None).unwrap();
    for (row, n) in s.entries.iter().zip([10.0, 100.0, 1000.0]) {
        let e = &row[0];
        let iv = e.hole.intervals();
        assert_eq!(iv.len(), 1);
        assert_eq!(iv[0].lo, 0.0);
        assert!((iv[0].hi - 1.0 / n).abs() < 1e-15);
        assert!(e.xi.abs() < 1e-10);
        assert!((e.z + 1.0 / n).abs() < 1e-15);
    }
}

#[test]
fn centered_threshold_under_lebesgue() {
    let obs = [ObservationFunction::NegDistance { center: 0.5 }];
    let t = 0.7;
    let s = solve_thresholds(&obs, &[one()], &[t], &[64, 1024], None).unwrap();
    for row in &s.entries {
        let e = &row[0];
        let n = e.n as f64;
        let iv = e.hole.intervals()[0];
        assert!((iv.lo - (0.5 - t / (2.0 * n))).abs() < 1e-15);
        assert!((iv.hi - (0.5 + t / (2.0 * n))).abs() < 1e-15);
        assert!(e.xi.abs() < 1e-10);
    }
}

#[test]
fn log_distance_and_asymmetric_observations() {
    let log = ObservationFunction::NegLogDistance { center: 0.25 };
    let s = solve_thresholds(&[log], &[one()], &[1.0], &[100], None).unwrap();
    let e = &s.entries[0][0];
    assert!((e.z - (-(0.005f64).ln())).abs() < 1e-9);
    assert!((log.evaluate(0.25 + 0.004) - (-(0.004f64).ln())).abs() < 1e-12);

    let custom = ObservationFunction::Custom {
        center: 0.4,
        left_slope: 1.0,
        right_slope: 3.0,
    };
    let s = solve_thresholds(&[custom], &[one()], &[1.0], &[100], None).unwrap();
    let iv = s.entries[0][0].hole.intervals()[0];
    // left reach three times the right reach
    assert!(((0.4 - iv.lo) - 3.0 * (iv.hi - 0.4)).abs() < 1e-12);
    assert!((iv.hi - iv.lo - 0.01).abs() < 1e-12);
}

#[test]
fn snapped_threshold_reports_xi() {
    let obs = [ObservationFunction::NegDistance { center: 0.0 }];
    let grid = Grid::new(1000).unwrap();
    let s = solve_thresholds(&obs, &[one()], &[1.0], &[300], Some(grid)).unwrap();
    let e = &s.entries[0][0];
    assert!(grid.aligned_with_set(&e.hole));
    assert!((e.xi - (300.0 * e.mass - 1.0)).abs() < 1e-12);
    assert!(e.xi.abs() <= 300.0 / 1000.0 + 1e-12);
    assert!(e.xi.abs() > 1e-3);
}

#[test]
fn threshold_with_nonuniform_density() {
    let map = PiecewiseLinearMap::beta(2.5).unwrap();
    let e = Engine::new(vec![map], Grid::new(200).unwrap(), 1.0).unwrap();
    let o = orbit(&constant_driving(), 100, 0);
    let phi = e.density_at(&o, 0, 80, &Closed).unwrap().to_step();
    let obs = [ObservationFunction::NegDistance { center: 0.3 }];
    let s = solve_thresholds(&obs, &[phi.clone()], &[2.0], &[50, 500], None).unwrap();
    for row in &s.entries {
        let n = row[0].n as f64;
        assert!((phi.integral_over(&row[0].hole) - 2.0 / n).abs() < 1e-10 / n);
    }
    assert!(s.entries[1][0].hole.is_subset_of(&s.entries[0][0].hole));
}

#[test]
fn oversized_targets_are_refused() {
    let obs = [ObservationFunction::NegDistance { center: 0.5 }];
    let err = solve_thresholds(&obs, &[one()], &[1.0], &[1], None).unwrap_err();
    assert!(matches!(err, qopen::Error::SmallHoleViolated(_)), "{err}");
}

#[test]
fn gumbel_predictions() {
    let o = orbit(&iid_driving(1), 0, 100);
    let field = ThetaField {
        eps: 0.0,
        k_max: 0,
        raw: vec![1.0; 100],
        in_flight: vec![0.0; 100],
    };
    assert!((gumbel_prediction(&field, &o, &[1.0, 1.0]) - (-1.0f64).exp()).abs() < 1e-15);
    let mut last = 1.0;
    for t in [0.1, 0.5, 1.0, 2.0] {
        let g = gumbel_prediction(&field, &o, &[t, t]);
        assert!(g < last);
        last = g;
    }
    let est = ThetaEstimate {
        origin: 0,
        k_max: 20,
        schedule: vec![0.1, 0.05],
        raw: vec![0.5, 0.5],
        in_flight: vec![0.0, 0.0],
        converged: true,
        tolerance: 1e-4,
    };
    assert!((gumbel_prediction_constant(&est, 1.0).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
    let bad = ThetaEstimate { converged: false, ..est };
    assert!(gumbel_prediction_constant(&bad, 1.0).is_err());
}

#[test]
fn three_branch_curve_approaches_gumbel_limit() {
    let e = Engine::new(vec![PiecewiseLinearMap::three_branch(2.0).unwrap()], Grid::new(4).unwrap(), 1.0).unwrap();
    let o = orbit(&constant_driving(), 100, 2000);
    let obs = [ObservationFunction::NegDistance { center: 0.5 }];
    let n_list = [128, 256, 512, 1024];
    let s = solve_thresholds(&obs, &[one()], &[1.0], &n_list, None).unwrap();
    let limit = (-0.5f64).exp();
    let rows = survivor_probability_curve(&e, &o, &s, CurveGrid::PerN { cells_per_n: 2 }, 80, limit).unwrap();
    let mut last_err = f64::INFINITY;
    for r in &rows {
        assert!((r.nu_survivor - r.lambda_ratio).abs() < 1e-2);
        assert_eq!(r.nu_survivor, r.mu_survivor);
        let err = (r.nu_survivor - limit).abs();
        assert!(err <= last_err + 1e-12);
        last_err = err;
    }
    assert!(last_err < 0.02, "{rows:?}");
}

#[test]
fn empty_holes_give_unit_curve() {
    let e = Engine::new(vec![PiecewiseLinearMap::three_branch(2.0).unwrap()], Grid::new(8).unwrap(), 1.0).unwrap();
    let o = orbit(&constant_driving(), 100, 200);
    let obs = [ObservationFunction::NegDistance { center: 0.5 }];
    let s = solve_thresholds(&obs, &[one()], &[0.0], &[16, 32], None).unwrap();
    let rows = survivor_probability_curve(&e, &o, &s, CurveGrid::Fixed, 50, 1.0).unwrap();
    for r in rows {
        assert!((r.nu_survivor - 1.0).abs() < 1e-14);
        assert!((r.lambda_ratio - 1.0).abs() < 1e-14);
    }
}

#[test]
fn random_beta_curve_matches_orbit_extremal_index() {
    let maps = vec![PiecewiseLinearMap::beta(3.0).unwrap(), PiecewiseLinearMap::beta(5.0).unwrap()];
    let e = Engine::new(maps, Grid::new(15).unwrap(), 1.0).unwrap();
    let d = iid_driving(3);
    let n = 1024;
    let o = orbit(&d, 100, 2 * n);
    let obs = [ObservationFunction::NegDistance { center: 0.0 }; 2];
    let s = solve_thresholds(&obs, &[one(), one()], &[1.0, 1.0], &[n], None).unwrap();
    let eps = 1.0 / n as f64;
    let field = theta_field(&e, &o, &s.holes(0), eps, n, 20, 50).unwrap();
    let rows = survivor_probability_curve(&e, &o, &s, CurveGrid::PerN { cells_per_n: 15 }, 50, 0.0).unwrap();
    let predicted = gumbel_prediction(&field, &o, &[1.0, 1.0]);
    assert!((rows[0].nu_survivor - predicted).abs() < 0.02, "{} vs {predicted}", rows[0].nu_survivor);
    assert!((rows[0].lambda_ratio - rows[0].nu_survivor).abs() < 1e-2);
}

#[test]
fn sampler_follows_density() {
    let phi = StepFunction::from_parts(vec![0.0, 0.5, 1.0], vec![1.5, 0.5]);
    let s = StepSampler::new(&phi).unwrap();
    let m = 100_000;
    let below = (0..m).filter(|i| s.sample((*i as f64 + 0.5) / m as f64) < 0.5).count();
    assert!((below as f64 / m as f64 - 0.75).abs() < 1e-4);
    assert!((s.sample(0.375) - 0.25).abs() < 1e-12);
}

#[test]
fn ks_distance_of_exact_quantiles_is_small() {
    let n = 1000;
    let q: Vec<f64> = (0..n).map(|i| -(1.0 - (i as f64 + 0.5) / n as f64).ln() / 2.0).collect();
    assert!(ks_exponential(&q, 2.0) <= 0.5 / n as f64 + 1e-12);
    assert!(ks_exponential(&q, 1.0) > 0.2);
}

fn hitting(d: &DrivingSystem, map: PiecewiseLinearMap, hole: IntervalSet, rate: f64, samples: usize, seed: u64) -> qopen::evt::HittingTimes {
    let o = orbit(d, 0, 100);
    let mu = hole.measure();
    hitting_time_mc(
        d,
        &[map],
        &o,
        &HoleField::per_symbol(vec![hole]),
        &one(),
        mu,
        rate,
        HittingSettings {
            samples,
            master_seed: seed,
            cap_multiple: 200.0,
        },
    )
    .unwrap()
}

#[test]
fn hitting_times_at_aperiodic_cylinder_are_standard_exponential() {
    let d = constant_driving();
    let hole = IntervalSet::single(307.0 / 1024.0, 308.0 / 1024.0);
    assert!(hole.contains(0.3));
    let h = hitting(&d, PiecewiseLinearMap::doubling(), hole, 1.0, 20_000, 7);
    assert!(h.ks < 0.05, "KS {}", h.ks);
    assert!(h.extended > 0);
    assert_eq!(h.censored, 0);
}

#[test]
fn hitting_times_at_fixed_point_carry_extremal_index() {
    let d = constant_driving();
    let h = hitting(&d, PiecewiseLinearMap::doubling(), IntervalSet::single(0.0, 1e-3), 0.5, 20_000, 8);
    assert!(h.ks < 0.05, "KS {}", h.ks);
    // rate 1 is clearly rejected
    assert!(ks_exponential(&h.scaled, 1.0) > 0.1);
}

#[test]
fn hitting_times_are_thread_count_independent() {
    let d = iid_driving(5);
    let run = || {
        let o = orbit(&d, 0, 50);
        let maps = [PiecewiseLinearMap::beta(3.0).unwrap(), PiecewiseLinearMap::beta(5.0).unwrap()];
        let holes = HoleField::per_symbol(vec![IntervalSet::single(0.0, 0.01); 2]);
        hitting_time_mc(
            &d,
            &maps,
            &o,
            &holes,
            &one(),
            0.01,
            11.0 / 15.0,
            HittingSettings {
                samples: 2000,
                master_seed: 42,
                cap_multiple: 200.0,
            },
        )
        .unwrap()
    };
    let a = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
    let b = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(run);
    assert_eq!(a, b);
    assert!(a.extended > 0);
}

#[test]
fn large_holes_refused() {
    let d = constant_driving();
    let o = orbit(&d, 0, 10);
    let err = hitting_time_mc(
        &d,
        &[PiecewiseLinearMap::doubling()],
        &o,
        &HoleField::per_symbol(vec![IntervalSet::full()]),
        &one(),
        1.0,
        1.0,
        HittingSettings {
            samples: 10,
            master_seed: 1,
            cap_multiple: 10.0,
        },
    )
    .unwrap_err();
    assert!(matches!(err, qopen::Error::SmallHoleViolated(_)));
}
