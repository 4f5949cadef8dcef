use proptest::prelude::*;
use qopen::driving::{fiber_sequence, DrivingKind, DrivingSystem, FiberOrbit};
use qopen::maps::{IntervalSet, PiecewiseLinearMap, StepFunction};
use qopen::open::{
    check_full_branch_outside, escape_rate, lambda_open, survivor_log_mass, survivor_log_mass_curve,
    survivor_measure, survivor_set, GridMasks, HoleFamily, HoleField, SurvivorMeasure,
};
use qopen::transfer::{Engine, Grid, GridDensity};

fn constant_orbit(backward: usize, forward: usize) -> FiberOrbit {
    let d = DrivingSystem::new(DrivingKind::Constant { symbol: 0 }).unwrap();
    fiber_sequence(&d, backward, forward)
}

fn iid_orbit(seed: u64, backward: usize, forward: usize) -> FiberOrbit {
    let d = DrivingSystem::new(DrivingKind::Iid { p: vec![0.5, 0.5], seed }).unwrap();
    fiber_sequence(&d, backward, forward)
}

fn doubling_half_hole() -> (Engine, HoleField) {
    let e = Engine::new(vec![PiecewiseLinearMap::doubling()], Grid::new(16).unwrap(), 1.0).unwrap();
    (e, HoleField::per_symbol(vec![IntervalSet::single(0.5, 1.0)]))
}

#[test]
fn doubling_half_hole_multipliers() {
    let (e, holes) = doubling_half_hole();
    let orbit = constant_orbit(60, 200);
    let data = lambda_open(&e, &orbit, &holes, 50, 40).unwrap();
    assert!(data.exact);
    for (c, o) in data.lambda_closed.iter().zip(&data.lambda_open) {
        assert!((c - 1.0).abs() < 1e-12);
        assert!((o - 0.5).abs() < 1e-12);
    }
}

#[test]
fn doubling_half_hole_survivors() {
    let (e, holes) = doubling_half_hole();
    let orbit = constant_orbit(0, 40);
    for n in 0..12usize {
        let x = survivor_set(&e, &orbit, 0, n, &holes).unwrap();
        let want = 2f64.powi(-(n as i32 + 1));
        assert!((survivor_measure(&x, SurvivorMeasure::Lebesgue) - want).abs() < 1e-15);
        // only the left-most dyadic interval survives
        assert_eq!(x.body, IntervalSet::single(0.0, want));
    }
    let masks = GridMasks::new(&e, &orbit, &holes);
    let curve = survivor_log_mass_curve(&e, &orbit, &masks, 30, None).unwrap();
    for (n, lm) in curve.iter().enumerate() {
        assert!((lm + (n as f64 + 1.0) * 2f64.ln()).abs() < 1e-12);
    }
}

#[test]
fn doubling_half_hole_escape_rate() {
    let (e, holes) = doubling_half_hole();
    let orbit = constant_orbit(60, 300);
    let esc = escape_rate(&e, &orbit, &holes, 50, 200).unwrap();
    assert!((esc.decay - 2f64.ln()).abs() < 1e-12);
    assert!((esc.pressure - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn beta3_right_hole_multiplier() {
    let e = Engine::new(vec![PiecewiseLinearMap::beta(3.0).unwrap()], Grid::new(27).unwrap(), 1.0).unwrap();
    let holes = HoleField::per_symbol(vec![IntervalSet::single(2.0 / 3.0, 1.0)]);
    let orbit = constant_orbit(60, 100);
    let data = lambda_open(&e, &orbit, &holes, 50, 30).unwrap();
    for o in &data.lambda_open {
        assert!((o - 2.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn open_multiplier_with_counting_weight() {
    let e = Engine::new(vec![PiecewiseLinearMap::linear_full(3).unwrap()], Grid::new(9).unwrap(), 0.0).unwrap();
    let holes = HoleField::per_symbol(vec![IntervalSet::single(2.0 / 3.0, 1.0)]);
    let orbit = constant_orbit(60, 200);
    let data = lambda_open(&e, &orbit, &holes, 50, 20).unwrap();
    for (c, o) in data.lambda_closed.iter().zip(&data.lambda_open) {
        assert!((c - 3.0).abs() < 1e-12);
        assert!((o - 2.0).abs() < 1e-12);
    }
    assert!((data.escape.decay - 1.5f64.ln()).abs() < 1e-12);
}

#[test]
fn random_full_branch_holes_escape_rate_matches_product_formula() {
    let maps = vec![PiecewiseLinearMap::beta(3.0).unwrap(), PiecewiseLinearMap::beta(5.0).unwrap()];
    let e = Engine::new(maps, Grid::new(15).unwrap(), 1.0).unwrap();
    let sizes: [f64; 2] = [1.0 / 3.0, 1.0 / 5.0];
    let holes = HoleField::per_symbol(vec![IntervalSet::single(2.0 / 3.0, 1.0), IntervalSet::single(0.8, 1.0)]);
    let orbit = iid_orbit(11, 60, 400);
    let n = 300;
    let esc = escape_rate(&e, &orbit, &holes, 50, n).unwrap();
    // full-branch holes of Lebesgue-preserving maps: Leb(X_k) = Π_{j≤k} (1 − |H_j|)
    let oracle: f64 = -(1..=n as i64)
        .map(|j| (1.0 - sizes[orbit.symbol(j)]).ln())
        .sum::<f64>()
        / n as f64;
    assert!((esc.decay - oracle).abs() < 1e-12, "{} vs {oracle}", esc.decay);
    assert!(esc.gap <= 10.0 * esc.tolerance);
    let expected = -0.5 * ((2.0f64 / 3.0).ln() + 0.8f64.ln());
    assert!((esc.decay - expected).abs() < 0.05);
}

#[test]
fn grid_survivor_masses_match_interval_engine() {
    let maps = vec![PiecewiseLinearMap::beta(3.0).unwrap(), PiecewiseLinearMap::beta(5.0).unwrap()];
    let holes = HoleField::per_symbol(vec![IntervalSet::single(1.0 / 3.0, 2.0 / 3.0), IntervalSet::single(0.2, 0.4)]);
    let orbit = iid_orbit(2, 0, 40);
    for r in [1.0] {
        let e = Engine::new(maps.clone(), Grid::new(15).unwrap(), r).unwrap();
        let masks = GridMasks::new(&e, &orbit, &holes);
        assert!(masks.aligned);
        for n in 0..9usize {
            let x = survivor_set(&e, &orbit, 0, n, &holes).unwrap();
            let exact = survivor_measure(&x, SurvivorMeasure::Lebesgue).ln();
            let grid = survivor_log_mass(&e, &orbit, &masks, 0, n, None).unwrap();
            assert!((exact - grid).abs() < 1e-12, "n={n}: {exact} vs {grid}");
        }
    }
}

#[test]
fn grid_survivor_masses_with_density_weight() {
    // Nonuniform weight f: ∫_{X_n} f computed both ways.
    let maps = vec![PiecewiseLinearMap::doubling(), PiecewiseLinearMap::three_branch(2.0).unwrap()];
    let e = Engine::new(maps, Grid::new(32).unwrap(), 1.0).unwrap();
    let holes = HoleField::per_symbol(vec![IntervalSet::single(0.0, 0.125), IntervalSet::single(0.5, 0.625)]);
    let orbit = iid_orbit(5, 0, 40);
    let cells: Vec<f64> = (0..32).map(|i| 0.5 + (i % 5) as f64 * 0.3).collect();
    let f = GridDensity::from_values(cells.clone());
    let step = StepFunction::from_cells(&cells);
    let masks = GridMasks::new(&e, &orbit, &holes);
    for n in 0..8usize {
        let x = survivor_set(&e, &orbit, 0, n, &holes).unwrap();
        let exact = survivor_measure(&x, SurvivorMeasure::Density(&step)).ln();
        let grid = survivor_log_mass(&e, &orbit, &masks, 0, n, Some(&f)).unwrap();
        assert!((exact - grid).abs() < 1e-12, "n={n}: {exact} vs {grid}");
    }
}

#[test]
fn empty_holes_leave_multipliers_unchanged() {
    let maps = vec![PiecewiseLinearMap::three_branch(2.0).unwrap(), PiecewiseLinearMap::linear_full(4).unwrap()];
    let e = Engine::new(maps, Grid::new(16).unwrap(), 0.5).unwrap();
    let orbit = iid_orbit(8, 80, 200);
    let data = lambda_open(&e, &orbit, &HoleField::empty(2), 50, 20).unwrap();
    for (c, o) in data.lambda_closed.iter().zip(&data.lambda_open) {
        assert!((c - o).abs() < 1e-12 * c);
    }
    assert!(data.escape.decay.abs() < 1e-12);
}

#[test]
fn survivor_set_reports_emptiness() {
    let e = Engine::new(vec![PiecewiseLinearMap::doubling()], Grid::new(4).unwrap(), 1.0).unwrap();
    let orbit = constant_orbit(0, 10);
    let holes = HoleField::per_symbol(vec![IntervalSet::single(0.0, 1.0)]);
    let err = survivor_set(&e, &orbit, 0, 3, &holes).unwrap_err();
    assert!(matches!(err, qopen::Error::EmptySurvivor { .. }));
}

#[test]
fn full_branch_condition() {
    let e = Engine::new(vec![PiecewiseLinearMap::doubling()], Grid::new(4).unwrap(), 1.0).unwrap();
    let orbit = constant_orbit(0, 10);
    let ok = HoleField::per_symbol(vec![IntervalSet::single(0.0, 0.1)]);
    assert!(check_full_branch_outside(&e, &ok, &orbit).is_ok());
    let bad = HoleField::per_symbol(vec![IntervalSet::single(0.45, 0.55)]);
    assert!(check_full_branch_outside(&e, &bad, &orbit).is_err());
}

#[test]
fn ball_family_nesting() {
    let fam = HoleFamily::balls(&[0.0, 0.3]);
    let schedule: Vec<f64> = (0..10).map(|j| 0.1 * 0.5f64.powi(j)).collect();
    fam.check_nesting(&schedule).unwrap();
    let h = fam.at(0.1);
    let orbit = constant_orbit(0, 1);
    assert_eq!(h.hole(&orbit, 0), &IntervalSet::single(0.0, 0.1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn survivor_sets_shrink_as_holes_grow(seed in 0u64..500, e1 in 0.01f64..0.1, e2 in 0.01f64..0.1, n in 1usize..7) {
        let (small, big) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let maps = vec![PiecewiseLinearMap::doubling(), PiecewiseLinearMap::three_branch(2.0).unwrap()];
        let e = Engine::new(maps, Grid::new(8).unwrap(), 1.0).unwrap();
        let fam = HoleFamily::balls(&[0.3, 0.6]);
        let orbit = iid_orbit(seed, 0, 10);
        let xs = survivor_set(&e, &orbit, 0, n, &fam.at(small)).unwrap();
        let xb = survivor_set(&e, &orbit, 0, n, &fam.at(big)).unwrap();
        prop_assert!(xb.body.is_subset_of(&xs.body));
        // deeper survivor sets are nested too
        let deeper = survivor_set(&e, &orbit, 0, n + 1, &fam.at(small)).unwrap();
        prop_assert!(deeper.body.is_subset_of(&xs.body));
    }

    #[test]
    fn open_multipliers_never_exceed_closed(seed in 0u64..500, eps in 0.02f64..0.2, r in 0.3f64..1.5) {
        let maps = vec![PiecewiseLinearMap::doubling(), PiecewiseLinearMap::three_branch(2.0).unwrap()];
        let e = Engine::new(maps, Grid::new(64).unwrap(), r).unwrap();
        let holes = HoleFamily::balls(&[0.3, 0.7]).at(eps);
        let orbit = iid_orbit(seed, 80, 200);
        let masks = GridMasks::new(&e, &orbit, &holes);
        let closed = e.multipliers(&orbit, 50, 20, &qopen::transfer::Closed).unwrap();
        let open = e.multipliers(&orbit, 50, 20, &masks).unwrap();
        let mc = closed.birkhoff_mean();
        let mo = open.birkhoff_mean();
        prop_assert!(mo <= mc + 1e-9, "{mo} > {mc}");
    }
}
