//! The always-on invariant suite run by `qopen selftest`.
//!
//! Each check runs on a small shipped preset, compares one scalar against a
//! fixed threshold and records the outcome. None of the thresholds depend
//! on the result.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::driving::{fiber_sequence, DrivingKind, DrivingSystem, FiberOrbit};
use crate::error::Result;
use crate::maps::{Interval, IntervalSet, PiecewiseLinearMap};
use crate::open::{survivor_set, GridMasks, HoleFamily, HoleField};
use crate::perturb::qhat;
use crate::pressure::pressure_curve;
use crate::raccim::{conditional_invariance_check, survivor_mass_identity};
use crate::transfer::{lambda_closed, Closed, Engine, GridDensity, Grid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub property: String,
    pub system: String,
    /// The measured quantity (a residual, a sum, or a count of violations).
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SelftestReport {
    pub checks: Vec<PropertyCheck>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// `property, system, value, threshold, passed`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("property,system,value,threshold,passed\n");
        for c in &self.checks {
            s.push_str(&format!(
                "\"{}\",\"{}\",{:.17e},{:e},{}\n",
                c.property, c.system, c.value, c.threshold, c.passed
            ));
        }
        s
    }

    fn below(&mut self, property: &str, system: &str, value: f64, threshold: f64) {
        self.checks.push(PropertyCheck {
            property: property.into(),
            system: system.into(),
            value,
            threshold,
            passed: value < threshold,
        });
    }

    fn above(&mut self, property: &str, system: &str, value: f64, threshold: f64) {
        self.checks.push(PropertyCheck {
            property: property.into(),
            system: system.into(),
            value,
            threshold,
            passed: value > threshold,
        });
    }
}

/// Fixed ε of the return-ratio conservation check.
pub const CONSERVATION_EPS: f64 = 1.0 / 1024.0;
/// Truncation `K` of the return-ratio conservation check.
pub const CONSERVATION_K: usize = 40;

fn constant_orbit(backward: usize, forward: usize) -> FiberOrbit {
    let d = DrivingSystem::new(DrivingKind::Constant { symbol: 0 }).expect("constant driving");
    fiber_sequence(&d, backward, forward)
}

fn iid_orbit(seed: u64, backward: usize, forward: usize) -> FiberOrbit {
    let d = DrivingSystem::new(DrivingKind::Iid { p: vec![0.5, 0.5], seed }).expect("iid driving");
    fiber_sequence(&d, backward, forward)
}

fn engine(maps: Vec<PiecewiseLinearMap>, n: usize, r: f64) -> Result<Engine> {
    Engine::new(maps, Grid::new(n)?, r)
}

fn beta(b: f64) -> PiecewiseLinearMap {
    PiecewiseLinearMap::beta(b).expect("beta preset")
}

fn three_branch() -> PiecewiseLinearMap {
    PiecewiseLinearMap::three_branch(2.0).expect("three-branch preset")
}

fn panel_function(cells: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pieces = rng.random_range(1..=8usize);
    let vals: Vec<f64> = (0..pieces).map(|_| rng.random_range(0.0..2.0)).collect();
    (0..cells).map(|i| vals[i * pieces / cells]).collect()
}

/// `Σ_{k ≤ K} q̂^(k)` at the fixed point 0 with the hole `[0, ε)`.
fn conservation(report: &mut SelftestReport) -> Result<()> {
    let presets = [("doubling", PiecewiseLinearMap::doubling(), 1024), ("beta3", beta(3.0), 3 * 1024)];
    for (name, map, cells) in presets {
        let e = engine(vec![map], cells, 1.0)?;
        let o = constant_orbit(CONSERVATION_K + 2, 10);
        let holes = HoleFamily::balls(&[0.0]).at(CONSERVATION_EPS);
        let q = qhat(&e, &o, &holes, CONSERVATION_EPS, CONSERVATION_K, 0)?;
        let bad = q.values.iter().filter(|v| **v < -1e-15).count()
            + (q.partial_sum(CONSERVATION_K) > 1.0 + 1e-12) as usize;
        report.below("return-ratio partial sums nondecreasing and at most one", name, bad as f64, 0.5);
        report.above("return ratios sum to one", name, q.partial_sum(CONSERVATION_K), 1.0 - 1e-3);
    }
    Ok(())
}

/// Open multipliers never exceed closed ones, fiber by fiber.
fn open_below_closed(report: &mut SelftestReport) -> Result<()> {
    let cases = [
        ("iid beta{3,5}, balls at 0.3/0.7", vec![beta(3.0), beta(5.0)], 60, 1.0),
        ("iid {doubling, three-branch}, r = 1/2", vec![PiecewiseLinearMap::doubling(), three_branch()], 64, 0.5),
    ];
    for (name, maps, cells, r) in cases {
        let e = engine(maps, cells, r)?;
        let o = iid_orbit(11, 80, 120);
        let holes = HoleFamily::balls(&[0.3, 0.7]).at(0.05);
        let masks = GridMasks::new(&e, &o, &holes);
        let closed = e.multipliers(&o, 60, 100, &Closed)?;
        let open = e.multipliers(&o, 60, 100, &masks)?;
        let violations = closed
            .log_lambda
            .iter()
            .zip(&open.log_lambda)
            .filter(|(c, o)| **o > **c + 1e-12)
            .count();
        report.below("open multiplier <= closed on every fiber", name, violations as f64, 0.5);
    }
    Ok(())
}

/// `X_{n+1} ⊆ X_n` as exact interval sets.
fn nesting(report: &mut SelftestReport) -> Result<()> {
    let e = engine(vec![beta(3.0), beta(5.0)], 15, 1.0)?;
    let holes = HoleField::per_symbol(vec![IntervalSet::single(0.1, 0.2), IntervalSet::single(0.45, 0.5)]);
    let mut violations = 0;
    for seed in 0..5 {
        let o = iid_orbit(seed, 0, 20);
        let mut prev = survivor_set(&e, &o, 0, 0, &holes)?;
        for n in 1..=8 {
            let next = survivor_set(&e, &o, 0, n, &holes)?;
            if !next.body.is_subset_of(&prev.body) {
                violations += 1;
            }
            prev = next;
        }
    }
    report.below("survivor sets nested", "iid beta{3,5}", violations as f64, 0.5);
    Ok(())
}

/// `ν(L f) = λ ν(f)` for a 20-function panel, relative to the sandwich widths.
fn conformality(report: &mut SelftestReport) -> Result<()> {
    let e = engine(vec![three_branch(), PiecewiseLinearMap::linear_full(4)?], 16, 0.5)?;
    let o = iid_orbit(17, 60, 200);
    let run = lambda_closed(&e, &o, 50, 3)?;
    // worst residual / (10 · width); below 1 means within tolerance
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        for j in 0..3i64 {
            let f = panel_function(16, seed * 31 + j as u64);
            let lam = run.log_lambda[j as usize].exp();
            let s0 = e.conformal_sandwich(&o, j, &f, 60)?;
            let lf = e.step(&o, j, &f, None)?;
            let s1 = e.conformal_sandwich(&o, j + 1, &lf, 60)?;
            let residual = (s1.mid() - lam * s0.mid()).abs();
            let tol = (10.0 * (s1.width() + lam * s0.width())).max(1e-14 * (1.0 + s1.mid().abs()));
            worst = worst.max(residual / tol);
        }
    }
    report.below("conformality within 10 sandwich widths", "iid {three-branch, linear4}, r = 1/2", worst, 1.0);
    Ok(())
}

/// Matrix pushes against weighted interval pullbacks on an aligned grid.
fn cross_engine(report: &mut SelftestReport) -> Result<()> {
    let maps = vec![PiecewiseLinearMap::doubling(), three_branch()];
    let grid = Grid::new(64)?;
    let o = iid_orbit(9, 0, 8);
    let sets = [
        IntervalSet::single(0.0, 0.25),
        IntervalSet::from_intervals(vec![Interval::new(0.125, 0.375)?, Interval::new(0.5, 0.5625)?]),
    ];
    let targets = [IntervalSet::single(0.25, 0.75), IntervalSet::single(0.0, 0.0625)];
    let mut worst = 0.0f64;
    for r in [0.0, 0.5, 1.0] {
        let e = Engine::new(maps.clone(), grid, r)?;
        for s in &sets {
            for b in &targets {
                for n in 1..=5usize {
                    let mut f = GridDensity::indicator(grid, s).values;
                    for k in 0..n {
                        f = e.step(&o, k as i64, &f, None)?;
                    }
                    let matrix = GridDensity::from_values(f).integral_over(b);
                    let mut pieces: Vec<(Interval, f64)> = b.intervals().iter().map(|iv| (*iv, 1.0)).collect();
                    for k in (0..n).rev() {
                        pieces = e.map(o.symbol(k as i64)).weighted_pullback(&pieces, r);
                    }
                    let interval: f64 = pieces
                        .iter()
                        .map(|(iv, w)| w * IntervalSet::single(iv.lo, iv.hi).intersection(s).measure())
                        .sum();
                    worst = worst.max((matrix - interval).abs() / (1.0 + interval));
                }
            }
        }
    }
    report.below("matrix and interval engines agree", "iid {doubling, three-branch}, 64 cells", worst, 1e-12);
    Ok(())
}

fn raccim_identities(report: &mut SelftestReport) -> Result<()> {
    let e = engine(vec![PiecewiseLinearMap::doubling()], 16, 1.0)?;
    let o = constant_orbit(60, 100);
    let holes = HoleField::per_symbol(vec![IntervalSet::single(0.5, 1.0)]);
    let mut worst = 0.0f64;
    for (a, n) in [
        (IntervalSet::single(0.0, 0.25), 1),
        (IntervalSet::single(0.125, 0.4375), 2),
        (IntervalSet::single(0.0, 0.5), 3),
    ] {
        worst = worst.max(conditional_invariance_check(&e, &o, &holes, &a, n, 50)?);
    }
    report.below("conditional invariance residual", "doubling, hole [1/2,1)", worst, 1e-12);

    let mut worst = 0.0f64;
    for n in [1, 4, 8] {
        let (lhs, rhs) = survivor_mass_identity(&e, &o, &holes, n, 50)?;
        worst = worst.max((lhs - rhs).abs());
    }
    let rb = engine(vec![beta(3.0), beta(5.0)], 30, 1.0)?;
    let rholes = HoleField::per_symbol(vec![IntervalSet::single(0.1, 0.2), IntervalSet::single(0.5, 0.6)]);
    for seed in 0..3 {
        let o = iid_orbit(seed, 80, 100);
        for n in [1, 4, 8] {
            let (lhs, rhs) = survivor_mass_identity(&rb, &o, &rholes, n, 60)?;
            worst = worst.max((lhs - rhs).abs());
        }
    }
    report.below("survivor mass equals product of multiplier ratios", "doubling; iid beta{3,5}", worst, 1e-10);
    Ok(())
}

fn pressure_monotone(report: &mut SelftestReport) -> Result<()> {
    let e = engine(vec![three_branch(), beta(3.0)], 48, 1.0)?;
    let ts: Vec<f64> = (0..=5).map(|i| i as f64 / 5.0).collect();
    let mut bad = 0;
    for (seed, a, w) in [(1u64, 0.1, 0.05), (2, 0.3, 0.1), (3, 0.0, 0.2)] {
        let o = iid_orbit(seed, 60, 200);
        let holes = HoleField::per_symbol(vec![IntervalSet::single(a, a + w); 2]);
        let curve = pressure_curve(&e, &o, &holes, &ts, 50, 40)?;
        if !curve.strictly_decreasing(1e-8) {
            bad += 1;
        }
    }
    report.below("expected pressure strictly decreasing", "iid {three-branch, beta3}", bad as f64, 0.5);
    Ok(())
}

/// Run every check. Errors from the numerical engines abort the suite.
pub fn run_suite() -> Result<SelftestReport> {
    let mut report = SelftestReport::default();
    conservation(&mut report)?;
    open_below_closed(&mut report)?;
    nesting(&mut report)?;
    conformality(&mut report)?;
    cross_engine(&mut report)?;
    raccim_identities(&mut report)?;
    pressure_monotone(&mut report)?;
    Ok(report)
}
