//! Expected pressure of the geometric potential `−t log|T'|` and the
//! dimension of the survivor set by Bowen's formula.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driving::FiberOrbit;
use crate::error::{Error, Result};
use crate::maps::{IntervalSet, PiecewiseLinearMap};
use crate::open::{GridMasks, HoleField};
use crate::transfer::{Closed, Engine};

/// Birkhoff mean over `n` sites of `log λ̂_{σ^j ω, t, ε}` (open when the
/// hole field is nonempty).
pub fn expected_pressure(engine: &Engine, orbit: &FiberOrbit, holes: &HoleField, t: f64, burn_in: usize, n: usize) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidConfig(format!("weight exponent t = {t} must be nonnegative")));
    }
    let e = engine.with_weight(t)?;
    if holes.is_empty() {
        return Ok(e.multipliers(orbit, burn_in, n, &Closed)?.birkhoff_mean());
    }
    let masks = GridMasks::new(&e, orbit, holes);
    Ok(e.multipliers(orbit, burn_in, n, &masks)?.birkhoff_mean())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PressurePoint {
    pub t: f64,
    pub ep_closed: f64,
    pub ep_open: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureCurve {
    pub points: Vec<PressurePoint>,
    pub n: usize,
    pub burn_in: usize,
}

impl PressureCurve {
    /// Strictly decreasing in `t` (by more than `tol` per sample) for both
    /// the closed and the open column.
    pub fn strictly_decreasing(&self, tol: f64) -> bool {
        self.points
            .windows(2)
            .all(|w| w[1].ep_closed < w[0].ep_closed - tol && w[1].ep_open < w[0].ep_open - tol)
    }

    /// `EP_open ≤ EP_closed` at every sample.
    pub fn open_below_closed(&self, tol: f64) -> bool {
        self.points.iter().all(|p| p.ep_open <= p.ep_closed + tol)
    }

    /// `t, EP_closed, EP_open`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,EP_closed,EP_open\n");
        for p in &self.points {
            s.push_str(&format!("{:.17e},{:.17e},{:.17e}\n", p.t, p.ep_closed, p.ep_open));
        }
        s
    }
}

/// Closed and open expected pressure at each `t`.
pub fn pressure_curve(
    engine: &Engine,
    orbit: &FiberOrbit,
    holes: &HoleField,
    ts: &[f64],
    burn_in: usize,
    n: usize,
) -> Result<PressureCurve> {
    let points = ts
        .par_iter()
        .map(|&t| {
            let ep_closed = expected_pressure(engine, orbit, &HoleField::empty(engine.maps().len()), t, burn_in, n)?;
            let ep_open = expected_pressure(engine, orbit, holes, t, burn_in, n)?;
            Ok(PressurePoint { t, ep_closed, ep_open })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PressureCurve { points, n, burn_in })
}

/// Syntactic form of the hypotheses behind Bowen's formula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralReport {
    /// Every branch is full (large images).
    pub large_images: bool,
    /// Every hole is a union of full branch domains (large images with
    /// respect to the hole).
    pub hole_is_union_of_full_branches: bool,
    /// Every slope exceeds 1 in modulus.
    pub expanding: bool,
    pub warnings: Vec<String>,
}

fn hole_is_union_of_full_branches(map: &PiecewiseLinearMap, hole: &IntervalSet) -> bool {
    let covered = IntervalSet::from_intervals(
        map.branches()
            .iter()
            .filter(|b| b.is_full())
            .map(|b| b.domain)
            .filter(|d| IntervalSet::single(d.lo, d.hi).is_subset_of(hole))
            .collect(),
    );
    covered.is_subset_of(hole) && hole.is_subset_of(&covered)
}

pub fn structural_report(engine: &Engine, holes: &HoleField) -> StructuralReport {
    let maps = engine.maps();
    let large_images = maps.iter().all(PiecewiseLinearMap::all_full);
    let expanding = maps.iter().all(|m| m.min_expansion() > 1.0);
    let hole_ok = match holes {
        HoleField::PerSymbol(v) => v
            .iter()
            .zip(maps)
            .all(|(h, m)| hole_is_union_of_full_branches(m, h)),
        HoleField::PerSite { .. } => false,
    };
    let mut warnings = Vec::new();
    if !large_images {
        warnings.push("some branch is not full: large-images hypothesis not verified".into());
    }
    if !hole_ok {
        warnings.push("hole is not a union of full branches: large images w.r.t. the hole not verified".into());
    }
    if !expanding {
        warnings.push("some slope has modulus <= 1".into());
    }
    StructuralReport {
        large_images,
        hole_is_union_of_full_branches: hole_ok,
        expanding,
        warnings,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowenResult {
    pub h: f64,
    pub bracket: (f64, f64),
    pub ep_bracket: (f64, f64),
    pub tol: f64,
    pub iterations: usize,
    pub ep_at_h: f64,
    pub structure: StructuralReport,
}

/// Bisection cap.
pub const BOWEN_MAX_ITERATIONS: usize = 40;

/// The zero `h ∈ [0, 1]` of `t ↦ ÊP_ε(t)` by bisection.
pub fn bowen_dimension(
    engine: &Engine,
    orbit: &FiberOrbit,
    holes: &HoleField,
    burn_in: usize,
    n: usize,
    tol: f64,
) -> Result<BowenResult> {
    let structure = structural_report(engine, holes);
    if !structure.expanding {
        return Err(Error::Validation("Bowen's formula requires every |slope| > 1".into()));
    }
    let ep = |t: f64| expected_pressure(engine, orbit, holes, t, burn_in, n);
    let (ep0, ep1) = (ep(0.0)?, ep(1.0)?);
    let done = |h: f64, bracket: (f64, f64), ep_bracket, iterations, ep_at_h, structure| BowenResult {
        h,
        bracket,
        ep_bracket,
        tol,
        iterations,
        ep_at_h,
        structure,
    };
    if ep0.abs() <= tol {
        return Ok(done(0.0, (0.0, 0.0), (ep0, ep0), 0, ep0, structure));
    }
    if ep1.abs() <= tol {
        return Ok(done(1.0, (1.0, 1.0), (ep1, ep1), 0, ep1, structure));
    }
    if !(ep0 > 0.0 && ep1 < 0.0) {
        return Err(Error::BracketViolated { ep0, ep1 });
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let (mut ep_lo, mut ep_hi) = (ep0, ep1);
    let mut iterations = 0;
    let (mut h, mut ep_h) = (0.5, f64::NAN);
    while iterations < BOWEN_MAX_ITERATIONS {
        iterations += 1;
        h = 0.5 * (lo + hi);
        ep_h = ep(h)?;
        if ep_h > 0.0 {
            lo = h;
            ep_lo = ep_h;
        } else {
            hi = h;
            ep_hi = ep_h;
        }
        if ep_h.abs() < tol && hi - lo < tol {
            break;
        }
    }
    if !(ep_h.abs() < tol) {
        return Err(Error::NonConvergence {
            what: "Bowen root bisection".into(),
            distance: ep_h.abs(),
        });
    }
    Ok(done(h, (lo, hi), (ep_lo, ep_hi), iterations, ep_h, structure))
}
