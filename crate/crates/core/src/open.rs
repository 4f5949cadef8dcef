//! Holes, open cocycles, exact survivor sets, open multipliers and escape
//! rates.

use serde::{Deserialize, Serialize};

use crate::driving::FiberOrbit;
use crate::error::{Error, Result};
use crate::maps::{IntervalSet, StepFunction};
use crate::transfer::{Closed, Engine, GridDensity, SiteMasks};

/// Parametric hole family `ε ↦ H_ε` attached to one fiber symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HoleSpec {
    /// The same set for every ε.
    Fixed { set: IntervalSet },
    /// `(c − ε, c + ε) ∩ [0, 1)`; a center at 0 gives `[0, ε)`.
    Ball { center: f64 },
    None,
}

impl HoleSpec {
    pub fn at(&self, eps: f64) -> IntervalSet {
        match self {
            HoleSpec::Fixed { set } => set.clone(),
            HoleSpec::Ball { center } => {
                if eps <= 0.0 {
                    IntervalSet::empty()
                } else {
                    IntervalSet::single((center - eps).max(0.0), (center + eps).min(1.0))
                }
            }
            HoleSpec::None => IntervalSet::empty(),
        }
    }
}

/// One hole family per fiber symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoleFamily {
    pub per_symbol: Vec<HoleSpec>,
}

impl HoleFamily {
    pub fn fixed(sets: Vec<IntervalSet>) -> Self {
        Self {
            per_symbol: sets.into_iter().map(|set| HoleSpec::Fixed { set }).collect(),
        }
    }

    pub fn balls(centers: &[f64]) -> Self {
        Self {
            per_symbol: centers.iter().map(|&center| HoleSpec::Ball { center }).collect(),
        }
    }

    pub fn none(symbols: usize) -> Self {
        Self {
            per_symbol: vec![HoleSpec::None; symbols],
        }
    }

    pub fn at(&self, eps: f64) -> HoleField {
        HoleField::PerSymbol(self.per_symbol.iter().map(|h| h.at(eps)).collect())
    }

    /// Nesting `H_{ε'} ⊆ H_ε` for every consecutive pair of a decreasing
    /// schedule.
    pub fn check_nesting(&self, schedule: &[f64]) -> Result<()> {
        for w in schedule.windows(2) {
            let (big, small) = if w[0] >= w[1] { (w[0], w[1]) } else { (w[1], w[0]) };
            for (s, h) in self.per_symbol.iter().enumerate() {
                if !h.at(small).is_subset_of(&h.at(big)) {
                    return Err(Error::Validation(format!(
                        "hole family of symbol {s} is not nested between eps {big} and {small}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Concrete holes `H_{σ^n ω}` along an orbit.
#[derive(Debug, Clone, PartialEq)]
pub enum HoleField {
    PerSymbol(Vec<IntervalSet>),
    /// Explicit holes for sites `lo..lo+holes.len()`; `fallback` (by symbol)
    /// elsewhere.
    PerSite {
        lo: i64,
        holes: Vec<IntervalSet>,
        fallback: Vec<IntervalSet>,
    },
}

impl HoleField {
    pub fn empty(symbols: usize) -> Self {
        HoleField::PerSymbol(vec![IntervalSet::empty(); symbols])
    }

    pub fn per_symbol(sets: Vec<IntervalSet>) -> Self {
        HoleField::PerSymbol(sets)
    }

    pub fn hole(&self, orbit: &FiberOrbit, site: i64) -> &IntervalSet {
        match self {
            HoleField::PerSymbol(v) => &v[orbit.symbol(site)],
            HoleField::PerSite { lo, holes, fallback } => {
                let idx = site - lo;
                if idx >= 0 && (idx as usize) < holes.len() {
                    &holes[idx as usize]
                } else {
                    &fallback[orbit.symbol(site)]
                }
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            HoleField::PerSymbol(v) => v.iter().all(IntervalSet::is_empty),
            HoleField::PerSite { holes, fallback, .. } => {
                holes.iter().all(IntervalSet::is_empty) && fallback.iter().all(IntervalSet::is_empty)
            }
        }
    }

    fn sets(&self) -> Vec<&IntervalSet> {
        match self {
            HoleField::PerSymbol(v) => v.iter().collect(),
            HoleField::PerSite { holes, fallback, .. } => holes.iter().chain(fallback.iter()).collect(),
        }
    }
}

/// Grid survival masks derived from a [`HoleField`].
pub struct GridMasks<'a> {
    orbit: &'a FiberOrbit,
    per_symbol: Vec<Option<Vec<f64>>>,
    per_site: Option<(i64, Vec<Option<Vec<f64>>>)>,
    /// Every hole endpoint lies on the grid.
    pub aligned: bool,
}

impl<'a> GridMasks<'a> {
    pub fn new(engine: &Engine, orbit: &'a FiberOrbit, holes: &HoleField) -> Self {
        let grid = engine.grid();
        let build = |h: &IntervalSet| (!h.is_empty()).then(|| grid.survival_mask(h));
        let aligned = holes.sets().iter().all(|h| grid.aligned_with_set(h));
        match holes {
            HoleField::PerSymbol(v) => Self {
                orbit,
                per_symbol: v.iter().map(build).collect(),
                per_site: None,
                aligned,
            },
            HoleField::PerSite { lo, holes, fallback } => Self {
                orbit,
                per_symbol: fallback.iter().map(build).collect(),
                per_site: Some((*lo, holes.iter().map(build).collect())),
                aligned,
            },
        }
    }
}

impl SiteMasks for GridMasks<'_> {
    fn mask(&self, site: i64) -> Option<&[f64]> {
        if let Some((lo, v)) = &self.per_site {
            let idx = site - lo;
            if idx >= 0 && (idx as usize) < v.len() {
                return v[idx as usize].as_deref();
            }
        }
        self.per_symbol[self.orbit.symbol(site)].as_deref()
    }

    fn is_closed(&self) -> bool {
        self.per_symbol.iter().all(Option::is_none)
            && self
                .per_site
                .as_ref()
                .is_none_or(|(_, v)| v.iter().all(Option::is_none))
    }
}

/// Exact survivor set `X_{σ^origin ω, n}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivorSet {
    pub origin: i64,
    pub depth: usize,
    pub body: IntervalSet,
}

/// Component cap of the exact backward sweep; survivor sets of chaotic
/// maps fragment exponentially in depth.
pub const SURVIVOR_COMPONENT_CAP: usize = 1 << 21;

/// `X_{σ^origin ω, n} = ∩_{j=0}^{n} T^{-j}(H^c_{σ^{origin+j} ω})`, by a
/// backward sweep: start from `H^c` at depth `n` and alternately pull back
/// and intersect.
pub fn survivor_set(engine: &Engine, orbit: &FiberOrbit, origin: i64, n: usize, holes: &HoleField) -> Result<SurvivorSet> {
    orbit.covers(origin, origin + n as i64)?;
    let mut s = holes.hole(orbit, origin + n as i64).complement();
    if s.is_empty() {
        return Err(Error::EmptySurvivor { site: origin + n as i64, depth: 0 });
    }
    for j in (0..n).rev() {
        let site = origin + j as i64;
        let map = engine.map(orbit.symbol(site));
        s = map.pullback(&s).difference(holes.hole(orbit, site));
        if s.is_empty() {
            return Err(Error::EmptySurvivor { site, depth: n - j });
        }
        if s.len() > SURVIVOR_COMPONENT_CAP {
            return Err(Error::Unsupported(format!(
                "survivor set has more than {SURVIVOR_COMPONENT_CAP} components at depth {}",
                n - j
            )));
        }
    }
    Ok(SurvivorSet {
        origin,
        depth: n,
        body: s,
    })
}

/// Reference measure for survivor masses.
#[derive(Debug, Clone, Copy)]
pub enum SurvivorMeasure<'a> {
    Lebesgue,
    /// `φ̂ dLeb` for the given piecewise-constant density.
    Density(&'a StepFunction),
}

pub fn survivor_measure(survivor: &SurvivorSet, measure: SurvivorMeasure<'_>) -> f64 {
    match measure {
        SurvivorMeasure::Lebesgue => survivor.body.measure(),
        SurvivorMeasure::Density(f) => f.integral_over(&survivor.body),
    }
}

/// `log ν̂_{σ^origin ω,0}(1_{X_n} f)` through the open cocycle:
/// `ν_{n+1}(L_ε^{n+1} f) / ν_{n+1}(L_0^{n+1} 1)`. Exact on aligned grids,
/// and usable at depths where the interval engine would fragment.
pub fn survivor_log_mass(
    engine: &Engine,
    orbit: &FiberOrbit,
    masks: &dyn SiteMasks,
    origin: i64,
    n: usize,
    f: Option<&GridDensity>,
) -> Result<f64> {
    let cells = engine.grid().cells();
    let start: Vec<f64> = f.map(|d| d.values.clone()).unwrap_or_else(|| vec![1.0; cells]);
    let end = origin + n as i64 + 1;
    let (open, log_open) = engine.push_log_mass(orbit, origin, &start, n + 1, masks)?;
    if engine.lebesgue_conformal() {
        return Ok(log_open);
    }
    let (nu_open, _) = engine.nu(orbit, end, &open)?;
    let (closed, log_closed) = engine.push_log_mass(orbit, origin, &vec![1.0; cells], n + 1, &Closed)?;
    let (nu_closed, _) = engine.nu(orbit, end, &closed)?;
    Ok(log_open + nu_open.ln() - log_closed - nu_closed.ln())
}

/// Survivor log-masses `log ν̂(X_{ω,k})` for every k in `0..=n`, from one
/// open push (Lebesgue-conformal weights only).
pub fn survivor_log_mass_curve(
    engine: &Engine,
    orbit: &FiberOrbit,
    masks: &dyn SiteMasks,
    n: usize,
    f: Option<&GridDensity>,
) -> Result<Vec<f64>> {
    if !engine.lebesgue_conformal() {
        return (0..=n)
            .map(|k| survivor_log_mass(engine, orbit, masks, 0, k, f))
            .collect();
    }
    let cells = engine.grid().cells();
    let start = f
        .map(|d| crate::transfer::GridDensity::from_values(d.values.clone()))
        .unwrap_or_else(|| GridDensity::constant(engine.grid(), 1.0));
    let push = engine.push_cocycle(orbit, 0, &start, n + 1, masks)?;
    debug_assert_eq!(push.densities[0].cells(), cells);
    Ok(push.log_mass[1..].to_vec())
}

/// Open spectral data along an orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSpectralData {
    pub lambda_closed: Vec<f64>,
    pub lambda_open: Vec<f64>,
    pub mean_log_lambda_closed: f64,
    pub mean_log_lambda_open: f64,
    /// Open density at the origin (unit ν̂-mass).
    pub phi_open: GridDensity,
    pub escape: EscapeRate,
    /// Matrices exact and holes aligned.
    pub exact: bool,
}

/// Two independent escape-rate estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeRate {
    /// `−(1/N) log(ν̂(X_{ω,N}) / ν̂(X_{ω,0}))`.
    pub decay: f64,
    /// `(1/N) Σ_{j<N} (log λ̂_{σ^j ω,0} − log λ̂_{σ^j ω,ε})`.
    pub pressure: f64,
    pub gap: f64,
    /// Expected size of the gap from boundary terms.
    pub tolerance: f64,
    pub n: usize,
}

/// Per-step closed and open multipliers after `burn_in`, n sites, with the
/// survivor-decay cross-check.
pub fn lambda_open(
    engine: &Engine,
    orbit: &FiberOrbit,
    holes: &HoleField,
    burn_in: usize,
    n: usize,
) -> Result<OpenSpectralData> {
    let masks = GridMasks::new(engine, orbit, holes);
    let closed = engine.multipliers(orbit, burn_in, n, &Closed)?;
    let open = engine.multipliers(orbit, burn_in, n, &masks)?;
    let escape = escape_from_runs(engine, orbit, &masks, &closed.log_lambda, &open.log_lambda, n)?;
    if escape.gap > 10.0 * escape.tolerance {
        return Err(Error::EstimatorDisagreement {
            what: "escape rate from survivor decay vs multipliers".into(),
            a: escape.decay,
            b: escape.pressure,
            tol: 10.0 * escape.tolerance,
        });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    Ok(OpenSpectralData {
        lambda_closed: closed.lambdas(),
        lambda_open: open.lambdas(),
        mean_log_lambda_closed: mean(&closed.log_lambda),
        mean_log_lambda_open: mean(&open.log_lambda),
        phi_open: open.origin_density,
        escape,
        exact: engine.exact() && masks.aligned,
    })
}

fn escape_from_runs(
    engine: &Engine,
    orbit: &FiberOrbit,
    masks: &GridMasks<'_>,
    log_closed: &[f64],
    log_open: &[f64],
    n: usize,
) -> Result<EscapeRate> {
    let n = n.max(1);
    let log_x0 = survivor_log_mass(engine, orbit, masks, 0, 0, None)?;
    let log_xn = survivor_log_mass(engine, orbit, masks, 0, n, None)?;
    let decay = -(log_xn - log_x0) / n as f64;
    let diffs: Vec<f64> = log_closed.iter().zip(log_open).map(|(c, o)| c - o).collect();
    let pressure = diffs.iter().sum::<f64>() / n as f64;
    let spread = diffs.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let tolerance = (1.0 + 2.0 * spread) / n as f64 + 1e-9;
    Ok(EscapeRate {
        decay,
        pressure,
        gap: (decay - pressure).abs(),
        tolerance,
        n,
    })
}

/// Escape rate over `n` steps by survivor decay and by the multiplier
/// (pressure) difference.
pub fn escape_rate(engine: &Engine, orbit: &FiberOrbit, holes: &HoleField, burn_in: usize, n: usize) -> Result<EscapeRate> {
    let masks = GridMasks::new(engine, orbit, holes);
    let closed = engine.multipliers(orbit, burn_in, n, &Closed)?;
    let open = engine.multipliers(orbit, burn_in, n, &masks)?;
    escape_from_runs(engine, orbit, &masks, &closed.log_lambda, &open.log_lambda, n)
}

/// Structural condition: at every symbol some full branch avoids the hole.
pub fn check_full_branch_outside(engine: &Engine, holes: &HoleField, orbit: &FiberOrbit) -> Result<()> {
    let check = |sym: usize, h: &IntervalSet| -> Result<()> {
        if engine.map(sym).full_branches_outside(h).is_empty() {
            return Err(Error::Validation(format!(
                "no full branch of map {sym} lies outside hole {h}"
            )));
        }
        Ok(())
    };
    match holes {
        HoleField::PerSymbol(v) => {
            for (s, h) in v.iter().enumerate() {
                check(s, h)?;
            }
        }
        HoleField::PerSite { .. } => {
            for site in orbit.lo()..=orbit.hi() {
                check(orbit.symbol(site), holes.hole(orbit, site))?;
            }
        }
    }
    Ok(())
}

/// `N, leb_survivor, mu_survivor, log_lambda_eps_mean, escape_decay, escape_pressure`.
pub fn escape_csv(rows: &[(usize, f64, f64, f64, EscapeRate)]) -> String {
    let mut s = String::from("N,leb_survivor,mu_survivor,log_lambda_eps_mean,escape_decay,escape_pressure\n");
    for (n, leb, mu, ll, e) in rows {
        s.push_str(&format!(
            "{n},{leb:.17e},{mu:.17e},{ll:.17e},{:.17e},{:.17e}\n",
            e.decay, e.pressure
        ));
    }
    s
}
