//! Quenched extreme value statistics: observation functions, threshold
//! schedules matching a prescribed hole mass, survivor-probability curves,
//! the Gumbel prediction and hitting-time Monte Carlo.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driving::{DrivingSystem, FiberOrbit};
use crate::error::{Error, Result};
use crate::maps::{IntervalSet, PiecewiseLinearMap, StepFunction};
use crate::open::{survivor_log_mass, GridMasks, HoleField};
use crate::perturb::{ThetaEstimate, ThetaField};
use crate::transfer::{Closed, Engine, Grid, GridDensity};

/// Unimodal observation `h_ω` attached to one fiber symbol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservationFunction {
    /// `h(x) = −|x − c|`.
    NegDistance { center: f64 },
    /// `h(x) = −log|x − c|`.
    NegLogDistance { center: f64 },
    /// `h(x) = −a (c − x)` left of `c`, `−b (x − c)` right of it.
    Custom { center: f64, left_slope: f64, right_slope: f64 },
}

impl ObservationFunction {
    pub fn center(&self) -> f64 {
        match *self {
            ObservationFunction::NegDistance { center }
            | ObservationFunction::NegLogDistance { center }
            | ObservationFunction::Custom { center, .. } => center,
        }
    }

    fn slopes(&self) -> (f64, f64) {
        match *self {
            ObservationFunction::Custom { left_slope, right_slope, .. } => (left_slope, right_slope),
            _ => (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.center();
        let (a, b) = self.slopes();
        if !(0.0..1.0).contains(&c) || !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidConfig(format!("invalid observation function {self:?}")));
        }
        Ok(())
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        let c = self.center();
        match *self {
            ObservationFunction::NegDistance { .. } => -(x - c).abs(),
            ObservationFunction::NegLogDistance { .. } => -(x - c).abs().ln(),
            ObservationFunction::Custom { left_slope, right_slope, .. } => {
                if x < c {
                    -left_slope * (c - x)
                } else {
                    -right_slope * (x - c)
                }
            }
        }
    }

    /// Level set `{h > z}` indexed by its (left-scaled) radius `ρ`:
    /// `(c − ρ/a, c + ρ/b) ∩ [0, 1)`; at `c = 0` this is `[0, ρ/b)`.
    pub fn level_set(&self, radius: f64) -> IntervalSet {
        if radius <= 0.0 {
            return IntervalSet::empty();
        }
        let c = self.center();
        let (a, b) = self.slopes();
        IntervalSet::single((c - radius / a).max(0.0), (c + radius / b).min(1.0))
    }

    /// Threshold `z` whose level set has radius `ρ`.
    pub fn threshold(&self, radius: f64) -> f64 {
        match self {
            ObservationFunction::NegLogDistance { .. } => -radius.ln(),
            _ => -radius,
        }
    }

    /// Smallest radius whose level set is the whole interval.
    fn full_radius(&self) -> f64 {
        let c = self.center();
        let (a, b) = self.slopes();
        (c * a).max((1.0 - c) * b)
    }
}

/// One solved hole: `μ̂(H) = (t + ξ)/N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub n: usize,
    pub symbol: usize,
    pub radius: f64,
    pub z: f64,
    pub hole: IntervalSet,
    pub mass: f64,
    pub xi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSchedule {
    pub t: Vec<f64>,
    pub n_list: Vec<usize>,
    /// `entries[i][s]`: the hole for `n_list[i]` at symbol `s`.
    pub entries: Vec<Vec<ThresholdEntry>>,
    pub snapped: bool,
}

impl ThresholdSchedule {
    pub fn holes(&self, i: usize) -> HoleField {
        HoleField::per_symbol(self.entries[i].iter().map(|e| e.hole.clone()).collect())
    }

    pub fn max_abs_xi(&self) -> f64 {
        self.entries
            .iter()
            .flatten()
            .fold(0.0f64, |m, e| m.max(e.xi.abs()))
    }

    /// `N, symbol, z, lo, hi, mass, xi`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("N,symbol,z,hole,mass,xi\n");
        for e in self.entries.iter().flatten() {
            s.push_str(&format!(
                "{},{},{:.17e},\"{}\",{:.17e},{:.17e}\n",
                e.n, e.symbol, e.z, e.hole, e.mass, e.xi
            ));
        }
        s
    }
}

/// Target-mass tolerance of the threshold solver, in units of `1/N`.
pub const XI_TOLERANCE: f64 = 1e-10;

fn solve_radius(obs: &ObservationFunction, phi: &StepFunction, target: f64, center_tol: f64) -> Result<f64> {
    let mass = |r: f64| phi.integral_over(&obs.level_set(r));
    let (mut lo, mut hi) = (0.0f64, obs.full_radius());
    let (mut m_lo, m_hi) = (0.0f64, mass(hi));
    if target >= m_hi {
        return Err(Error::SmallHoleViolated(format!(
            "target hole mass {target} reaches the full interval"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let m = mass(mid);
        if m < m_lo - center_tol || m > m_hi + center_tol {
            return Err(Error::NonMonotoneLevelSet { center: obs.center() });
        }
        if m < target {
            lo = mid;
            m_lo = m;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

fn snap_to_grid(set: &IntervalSet, grid: Grid) -> IntervalSet {
    let n = grid.cells() as f64;
    let iv = set.intervals();
    if iv.is_empty() {
        return set.clone();
    }
    let lo = (iv[0].lo * n).round() / n;
    let mut hi = (iv[iv.len() - 1].hi * n).round() / n;
    if hi <= lo {
        hi = lo + 1.0 / n;
    }
    IntervalSet::single(lo, hi.min(1.0))
}

/// Solve `μ̂_{ω,0}(H_{ω,N}) = t_ω / N` for every symbol and every N.
///
/// `densities[s]` is the invariant density used for symbol `s` (the
/// constant 1 for Lebesgue-preserving fibers). With `snap` the hole
/// endpoints are rounded to the grid and ξ reports the snapped mass.
pub fn solve_thresholds(
    observations: &[ObservationFunction],
    densities: &[StepFunction],
    t: &[f64],
    n_list: &[usize],
    snap: Option<Grid>,
) -> Result<ThresholdSchedule> {
    if observations.len() != t.len() || observations.len() != densities.len() {
        return Err(Error::InvalidConfig(
            "observation, density and scaling lists must have one entry per symbol".into(),
        ));
    }
    for (o, &ti) in observations.iter().zip(t) {
        o.validate()?;
        if !(ti >= 0.0 && ti.is_finite()) {
            return Err(Error::InvalidConfig(format!("scaling t = {ti} must be nonnegative")));
        }
    }
    if n_list.windows(2).any(|w| w[1] <= w[0]) || n_list.first() == Some(&0) {
        return Err(Error::InvalidConfig("N list must be positive and strictly increasing".into()));
    }
    let mut entries = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let mut row = Vec::with_capacity(observations.len());
        for (s, obs) in observations.iter().enumerate() {
            let phi = &densities[s];
            let target = t[s] / n as f64;
            let radius = if target == 0.0 {
                0.0
            } else {
                solve_radius(obs, phi, target, 1e-15)?
            };
            let mut hole = obs.level_set(radius);
            if let Some(g) = snap {
                hole = snap_to_grid(&hole, g);
            }
            let mass = phi.integral_over(&hole);
            row.push(ThresholdEntry {
                n,
                symbol: s,
                radius,
                z: obs.threshold(radius),
                hole,
                mass,
                xi: n as f64 * mass - t[s],
            });
        }
        entries.push(row);
    }
    for w in entries.windows(2) {
        for (a, b) in w[0].iter().zip(&w[1]) {
            if !b.hole.is_subset_of(&a.hole) {
                return Err(Error::Validation(format!(
                    "threshold holes not nested between N = {} and N = {}",
                    a.n, b.n
                )));
            }
        }
    }
    Ok(ThresholdSchedule {
        t: t.to_vec(),
        n_list: n_list.to_vec(),
        entries,
        snapped: snap.is_some(),
    })
}

/// `exp(−∫ t_ω θ_ω dm)` with the integral as a Birkhoff average.
pub fn gumbel_prediction(theta: &ThetaField, orbit: &FiberOrbit, t: &[f64]) -> f64 {
    (-theta.weighted_mean(orbit, t)).exp()
}

/// `exp(−t θ)` for a single converged extremal-index estimate (constant
/// driving, constant scaling).
pub fn gumbel_prediction_constant(theta: &ThetaEstimate, t: f64) -> Result<f64> {
    if !theta.converged {
        return Err(Error::NonConvergence {
            what: "extremal index down the epsilon schedule".into(),
            distance: theta.raw.windows(2).last().map_or(f64::NAN, |w| (w[1] - w[0]).abs()),
        });
    }
    Ok((-t * theta.value_raw()).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub n: usize,
    /// `ν̂(X_{ω,N−1,ε_N})`.
    pub nu_survivor: f64,
    /// `μ̂(X_{ω,N−1,ε_N})`.
    pub mu_survivor: f64,
    /// `Π_{j<N} λ̂_{σ^j ω,ε_N} / λ̂_{σ^j ω,0}`.
    pub lambda_ratio: f64,
    pub gumbel_prediction: f64,
}

/// Grid used for the N-th row: a fixed grid, or `cells_per_n · N` cells
/// (keeps holes of mass `1/N` aligned).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveGrid {
    Fixed,
    PerN { cells_per_n: usize },
}

/// Survivor probabilities for every N of the schedule.
pub fn survivor_probability_curve(
    engine: &Engine,
    orbit: &FiberOrbit,
    schedule: &ThresholdSchedule,
    grid: CurveGrid,
    burn_in: usize,
    gumbel: f64,
) -> Result<Vec<CurveRow>> {
    schedule
        .n_list
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let local;
            let e = match grid {
                CurveGrid::Fixed => engine,
                CurveGrid::PerN { cells_per_n } => {
                    local = engine.with_grid(Grid::new(cells_per_n * n)?)?;
                    &local
                }
            };
            let holes = schedule.holes(i);
            let masks = GridMasks::new(e, orbit, &holes);
            let nu = survivor_log_mass(e, orbit, &masks, 0, n - 1, None)?.exp();
            let mu = if e.lebesgue_invariant() {
                nu
            } else {
                let closed = e.multipliers(orbit, burn_in, 0, &Closed)?;
                let phi: GridDensity = closed.origin_density;
                survivor_log_mass(e, orbit, &masks, 0, n - 1, Some(&phi))?.exp()
            };
            let open = e.multipliers(orbit, burn_in, n, &masks)?;
            let log_open: f64 = open.log_lambda.iter().sum();
            // For r = 1 with Lebesgue as the conformal measure λ̂_0 ≡ 1.
            let log_closed: f64 = if e.lebesgue_conformal() {
                0.0
            } else {
                e.multipliers(orbit, burn_in, n, &Closed)?.log_lambda.iter().sum()
            };
            Ok(CurveRow {
                n,
                nu_survivor: nu,
                mu_survivor: mu,
                lambda_ratio: (log_open - log_closed).exp(),
                gumbel_prediction: gumbel,
            })
        })
        .collect()
}

/// `N, nu_survivor, mu_survivor, lambda_ratio, gumbel_prediction`.
pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut s = String::from("N,nu_survivor,mu_survivor,lambda_ratio,gumbel_prediction\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            r.n, r.nu_survivor, r.mu_survivor, r.lambda_ratio, r.gumbel_prediction
        ));
    }
    s
}

/// Inverse-CDF sampler for a nonnegative step function of unit integral.
#[derive(Debug, Clone)]
pub struct StepSampler {
    breaks: Vec<f64>,
    values: Vec<f64>,
    cumulative: Vec<f64>,
}

impl StepSampler {
    pub fn new(phi: &StepFunction) -> Result<Self> {
        let breaks = phi.breaks().to_vec();
        let values = phi.values().to_vec();
        if values.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidConfig("sampling density must be nonnegative".into()));
        }
        let mut cumulative = vec![0.0];
        for (i, v) in values.iter().enumerate() {
            let c = cumulative[i] + v * (breaks[i + 1] - breaks[i]);
            cumulative.push(c);
        }
        let total = *cumulative.last().unwrap();
        if !(total > 0.0) {
            return Err(Error::InvalidConfig("sampling density has zero mass".into()));
        }
        for c in cumulative.iter_mut() {
            *c /= total;
        }
        Ok(Self {
            breaks,
            values,
            cumulative,
        })
    }

    pub fn sample(&self, u: f64) -> f64 {
        let i = match self.cumulative.partition_point(|&c| c <= u) {
            0 => 0,
            k => (k - 1).min(self.values.len() - 1),
        };
        let (c0, c1) = (self.cumulative[i], self.cumulative[i + 1]);
        let (x0, x1) = (self.breaks[i], self.breaks[i + 1]);
        if c1 <= c0 {
            return x0;
        }
        (x0 + (u - c0) / (c1 - c0) * (x1 - x0)).min(x1)
    }
}

/// Hitting-time sample and its fit to the exponential law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingTimes {
    pub tau: Vec<u64>,
    pub scaled: Vec<f64>,
    /// Rate of the limiting exponential law.
    pub rate: f64,
    pub ks: f64,
    /// Trajectories that ran past the precomputed orbit buffer.
    pub extended: usize,
    /// Trajectories still unabsorbed at the step cap.
    pub censored: usize,
}

impl HittingTimes {
    /// `sample, tau, scaled_tau`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("sample,tau,scaled_tau\n");
        for (i, (t, x)) in self.tau.iter().zip(&self.scaled).enumerate() {
            s.push_str(&format!("{i},{t},{x:.17e}\n"));
        }
        s
    }

    /// Empirical survival function at the given scaled times.
    pub fn survival(&self, at: &[f64]) -> Vec<f64> {
        let mut sorted = self.scaled.clone();
        sorted.sort_by(f64::total_cmp);
        at.iter()
            .map(|&x| 1.0 - sorted.partition_point(|&v| v <= x) as f64 / sorted.len() as f64)
            .collect()
    }
}

/// Kolmogorov–Smirnov distance between a sample and `Exp(rate)`.
pub fn ks_exponential(sample: &[f64], rate: f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in s.iter().enumerate() {
        let f = 1.0 - (-rate * x).exp();
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Bits kept from the state at every step; the rest are redrawn.
const KEPT_BITS: i32 = 40;
const FRESH_BITS: u32 = 16;

/// Keep the leading bits of `y` and redraw the trailing ones, so orbits of
/// expanding maps do not collapse onto dyadic rationals in floating point.
#[inline]
fn refresh(y: f64, fresh: u64) -> f64 {
    let scale = 2f64.powi(KEPT_BITS);
    let low = (fresh as f64 + 0.5) / (1u64 << FRESH_BITS) as f64;
    (((y * scale).floor() + low) / scale).min(1.0 - f64::EPSILON / 2.0)
}

/// Hitting-time Monte Carlo settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HittingSettings {
    pub samples: usize,
    pub master_seed: u64,
    /// Step cap as a multiple of `1/μ̂(H_ω)`.
    pub cap_multiple: f64,
}

/// First random hitting times `τ(x) = min{n ≥ 1 : T^n_ω x ∈ H_{σ^n ω}}`
/// for `x ~ μ̂_{ω,0}`, scaled by `μ̂(H_ω)`, compared with `Exp(rate)`.
///
/// Sample `i` uses the ChaCha8 stream `i` of the master seed, so results
/// do not depend on the worker count.
#[allow(clippy::too_many_arguments)]
pub fn hitting_time_mc(
    driving: &DrivingSystem,
    maps: &[PiecewiseLinearMap],
    orbit: &FiberOrbit,
    holes: &HoleField,
    phi0: &StepFunction,
    mu_hole: f64,
    rate: f64,
    settings: HittingSettings,
) -> Result<HittingTimes> {
    if !(mu_hole > 0.0) {
        return Err(Error::NotInOmegaPlus { site: 0, eps: mu_hole });
    }
    if mu_hole > 0.5 {
        return Err(Error::SmallHoleViolated(format!("hole mass {mu_hole} exceeds 1/2")));
    }
    if !(rate > 0.0) {
        return Err(Error::InvalidConfig(format!("exponential rate {rate} must be positive")));
    }
    let sampler = StepSampler::new(phi0)?;
    let cap = (settings.cap_multiple / mu_hole).ceil() as u64;
    let hi = orbit.hi();
    let results: Vec<(u64, bool, bool)> = (0..settings.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(settings.master_seed);
            rng.set_stream(i as u64);
            let mut x = sampler.sample(crate::driving::unit_f64(rng.next_u64()));
            let mut bits = 0u64;
            let mut avail = 0u32;
            let mut extended = false;
            let mut n = 0u64;
            while n < cap {
                let site = n as i64;
                let sym = if site <= hi {
                    orbit.symbol(site)
                } else {
                    extended = true;
                    driving.symbol_at(site)
                };
                if avail < FRESH_BITS {
                    bits = rng.next_u64();
                    avail = 64;
                }
                let fresh = bits & ((1 << FRESH_BITS) - 1);
                bits >>= FRESH_BITS;
                avail -= FRESH_BITS;
                x = refresh(maps[sym].evaluate(x), fresh);
                n += 1;
                let next = site + 1;
                let hole = if next <= hi {
                    holes.hole(orbit, next)
                } else {
                    match holes {
                        HoleField::PerSymbol(v) => &v[driving.symbol_at(next)],
                        HoleField::PerSite { fallback, .. } => &fallback[driving.symbol_at(next)],
                    }
                };
                if hole.contains(x) {
                    return (n, extended, false);
                }
            }
            (cap, extended, true)
        })
        .collect();
    let tau: Vec<u64> = results.iter().map(|r| r.0).collect();
    let scaled: Vec<f64> = tau.iter().map(|&t| t as f64 * mu_hole).collect();
    let ks = ks_exponential(&scaled, rate);
    Ok(HittingTimes {
        tau,
        scaled,
        rate,
        ks,
        extended: results.iter().filter(|r| r.1).count(),
        censored: results.iter().filter(|r| r.2).count(),
    })
}
