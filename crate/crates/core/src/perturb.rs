//! Small-hole perturbation theory: the perturbation size Δ̂, the return
//! ratios q̂^(k), the extremal index θ̂ and the first-order multiplier
//! formula.
//!
//! Return ratios are computed exactly with step functions. For the
//! Lebesgue-conformal weight `|T'|^{-1}` the transfer operator is the dual of
//! composition, so
//!
//! `μ_{σ^{-(k+1)}ω}(H ∩ T^{-1}H^c ∩ … ∩ T^{-(k+1)} H_ω) = ∫_{H_ω} P^{k+1}_ε (1_H φ)`
//!
//! and one forward sweep from every start site yields all `k` at once.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driving::FiberOrbit;
use crate::error::{Error, Result};
use crate::maps::{IntervalSet, StepFunction};
use crate::open::{escape_rate, GridMasks, HoleFamily, HoleField};
use crate::transfer::{Closed, Engine};

/// Return-ratio series `q̂^(0..=k_max)` at one fiber origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QSeries {
    pub origin: i64,
    pub eps: f64,
    pub values: Vec<f64>,
    /// Mass (relative to `μ(H_ω)`) that left the hole `k_max + 1` steps
    /// before the origin and has neither returned nor escaped; it bounds
    /// the truncated remainder for stationary driving.
    pub in_flight: f64,
}

impl QSeries {
    pub fn k_max(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    pub fn partial_sum(&self, k: usize) -> f64 {
        self.values.iter().take(k + 1).sum()
    }

    /// `1 − Σ_{k ≤ k_max} q̂^(k)`, the truncated extremal index.
    pub fn deficit(&self) -> f64 {
        1.0 - self.values.iter().sum::<f64>()
    }
}

fn require_lebesgue_conformal(engine: &Engine, what: &str) -> Result<()> {
    if engine.lebesgue_conformal() {
        Ok(())
    } else {
        Err(Error::Unsupported(format!(
            "{what} requires the weight |T'|^-1 (r = 1), got r = {}",
            engine.r()
        )))
    }
}

/// Invariant densities at sites `lo..=hi` as step functions.
fn density_steps(engine: &Engine, orbit: &FiberOrbit, lo: i64, hi: i64, burn_in: usize) -> Result<Vec<StepFunction>> {
    if engine.lebesgue_invariant() {
        return Ok(vec![StepFunction::constant(1.0); (hi - lo + 1) as usize]);
    }
    Ok(engine
        .density_path(orbit, lo, hi, burn_in, &Closed)?
        .iter()
        .map(|d| d.to_step())
        .collect())
}

/// μ̂(S) for a density step function, with ν̂ = Lebesgue.
fn mu_of(phi: &StepFunction, s: &IntervalSet) -> f64 {
    phi.integral_over(s)
}

/// Return-ratio series for every origin in `lo..=hi`.
///
/// Errors with `NotInOmegaPlus` when a hole carries no invariant mass.
pub fn qhat_table(
    engine: &Engine,
    orbit: &FiberOrbit,
    holes: &HoleField,
    eps: f64,
    lo: i64,
    hi: i64,
    k_max: usize,
    burn_in: usize,
) -> Result<Vec<QSeries>> {
    require_lebesgue_conformal(engine, "return ratios")?;
    if hi < lo {
        return Ok(Vec::new());
    }
    let first = lo - (k_max as i64 + 1);
    orbit.covers(first, hi)?;
    let phis = density_steps(engine, orbit, first, hi, burn_in)?;
    let phi = |site: i64| &phis[(site - first) as usize];

    let denominators: Vec<f64> = (lo..=hi).map(|t| mu_of(phi(t), holes.hole(orbit, t))).collect();
    for (i, d) in denominators.iter().enumerate() {
        if !(*d > 0.0) {
            return Err(Error::NotInOmegaPlus { site: lo + i as i64, eps });
        }
    }

    // One sweep per start: contributions (target site, k, numerator, in-flight).
    let sweeps: Vec<Vec<(i64, usize, f64, Option<f64>)>> = (first..hi)
        .into_par_iter()
        .map(|s| {
            let mut out = Vec::new();
            let mut f = phi(s).restrict(holes.hole(orbit, s));
            for k in 0..=k_max {
                let site = s + k as i64;
                if k > 0 {
                    f = f.remove(holes.hole(orbit, site));
                }
                f = f.transfer(engine.map(orbit.symbol(site)), 1.0);
                let target = site + 1;
                if target > hi {
                    break;
                }
                if target >= lo {
                    let h = holes.hole(orbit, target);
                    let num = f.integral_over(h);
                    let flight = (k == k_max).then(|| f.integral() - num);
                    out.push((target, k, num, flight));
                }
            }
            out
        })
        .collect();

    let mut table: Vec<QSeries> = (lo..=hi)
        .map(|origin| QSeries {
            origin,
            eps,
            values: vec![0.0; k_max + 1],
            in_flight: 0.0,
        })
        .collect();
    for contributions in sweeps {
        for (target, k, num, flight) in contributions {
            let idx = (target - lo) as usize;
            let d = denominators[idx];
            table[idx].values[k] = num / d;
            if let Some(fl) = flight {
                table[idx].in_flight = fl / d;
            }
        }
    }
    Ok(table)
}

/// Return ratios `q̂^(0..=k_max)` at the origin ω.
pub fn qhat(engine: &Engine, orbit: &FiberOrbit, holes: &HoleField, eps: f64, k_max: usize, burn_in: usize) -> Result<QSeries> {
    Ok(qhat_table(engine, orbit, holes, eps, 0, 0, k_max, burn_in)?.remove(0))
}

/// Extremal-index estimate at the origin down a shrinking ε schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub origin: i64,
    pub k_max: usize,
    pub schedule: Vec<f64>,
    /// `1 − Σ_{k ≤ K} q̂^(k)` per ε.
    pub raw: Vec<f64>,
    pub in_flight: Vec<f64>,
    /// Successive schedule values agree within the tolerance at the
    /// finest pair.
    pub converged: bool,
    pub tolerance: f64,
}

impl ThetaEstimate {
    /// Value at the finest ε.
    pub fn value_raw(&self) -> f64 {
        *self.raw.last().unwrap_or(&f64::NAN)
    }

    pub fn value_clamped(&self) -> f64 {
        self.value_raw().clamp(0.0, 1.0)
    }
}

/// Default geometric schedule `ε_j = ε₀·2^{-j}`, `j = 0..=10`.
pub fn geometric_schedule(eps0: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|j| eps0 * 0.5f64.powi(j as i32)).collect()
}

/// Successive-difference tolerance at which the ε → 0 limit is declared.
pub const THETA_TOLERANCE: f64 = 1e-4;

/// θ̂ at the origin for each ε of a nested schedule.
pub fn theta(
    engine: &Engine,
    orbit: &FiberOrbit,
    family: &HoleFamily,
    schedule: &[f64],
    k_max: usize,
    burn_in: usize,
) -> Result<ThetaEstimate> {
    family.check_nesting(schedule)?;
    let series: Vec<QSeries> = schedule
        .par_iter()
        .map(|&eps| qhat(engine, orbit, &family.at(eps), eps, k_max, burn_in))
        .collect::<Result<_>>()?;
    let raw: Vec<f64> = series.iter().map(QSeries::deficit).collect();
    let converged = raw.len() >= 2 && (raw[raw.len() - 1] - raw[raw.len() - 2]).abs() < THETA_TOLERANCE;
    Ok(ThetaEstimate {
        origin: 0,
        k_max,
        schedule: schedule.to_vec(),
        raw,
        in_flight: series.iter().map(|s| s.in_flight).collect(),
        converged,
        tolerance: THETA_TOLERANCE,
    })
}

/// θ̂ at every origin of `0..n` at one ε, and its orbit average (the
/// Birkhoff estimate of `∫θ dm`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaField {
    pub eps: f64,
    pub k_max: usize,
    pub raw: Vec<f64>,
    pub in_flight: Vec<f64>,
}

impl ThetaField {
    pub fn mean(&self) -> f64 {
        self.raw.iter().sum::<f64>() / self.raw.len().max(1) as f64
    }

    /// Birkhoff average of `t_ω θ̂_ω` with a per-symbol scaling.
    pub fn weighted_mean(&self, orbit: &FiberOrbit, t: &[f64]) -> f64 {
        self.raw
            .iter()
            .enumerate()
            .map(|(j, th)| t[orbit.symbol(j as i64)] * th)
            .sum::<f64>()
            / self.raw.len().max(1) as f64
    }
}

pub fn theta_field(
    engine: &Engine,
    orbit: &FiberOrbit,
    holes: &HoleField,
    eps: f64,
    n: usize,
    k_max: usize,
    burn_in: usize,
) -> Result<ThetaField> {
    let table = qhat_table(engine, orbit, holes, eps, 0, n as i64 - 1, k_max, burn_in)?;
    Ok(ThetaField {
        eps,
        k_max,
        raw: table.iter().map(QSeries::deficit).collect(),
        in_flight: table.iter().map(|s| s.in_flight).collect(),
    })
}

/// `Δ̂_{ω,ε} = λ̂_{ω,0} μ̂_{ω,0}(H_{ω,ε})` at the origin.
pub fn delta(engine: &Engine, orbit: &FiberOrbit, holes: &HoleField, burn_in: usize) -> Result<f64> {
    let closed = engine.multipliers(orbit, burn_in, 1, &Closed)?;
    let lambda0 = closed.log_lambda[0].exp();
    Ok(lambda0 * hole_mass(engine, orbit, holes, &closed.origin_density, 0)?)
}

/// `μ̂(H_site) = ν̂(1_H φ̂)` for a density of unit ν̂-mass.
fn hole_mass(
    engine: &Engine,
    orbit: &FiberOrbit,
    holes: &HoleField,
    phi: &crate::transfer::GridDensity,
    site: i64,
) -> Result<f64> {
    let h = holes.hole(orbit, site);
    if h.is_empty() {
        return Ok(0.0);
    }
    if engine.lebesgue_conformal() {
        return Ok(phi.to_step().integral_over(h));
    }
    let mask = engine.grid().survival_mask(h);
    let inside: Vec<f64> = phi.values.iter().zip(&mask).map(|(p, m)| p * (1.0 - m)).collect();
    Ok(engine.nu(orbit, site, &inside)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderRow {
    pub eps: f64,
    pub lambda_diff: f64,
    pub delta: f64,
    /// `(λ̂_0 − λ̂_ε) / Δ̂`; undefined for empty holes.
    pub ratio: Option<f64>,
    pub theta_target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderTable {
    pub rows: Vec<FirstOrderRow>,
}

impl FirstOrderTable {
    pub fn ratios(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.ratio).collect()
    }

    /// The tail of the ratio sequence (from the first row on) is monotone.
    pub fn tail_monotone(&self, from: usize) -> bool {
        let r = self.ratios();
        let tail = &r[from.min(r.len())..];
        tail.windows(2).all(|w| w[1] <= w[0]) || tail.windows(2).all(|w| w[1] >= w[0])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps,lambda_diff,delta,ratio,theta_target\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{},{}\n",
                r.eps,
                r.lambda_diff,
                r.delta,
                r.ratio.map_or("nan".into(), |v| format!("{v:.17e}")),
                r.theta_target.map_or("nan".into(), |v| format!("{v:.17e}")),
            ));
        }
        s
    }
}

/// Ratios `(λ̂_0 − λ̂_ε) / Δ̂_ε` at the origin down the schedule; `theta`
/// (when supplied) fills the target column row by row.
pub fn first_order_check(
    engine: &Engine,
    orbit: &FiberOrbit,
    family: &HoleFamily,
    schedule: &[f64],
    burn_in: usize,
    theta_target: Option<&ThetaEstimate>,
) -> Result<FirstOrderTable> {
    let closed = engine.multipliers(orbit, burn_in, 1, &Closed)?;
    let lambda0 = closed.log_lambda[0].exp();
    let rows = schedule
        .par_iter()
        .enumerate()
        .map(|(j, &eps)| {
            let holes = family.at(eps);
            let masks = GridMasks::new(engine, orbit, &holes);
            let open = engine.multipliers(orbit, burn_in, 1, &masks)?;
            let lambda_eps = open.log_lambda[0].exp();
            let d = lambda0 * hole_mass(engine, orbit, &holes, &closed.origin_density, 0)?;
            let diff = lambda0 - lambda_eps;
            let target = theta_target.and_then(|t| {
                t.schedule
                    .iter()
                    .position(|&e| e == eps)
                    .map(|i| t.raw[i])
                    .or_else(|| (t.schedule.len() == schedule.len()).then(|| t.raw[j]))
            });
            Ok(FirstOrderRow {
                eps,
                lambda_diff: diff,
                delta: d,
                ratio: (d > 0.0).then(|| diff / d),
                theta_target: target,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FirstOrderTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeAsymptoticsRow {
    pub eps: f64,
    pub escape_decay: f64,
    pub escape_pressure: f64,
    pub mu_hole: f64,
    /// `R̂_ε / μ̂(H_{ω,ε})` from the pressure estimate.
    pub ratio: f64,
}

/// Escape rate relative to the hole mass at the origin, down the schedule.
pub fn escape_rate_asymptotics(
    engine: &Engine,
    orbit: &FiberOrbit,
    family: &HoleFamily,
    schedule: &[f64],
    burn_in: usize,
    n: usize,
) -> Result<Vec<EscapeAsymptoticsRow>> {
    let closed = engine.multipliers(orbit, burn_in, 1, &Closed)?;
    schedule
        .par_iter()
        .map(|&eps| {
            let holes = family.at(eps);
            let esc = escape_rate(engine, orbit, &holes, burn_in, n)?;
            let mu = hole_mass(engine, orbit, &holes, &closed.origin_density, 0)?;
            Ok(EscapeAsymptoticsRow {
                eps,
                escape_decay: esc.decay,
                escape_pressure: esc.pressure,
                mu_hole: mu,
                ratio: esc.pressure / mu,
            })
        })
        .collect()
}

/// `omega_index, eps, k, qhat`.
pub fn qhat_csv(series: &[QSeries]) -> String {
    let mut s = String::from("omega_index,eps,k,qhat\n");
    for q in series {
        for (k, v) in q.values.iter().enumerate() {
            s.push_str(&format!("{},{:.17e},{},{:.17e}\n", q.origin, q.eps, k, v));
        }
    }
    s
}

/// `omega_index, eps, theta_raw, theta_clamped, tail`.
pub fn theta_csv(rows: &[(i64, f64, f64, f64)]) -> String {
    let mut s = String::from("omega_index,eps,theta_raw,theta_clamped,tail\n");
    for (origin, eps, raw, tail) in rows {
        s.push_str(&format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            origin,
            eps,
            raw,
            raw.clamp(0.0, 1.0),
            tail
        ));
    }
    s
}
