//! Random absolutely continuous conditionally invariant measures
//! `η_ω = 1_{H^c_ω} φ̂_{ω,ε} dν̂ / ν̂(1_{H^c_ω} φ̂_{ω,ε})`, their defining
//! identities, and correlation-decay rates of the closed system.

use serde::{Deserialize, Serialize};

use crate::driving::FiberOrbit;
use crate::error::{Error, Result};
use crate::maps::{pullback_word, IntervalSet, PiecewiseLinearMap, StepFunction};
use crate::open::{survivor_log_mass, survivor_measure, survivor_set, GridMasks, HoleField, SurvivorMeasure};
use crate::transfer::{Closed, Engine, GridDensity, SiteMasks};

/// Conditionally invariant density at one site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaccimDensity {
    pub site: i64,
    /// `1_{H^c} φ̂_ε / ν̂_0(1_{H^c} φ̂_ε)`: unit ν̂-mass, zero on hole cells.
    pub density: GridDensity,
    /// `ν̂_0(1_{H^c} φ̂_ε)` for `φ̂_ε` of unit ν̂-mass.
    pub normalization: f64,
    /// `α̂ = λ̂_ε / λ̂_0`.
    pub alpha: f64,
    pub lambda_closed: f64,
    pub lambda_open: f64,
}

impl RaccimDensity {
    /// `η(S)` for ν̂ = Lebesgue.
    fn measure(&self, s: &IntervalSet) -> f64 {
        self.density.to_step().integral_over(s)
    }
}

fn mask_or_one(masks: &dyn SiteMasks, site: i64, cells: usize) -> Vec<f64> {
    masks.mask(site).map_or_else(|| vec![1.0; cells], <[f64]>::to_vec)
}

/// Conditionally invariant densities at sites `0..=n`.
pub fn raccim_densities(
    engine: &Engine,
    orbit: &FiberOrbit,
    holes: &HoleField,
    burn_in: usize,
    n: usize,
) -> Result<Vec<RaccimDensity>> {
    let masks = GridMasks::new(engine, orbit, holes);
    let cells = engine.grid().cells();
    let open = engine.multipliers(orbit, burn_in, n + 1, &masks)?;
    let closed = engine.multipliers(orbit, burn_in, n + 1, &Closed)?;
    let mut phi = open.origin_density.values.clone();
    let mut out = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let site = j as i64;
        let mask = mask_or_one(&masks, site, cells);
        let restricted: Vec<f64> = phi.iter().zip(&mask).map(|(p, m)| p * m).collect();
        let (c, _) = engine.nu(orbit, site, &restricted)?;
        if !(c > 0.0) {
            return Err(Error::MassUnderflow { site, step: j });
        }
        let (l0, le) = (closed.log_lambda[j].exp(), open.log_lambda[j].exp());
        out.push(RaccimDensity {
            site,
            density: GridDensity::from_values(restricted.iter().map(|v| v / c).collect()),
            normalization: c,
            alpha: le / l0,
            lambda_closed: l0,
            lambda_open: le,
        });
        if j < n {
            let next = engine.step(orbit, site, &phi, masks.mask(site))?;
            let (m, _) = engine.nu(orbit, site + 1, &next)?;
            phi = next.iter().map(|v| v / m).collect();
        }
    }
    Ok(out)
}

/// Conditionally invariant density at the origin.
pub fn raccim_density(engine: &Engine, orbit: &FiberOrbit, holes: &HoleField, burn_in: usize) -> Result<RaccimDensity> {
    Ok(raccim_densities(engine, orbit, holes, burn_in, 0)?.remove(0))
}

fn require_lebesgue_conformal(engine: &Engine, what: &str) -> Result<()> {
    if engine.lebesgue_conformal() {
        Ok(())
    } else {
        Err(Error::Unsupported(format!("{what} requires r = 1, got r = {}", engine.r())))
    }
}

fn word<'a>(engine: &'a Engine, orbit: &FiberOrbit, from: i64, n: usize) -> Vec<&'a PiecewiseLinearMap> {
    (0..n).map(|j| engine.map(orbit.symbol(from + j as i64))).collect()
}

/// `|η_ω(T^{-n}A ∩ X_{ω,n}) − η_{σ^n ω}(A) η_ω(X_{ω,n})|` with exact
/// pullbacks.
pub fn conditional_invariance_check(
    engine: &Engine,
    orbit: &FiberOrbit,
    holes: &HoleField,
    a: &IntervalSet,
    n: usize,
    burn_in: usize,
) -> Result<f64> {
    require_lebesgue_conformal(engine, "conditional invariance check")?;
    let eta = raccim_densities(engine, orbit, holes, burn_in, n)?;
    let x = survivor_set(engine, orbit, 0, n, holes)?;
    let lhs_set = pullback_word(&word(engine, orbit, 0, n), a).intersection(&x.body);
    let lhs = eta[0].measure(&lhs_set);
    let rhs = eta[n].measure(a) * eta[0].measure(&x.body);
    Ok((lhs - rhs).abs())
}

/// Both sides of `η_ω(X_{ω,n}) = Π_{j<n} λ̂_{σ^j ω,ε} / λ̂_{σ^j ω,0}`.
///
/// The left side uses exact survivor sets when ν̂ is Lebesgue and the
/// open grid cocycle otherwise.
pub fn survivor_mass_identity(
    engine: &Engine,
    orbit: &FiberOrbit,
    holes: &HoleField,
    n: usize,
    burn_in: usize,
) -> Result<(f64, f64)> {
    let eta = raccim_densities(engine, orbit, holes, burn_in, n)?;
    let product: f64 = eta[..n].iter().map(|e| e.alpha.ln()).sum::<f64>().exp();
    let lhs = if engine.lebesgue_conformal() {
        let x = survivor_set(engine, orbit, 0, n, holes)?;
        survivor_measure(&x, SurvivorMeasure::Density(&eta[0].density.to_step()))
    } else {
        let masks = GridMasks::new(engine, orbit, holes);
        survivor_log_mass(engine, orbit, &masks, 0, n, Some(&eta[0].density))?.exp()
    };
    Ok((lhs, product))
}

/// `η_ω(X_{ω,n+m})` and `η_ω(X_{ω,n}) η_{σ^n ω}(X_{σ^n ω,m})`, exact.
pub fn survivor_multiplicativity(
    engine: &Engine,
    orbit: &FiberOrbit,
    holes: &HoleField,
    n: usize,
    m: usize,
    burn_in: usize,
) -> Result<(f64, f64)> {
    require_lebesgue_conformal(engine, "survivor multiplicativity")?;
    let eta = raccim_densities(engine, orbit, holes, burn_in, n)?;
    let whole = eta[0].measure(&survivor_set(engine, orbit, 0, n + m, holes)?.body);
    let first = eta[0].measure(&survivor_set(engine, orbit, 0, n, holes)?.body);
    let second = eta[n].measure(&survivor_set(engine, orbit, n as i64, m, holes)?.body);
    Ok((whole, first * second))
}

/// Relative sup residual of `L_ω h_ω = λ̂_{ω,0} α̂_ω h_{σω}` on the cells
/// of `H^c_{σω}` (off the hole, where `h_{σω}` is positive).
pub fn forward_identity_residual(engine: &Engine, orbit: &FiberOrbit, holes: &HoleField, burn_in: usize) -> Result<f64> {
    let eta = raccim_densities(engine, orbit, holes, burn_in, 1)?;
    let masks = GridMasks::new(engine, orbit, holes);
    let mask1 = mask_or_one(&masks, 1, engine.grid().cells());
    let pushed = engine.step(orbit, 0, &eta[0].density.values, None)?;
    let c = eta[0].lambda_closed * eta[0].alpha;
    let scale = eta[1].density.sup_abs();
    let mut worst = 0.0f64;
    for ((p, h), m) in pushed.iter().zip(&eta[1].density.values).zip(&mask1) {
        if *m == 1.0 {
            worst = worst.max((p - c * h).abs());
        }
    }
    Ok(worst / scale)
}

/// Both sides of `∫ h · L_ε^n f dν = λ_0^n ∫_{X_{ω,n−1}} f · h∘T^n dν` for
/// cell functions `f, h`: the left through the grid cocycle, the right
/// with exact pullbacks of the cells of `h`.
#[doc(hidden)]
pub fn useful_identity_sides(
    engine: &Engine,
    orbit: &FiberOrbit,
    holes: &HoleField,
    f: &[f64],
    h: &[f64],
    n: usize,
) -> Result<(f64, f64)> {
    require_lebesgue_conformal(engine, "open duality identity")?;
    if n == 0 {
        return Err(Error::InvalidConfig("the duality identity needs n >= 1".into()));
    }
    let masks = GridMasks::new(engine, orbit, holes);
    let mut g = f.to_vec();
    for j in 0..n {
        g = engine.step(orbit, j as i64, &g, masks.mask(j as i64))?;
    }
    let cells = engine.grid().cells();
    let lhs = g.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / cells as f64;

    let x = survivor_set(engine, orbit, 0, n - 1, holes)?;
    let fs = StepFunction::from_cells(f);
    let w = word(engine, orbit, 0, n);
    let width = 1.0 / cells as f64;
    let mut rhs = 0.0;
    for (i, &hv) in h.iter().enumerate() {
        if hv == 0.0 {
            continue;
        }
        let cell = IntervalSet::single(i as f64 * width, ((i + 1) as f64 * width).min(1.0));
        rhs += hv * fs.integral_over(&pullback_word(&w, &cell).intersection(&x.body));
    }
    Ok((lhs, rhs))
}

/// Correlation gaps and their exponential fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub gaps: Vec<(usize, f64)>,
    pub kappa: f64,
    pub r_squared: f64,
    pub fit_lags: (usize, usize),
    pub floor: f64,
}

impl DecayReport {
    /// `lag, gap`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lag,gap\n");
        for (k, g) in &self.gaps {
            s.push_str(&format!("{k},{g:.17e}\n"));
        }
        s
    }
}

/// Gaps below this are numerical noise.
pub const DECAY_FLOOR: f64 = 1e-12;

/// `|μ_ω((f∘T^n) h) − μ_{σ^n ω}(f) μ_ω(h)|` for `n = 1..=n_max`, with
/// the exact step engine: `μ_ω((f∘T^n) h) = ∫ f · P^n(h φ_ω)`.
pub fn correlation_gaps(
    engine: &Engine,
    orbit: &FiberOrbit,
    f: &StepFunction,
    h: &StepFunction,
    n_max: usize,
    burn_in: usize,
) -> Result<Vec<(usize, f64)>> {
    require_lebesgue_conformal(engine, "correlation gaps")?;
    let phis: Vec<StepFunction> = if engine.lebesgue_invariant() {
        vec![StepFunction::constant(1.0); n_max + 1]
    } else {
        engine
            .density_path(orbit, 0, n_max as i64, burn_in, &Closed)?
            .iter()
            .map(GridDensity::to_step)
            .collect()
    };
    let mu_h = h.mul(&phis[0]).integral();
    let mut g = h.mul(&phis[0]);
    let mut out = Vec::with_capacity(n_max);
    for k in 1..=n_max {
        g = g.transfer(engine.map(orbit.symbol(k as i64 - 1)), 1.0);
        let corr = f.mul(&g).integral();
        let mu_f = f.mul(&phis[k]).integral();
        out.push((k, (corr - mu_f * mu_h).abs()));
    }
    Ok(out)
}

/// Least-squares fit of `log gap = a + n log κ` over lags `min_lag..=n_max`
/// whose gap exceeds the noise floor.
pub fn decay_rate_estimate(
    engine: &Engine,
    orbit: &FiberOrbit,
    f: &StepFunction,
    h: &StepFunction,
    n_max: usize,
    min_lag: usize,
    burn_in: usize,
) -> Result<DecayReport> {
    let gaps = correlation_gaps(engine, orbit, f, h, n_max, burn_in)?;
    let pts: Vec<(f64, f64)> = gaps
        .iter()
        .filter(|(k, g)| *k >= min_lag && *g > DECAY_FLOOR)
        .map(|(k, g)| (*k as f64, g.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::DecayUnresolvable { floor: DECAY_FLOOR });
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(DecayReport {
        gaps,
        kappa: slope.exp(),
        r_squared,
        fit_lags: (pts[0].0 as usize, pts[pts.len() - 1].0 as usize),
        floor: DECAY_FLOOR,
    })
}
