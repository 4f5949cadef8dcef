use serde::{Deserialize, Serialize};

use super::grid::{Grid, GridDensity, MatrixCache, TransferMatrix};
use crate::driving::FiberOrbit;
use crate::error::{Error, Result};
use crate::maps::PiecewiseLinearMap;

/// Survival masks along an orbit; `None` means no hole at that site.
pub trait SiteMasks: Sync {
    fn mask(&self, site: i64) -> Option<&[f64]>;

    /// Masks are all trivial (closed system).
    fn is_closed(&self) -> bool {
        false
    }
}

/// The closed system: no holes anywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct Closed;

impl SiteMasks for Closed {
    fn mask(&self, _site: i64) -> Option<&[f64]> {
        None
    }

    fn is_closed(&self) -> bool {
        true
    }
}

/// Tunables of the grid engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineSettings {
    /// Burn-in for backward density limits.
    pub density_burn_in: usize,
    /// Forward steps used by conformal sandwiches.
    pub sandwich_steps: usize,
    /// Early exit once the sandwich is narrower than this (relative).
    pub sandwich_tol: f64,
    /// Sup-distance tolerance for density convergence (relative).
    pub density_tol: f64,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            density_burn_in: 50,
            sandwich_steps: 60,
            sandwich_tol: 1e-14,
            density_tol: 1e-8,
        }
    }
}

/// Weighted transfer cocycle of a family of fiber maps on one grid.
#[derive(Debug)]
pub struct Engine {
    cache: MatrixCache,
    r: f64,
    pub settings: EngineSettings,
    lebesgue_fast_path: bool,
}

/// Conformal sandwich `[inf L^n f / L^n 1, sup L^n f / L^n 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    pub lo: f64,
    pub hi: f64,
    /// Raw (not intersected) bounds after each step, starting with n = 0.
    pub history: Vec<(f64, f64)>,
}

impl Sandwich {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Normalized cocycle iterates with their log-masses.
#[derive(Debug, Clone, PartialEq)]
pub struct CocyclePush {
    /// `L^k f / ∫ L^k f` for k = 0..=n.
    pub densities: Vec<GridDensity>,
    /// `log ∫ L^k f dLeb` for k = 0..=n.
    pub log_mass: Vec<f64>,
}

/// Per-step multipliers of a (possibly open) cocycle.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierRun {
    /// `log λ̂_{σ^j ω}` for j = 0..n.
    pub log_lambda: Vec<f64>,
    /// Widths of the sandwiches used for each ν̂ evaluation (zero when ν̂
    /// is Lebesgue).
    pub sandwich_width: Vec<f64>,
    /// Density at the origin after burn-in (unit ν̂-mass).
    pub origin_density: GridDensity,
}

impl MultiplierRun {
    pub fn lambdas(&self) -> Vec<f64> {
        self.log_lambda.iter().map(|l| l.exp()).collect()
    }

    pub fn birkhoff_mean(&self) -> f64 {
        self.log_lambda.iter().sum::<f64>() / self.log_lambda.len().max(1) as f64
    }
}

impl Engine {
    pub fn new(maps: Vec<PiecewiseLinearMap>, grid: Grid, r: f64) -> Result<Self> {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::InvalidConfig(format!("weight exponent must be >= 0, got {r}")));
        }
        if maps.is_empty() {
            return Err(Error::InvalidConfig("no fiber maps".into()));
        }
        let lebesgue_fast_path = r == 1.0 && maps.iter().all(|m| m.preserves_lebesgue());
        let cache = MatrixCache::new(maps, grid);
        cache.warm(r);
        Ok(Self {
            cache,
            r,
            settings: EngineSettings::default(),
            lebesgue_fast_path,
        })
    }

    pub fn with_settings(mut self, settings: EngineSettings) -> Self {
        self.settings = settings;
        self
    }

    /// Same maps and grid, another weight exponent.
    pub fn with_weight(&self, r: f64) -> Result<Self> {
        Ok(Self::new(self.cache.maps().to_vec(), self.cache.grid(), r)?.with_settings(self.settings))
    }

    /// Same maps and weight, another grid.
    pub fn with_grid(&self, grid: Grid) -> Result<Self> {
        Ok(Self::new(self.cache.maps().to_vec(), grid, self.r)?.with_settings(self.settings))
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn grid(&self) -> Grid {
        self.cache.grid()
    }

    pub fn maps(&self) -> &[PiecewiseLinearMap] {
        self.cache.maps()
    }

    pub fn map(&self, symbol: usize) -> &PiecewiseLinearMap {
        &self.cache.maps()[symbol]
    }

    pub fn matrix(&self, symbol: usize) -> std::sync::Arc<TransferMatrix> {
        self.cache.get(symbol, self.r)
    }

    /// The closed conformal measure is Lebesgue (weight `1/|T'|`).
    pub fn lebesgue_conformal(&self) -> bool {
        self.r == 1.0
    }

    /// Lebesgue is conformal and invariant for every map.
    pub fn lebesgue_invariant(&self) -> bool {
        self.lebesgue_fast_path
    }

    /// All matrices are exact on this grid.
    pub fn exact(&self) -> bool {
        self.cache.all_exact(self.r)
    }

    pub fn check_symbols(&self, orbit: &FiberOrbit) -> Result<()> {
        let k = self.maps().len();
        if let Some(&s) = orbit.symbols().iter().find(|&&s| s >= k) {
            return Err(Error::InvalidConfig(format!(
                "orbit uses symbol {s} but only {k} fiber maps are defined"
            )));
        }
        Ok(())
    }

    #[inline]
    fn symbol(&self, orbit: &FiberOrbit, site: i64) -> Result<usize> {
        orbit.try_symbol(site).ok_or(Error::OrbitTooShort {
            need_lo: site,
            need_hi: site,
            have_lo: orbit.lo(),
            have_hi: orbit.hi(),
        })
    }

    /// One step of the cocycle at `site`: `L_{σ^site ω}(f ⊙ mask)`.
    pub fn step(&self, orbit: &FiberOrbit, site: i64, f: &[f64], mask: Option<&[f64]>) -> Result<Vec<f64>> {
        let m = self.matrix(self.symbol(orbit, site)?);
        Ok(m.apply(f, mask))
    }

    /// `f, L f, L² f, …` from `start`, renormalized each step by the
    /// Lebesgue mass, which is reported separately in log form.
    pub fn push_cocycle(
        &self,
        orbit: &FiberOrbit,
        start: i64,
        f: &GridDensity,
        n: usize,
        masks: &dyn SiteMasks,
    ) -> Result<CocyclePush> {
        orbit.covers(start, start + n as i64 - 1)?;
        let m0 = f.integral();
        if !(m0 > 0.0) {
            return Err(Error::MassUnderflow { site: start, step: 0 });
        }
        let mut cur = f.values.iter().map(|v| v / m0).collect::<Vec<_>>();
        let mut densities = vec![GridDensity::from_values(cur.clone())];
        let mut log_mass = vec![m0.ln()];
        let mut acc = m0.ln();
        let mut next = vec![0.0; cur.len()];
        for k in 0..n {
            let site = start + k as i64;
            let mat = self.matrix(orbit.symbol(site));
            mat.apply_into(&cur, masks.mask(site), &mut next);
            let mass = next.iter().sum::<f64>() / next.len() as f64;
            if !(mass > 1e-300) || !mass.is_finite() {
                return Err(Error::MassUnderflow { site, step: k + 1 });
            }
            acc += mass.ln();
            for v in next.iter_mut() {
                *v /= mass;
            }
            std::mem::swap(&mut cur, &mut next);
            densities.push(GridDensity::from_values(cur.clone()));
            log_mass.push(acc);
        }
        Ok(CocyclePush { densities, log_mass })
    }

    /// Streaming variant of [`Engine::push_cocycle`]: returns the final
    /// normalized iterate and `log ∫ L^n f dLeb`.
    pub fn push_log_mass(
        &self,
        orbit: &FiberOrbit,
        start: i64,
        f: &[f64],
        n: usize,
        masks: &dyn SiteMasks,
    ) -> Result<(Vec<f64>, f64)> {
        if n > 0 {
            orbit.covers(start, start + n as i64 - 1)?;
        }
        let m0 = f.iter().sum::<f64>() / f.len() as f64;
        if !(m0 > 0.0) {
            return Err(Error::MassUnderflow { site: start, step: 0 });
        }
        let mut cur: Vec<f64> = f.iter().map(|v| v / m0).collect();
        let mut next = vec![0.0; cur.len()];
        let mut acc = m0.ln();
        for k in 0..n {
            let site = start + k as i64;
            let mat = self.matrix(orbit.symbol(site));
            mat.apply_into(&cur, masks.mask(site), &mut next);
            let mass = next.iter().sum::<f64>() / next.len() as f64;
            if !(mass > 1e-300) || !mass.is_finite() {
                return Err(Error::MassUnderflow { site, step: k + 1 });
            }
            acc += mass.ln();
            for v in next.iter_mut() {
                *v /= mass;
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok((cur, acc))
    }

    /// Sandwich estimate of `ν_{σ^site ω, 0}(f)` from `n` closed steps.
    ///
    /// The reported bounds are the running intersection of the raw bounds,
    /// so they are nested; the raw bounds are kept in `history`.
    pub fn conformal_sandwich(&self, orbit: &FiberOrbit, site: i64, f: &[f64], n: usize) -> Result<Sandwich> {
        let ratio_bounds = |num: &[f64], den: &[f64]| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (a, b) in num.iter().zip(den) {
                if *b > 0.0 {
                    let q = a / b;
                    lo = lo.min(q);
                    hi = hi.max(q);
                }
            }
            (lo, hi)
        };
        let mut num = f.to_vec();
        let mut den = vec![1.0; f.len()];
        let (mut lo, mut hi) = ratio_bounds(&num, &den);
        let mut history = vec![(lo, hi)];
        let scale = f.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut k = 0;
        while k < n && hi - lo > self.settings.sandwich_tol * scale {
            let s = site + k as i64;
            let mat = self.matrix(self.symbol(orbit, s)?);
            num = mat.apply(&num, None);
            den = mat.apply(&den, None);
            // keep magnitudes in range; the ratio is unaffected
            let c = den.iter().fold(0.0f64, |m, v| m.max(*v));
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::MassUnderflow { site: s, step: k + 1 });
            }
            for (a, b) in num.iter_mut().zip(den.iter_mut()) {
                *a /= c;
                *b /= c;
            }
            let (l, h) = ratio_bounds(&num, &den);
            history.push((l, h));
            lo = lo.max(l);
            hi = hi.min(h);
            k += 1;
        }
        if lo > hi {
            // rounding can make the intersection cross by an ulp or so
            let mid = 0.5 * (lo + hi);
            lo = mid;
            hi = mid;
        }
        Ok(Sandwich { lo, hi, history })
    }

    /// `ν̂_{σ^site ω, 0}(f)` together with the uncertainty width.
    pub fn nu(&self, orbit: &FiberOrbit, site: i64, f: &[f64]) -> Result<(f64, f64)> {
        if self.lebesgue_conformal() {
            return Ok((f.iter().sum::<f64>() / f.len() as f64, 0.0));
        }
        let s = self.conformal_sandwich(orbit, site, f, self.settings.sandwich_steps)?;
        Ok((s.mid(), s.width()))
    }

    /// Backward limit `L^B_{σ^{site-B} ω} 1` normalized to unit ν̂-mass,
    /// with convergence certified against the limit from `B - 1` steps.
    pub fn density_at(&self, orbit: &FiberOrbit, site: i64, burn_in: usize, masks: &dyn SiteMasks) -> Result<GridDensity> {
        let n = self.grid().cells();
        if self.lebesgue_fast_path && masks.is_closed() {
            return Ok(GridDensity::constant(self.grid(), 1.0));
        }
        let burn_in = burn_in.max(2);
        orbit.covers(site - burn_in as i64, site)?;
        let one = vec![1.0; n];
        let (a, _) = self.push_log_mass(orbit, site - burn_in as i64, &one, burn_in, masks)?;
        let (b, _) = self.push_log_mass(orbit, site - burn_in as i64 + 1, &one, burn_in - 1, masks)?;
        let (na, _) = self.nu(orbit, site, &a)?;
        let (nb, _) = self.nu(orbit, site, &b)?;
        let a: Vec<f64> = a.iter().map(|v| v / na).collect();
        let b: Vec<f64> = b.iter().map(|v| v / nb).collect();
        let sup = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let distance = a
            .iter()
            .zip(&b)
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
            / sup.max(f64::MIN_POSITIVE);
        if distance > self.settings.density_tol {
            return Err(Error::NonConvergence {
                what: format!("density at site {site} after {burn_in} steps"),
                distance,
            });
        }
        Ok(GridDensity::from_values(a))
    }

    /// Densities at every site of `lo..=hi` from one forward push started
    /// `burn_in` steps before `lo`. Each is normalized to unit Lebesgue mass
    /// (unit ν̂-mass when ν̂ is Lebesgue).
    pub fn density_path(
        &self,
        orbit: &FiberOrbit,
        lo: i64,
        hi: i64,
        burn_in: usize,
        masks: &dyn SiteMasks,
    ) -> Result<Vec<GridDensity>> {
        if self.lebesgue_fast_path && masks.is_closed() {
            return Ok(vec![GridDensity::constant(self.grid(), 1.0); (hi - lo + 1).max(0) as usize]);
        }
        let start = lo - burn_in as i64;
        orbit.covers(start, hi)?;
        let (first, _) = self.push_log_mass(orbit, start, &vec![1.0; self.grid().cells()], burn_in, masks)?;
        let mut cur = first;
        let mut out = Vec::with_capacity((hi - lo + 1) as usize);
        out.push(GridDensity::from_values(cur.clone()));
        for site in lo..hi {
            let (next, _) = self.push_log_mass(orbit, site, &cur, 1, masks)?;
            cur = next;
            out.push(GridDensity::from_values(cur.clone()));
        }
        Ok(out)
    }

    /// Per-step multipliers `λ̂_{σ^j ω} = ν̂_{σ^{j+1}ω,0}(1_{J} L f_j) / ν̂_{σ^j ω,0}(1_{J} f_j)`
    /// for j = 0..n, where `f_j` is the cocycle iterate after `burn_in`
    /// steps and `1_J` the survival mask of the respective site (≡ 1 for the
    /// closed system).
    pub fn multipliers(
        &self,
        orbit: &FiberOrbit,
        burn_in: usize,
        n: usize,
        masks: &dyn SiteMasks,
    ) -> Result<MultiplierRun> {
        self.check_symbols(orbit)?;
        orbit.covers(-(burn_in as i64), n as i64)?;
        let cells = self.grid().cells();
        let open_mass = |site: i64, f: &[f64]| -> Result<(f64, f64)> {
            match masks.mask(site) {
                Some(m) => {
                    let g: Vec<f64> = f.iter().zip(m).map(|(a, b)| a * b).collect();
                    self.nu(orbit, site, &g)
                }
                None => self.nu(orbit, site, f),
            }
        };
        let (mut cur, _) = if self.lebesgue_fast_path && masks.is_closed() {
            (vec![1.0; cells], 0.0)
        } else {
            self.push_log_mass(orbit, -(burn_in as i64), &vec![1.0; cells], burn_in, masks)?
        };
        let (nu0, _) = self.nu(orbit, 0, &cur)?;
        let origin_density = GridDensity::from_values(cur.iter().map(|v| v / nu0).collect());
        let (mut mass, w0) = open_mass(0, &cur)?;
        let mut log_lambda = Vec::with_capacity(n);
        let mut sandwich_width = vec![w0];
        let mut next = vec![0.0; cells];
        for j in 0..n {
            let site = j as i64;
            if !(mass > 0.0) {
                return Err(Error::MassUnderflow { site, step: j });
            }
            let mat = self.matrix(orbit.symbol(site));
            mat.apply_into(&cur, masks.mask(site), &mut next);
            let (new_mass, w) = open_mass(site + 1, &next)?;
            if !(new_mass > 0.0) || !new_mass.is_finite() {
                return Err(Error::MassUnderflow { site: site + 1, step: j + 1 });
            }
            log_lambda.push((new_mass / mass).ln());
            sandwich_width.push(w);
            // renormalize so the next site's open mass is 1
            for v in next.iter_mut() {
                *v /= new_mass;
            }
            mass = 1.0;
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(MultiplierRun {
            log_lambda,
            sandwich_width,
            origin_density,
        })
    }
}

/// Closed multipliers `λ̂_{σ^j ω, 0}`, j = 0..n, and their Birkhoff mean.
pub fn lambda_closed(engine: &Engine, orbit: &FiberOrbit, burn_in: usize, n: usize) -> Result<MultiplierRun> {
    engine.multipliers(orbit, burn_in, n, &Closed)
}

/// Closed invariant density `φ̂_{ω,0}` at the origin.
pub fn invariant_density(engine: &Engine, orbit: &FiberOrbit, burn_in: usize) -> Result<GridDensity> {
    engine.density_at(orbit, 0, burn_in, &Closed)
}

/// Conformal sandwich at the origin for `f ≥ 0`.
pub fn conformal_sandwich(engine: &Engine, orbit: &FiberOrbit, f: &GridDensity, n: usize) -> Result<Sandwich> {
    engine.conformal_sandwich(orbit, 0, &f.values, n)
}

/// Cocycle push from the origin along the closed system.
pub fn push_cocycle(engine: &Engine, orbit: &FiberOrbit, f: &GridDensity, n: usize) -> Result<CocyclePush> {
    engine.push_cocycle(orbit, 0, f, n, &Closed)
}
