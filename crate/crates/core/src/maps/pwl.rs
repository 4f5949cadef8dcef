use serde::{Deserialize, Serialize};

use super::interval::{Interval, IntervalSet, SNAP};
use crate::error::{Error, Result};

/// Largest double strictly below one; evaluations are clamped into `[0, 1)`.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Affine monotone branch `x ↦ slope·x + intercept` on a half-open domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub domain: Interval,
    pub slope: f64,
    pub intercept: f64,
}

impl Branch {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    #[inline]
    pub fn inverse(&self, y: f64) -> f64 {
        (y - self.intercept) / self.slope
    }

    #[inline]
    pub fn increasing(&self) -> bool {
        self.slope > 0.0
    }

    /// Image of the domain, as a half-open interval in `[0, 1]`.
    pub fn image(&self) -> Interval {
        let a = snap_unit(self.apply(self.domain.lo));
        let b = snap_unit(self.apply(self.domain.hi));
        Interval::raw(a.min(b), a.max(b))
    }

    /// Image of the subinterval `[lo, hi)` of the domain.
    pub fn image_of(&self, lo: f64, hi: f64) -> (f64, f64) {
        let a = snap_unit(self.apply(lo));
        let b = snap_unit(self.apply(hi));
        (a.min(b), a.max(b))
    }

    pub fn is_full(&self) -> bool {
        let im = self.image();
        im.lo == 0.0 && im.hi == 1.0
    }

    /// Preimage of `[y0, y1)` intersected with the branch image, clipped to
    /// the domain.
    pub fn preimage(&self, y0: f64, y1: f64) -> Option<Interval> {
        let im = self.image();
        let lo = y0.max(im.lo);
        let hi = y1.min(im.hi);
        if lo >= hi {
            return None;
        }
        let (mut a, mut b) = (self.inverse(lo), self.inverse(hi));
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        let a = a.max(self.domain.lo);
        let b = b.min(self.domain.hi);
        (a < b).then(|| Interval::raw(a, b))
    }
}

/// Snap values within the merge tolerance of 0 or 1 onto them and clamp the
/// rest into `[0, 1]`.
#[inline]
pub(crate) fn snap_unit(y: f64) -> f64 {
    if y < SNAP {
        0.0
    } else if y > 1.0 - SNAP {
        1.0
    } else {
        y
    }
}

/// Preset families of fiber maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum MapPreset {
    /// `x ↦ βx mod 1`.
    Beta { beta: f64 },
    /// Three full branches: two decreasing outer branches and a central
    /// branch of slope `s` through the fixed point 1/2.
    ThreeBranch { s: f64 },
    /// `k` identical increasing full branches.
    LinearFull { k: usize },
    /// `x ↦ βx + shift mod 1`.
    BetaShift { beta: f64, shift: f64 },
    Custom { branches: Vec<Branch> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearMap {
    branches: Vec<Branch>,
    preset: MapPreset,
}

impl PiecewiseLinearMap {
    pub fn from_preset(preset: MapPreset) -> Result<Self> {
        let branches = match &preset {
            MapPreset::Beta { beta } => beta_shift_branches(*beta, 0.0)?,
            MapPreset::BetaShift { beta, shift } => beta_shift_branches(*beta, *shift)?,
            MapPreset::LinearFull { k } => {
                if *k < 2 {
                    return Err(Error::InvalidConfig("linear_full needs k >= 2".into()));
                }
                let kf = *k as f64;
                (0..*k)
                    .map(|i| Branch {
                        domain: Interval::raw(i as f64 / kf, (i + 1) as f64 / kf),
                        slope: kf,
                        intercept: -(i as f64),
                    })
                    .collect()
            }
            MapPreset::ThreeBranch { s } => {
                if !(*s > 1.0) || !s.is_finite() {
                    return Err(Error::InvalidConfig("three_branch needs s > 1".into()));
                }
                let a = (1.0 - 1.0 / s) / 2.0;
                vec![
                    Branch {
                        domain: Interval::raw(0.0, a),
                        slope: -1.0 / a,
                        intercept: 1.0,
                    },
                    Branch {
                        domain: Interval::raw(a, 1.0 - a),
                        slope: *s,
                        intercept: -(s - 1.0) / 2.0,
                    },
                    Branch {
                        domain: Interval::raw(1.0 - a, 1.0),
                        slope: -1.0 / a,
                        intercept: 1.0 / a,
                    },
                ]
            }
            MapPreset::Custom { branches } => branches.clone(),
        };
        let map = Self { branches, preset };
        map.check()?;
        Ok(map)
    }

    pub fn beta(beta: f64) -> Result<Self> {
        Self::from_preset(MapPreset::Beta { beta })
    }

    pub fn doubling() -> Self {
        Self::from_preset(MapPreset::LinearFull { k: 2 }).expect("doubling map")
    }

    pub fn linear_full(k: usize) -> Result<Self> {
        Self::from_preset(MapPreset::LinearFull { k })
    }

    pub fn three_branch(s: f64) -> Result<Self> {
        Self::from_preset(MapPreset::ThreeBranch { s })
    }

    fn check(&self) -> Result<()> {
        if self.branches.is_empty() {
            return Err(Error::InvalidConfig("map has no branches".into()));
        }
        let mut cursor = 0.0;
        for (i, b) in self.branches.iter().enumerate() {
            if !(b.slope.is_finite() && b.intercept.is_finite()) || b.slope == 0.0 {
                return Err(Error::InvalidConfig(format!("branch {i}: slope must be nonzero")));
            }
            if (b.domain.lo - cursor).abs() > 1e-12 || b.domain.lo >= b.domain.hi {
                return Err(Error::InvalidConfig(format!(
                    "branch domains must partition [0,1): branch {i} starts at {}",
                    b.domain.lo
                )));
            }
            cursor = b.domain.hi;
            for x in [b.domain.lo, b.domain.hi] {
                let y = b.apply(x);
                if !(-1e-12..=1.0 + 1e-12).contains(&y) {
                    return Err(Error::InvalidConfig(format!(
                        "branch {i}: image leaves [0,1] (T({x}) = {y})"
                    )));
                }
            }
        }
        if (cursor - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig("branch domains do not reach 1".into()));
        }
        let images = IntervalSet::from_intervals(self.branches.iter().map(Branch::image).collect());
        if images != IntervalSet::full() {
            return Err(Error::InvalidConfig(format!(
                "map is not surjective: branch images cover {images}"
            )));
        }
        Ok(())
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn preset(&self) -> &MapPreset {
        &self.preset
    }

    #[inline]
    pub fn branch_index(&self, x: f64) -> usize {
        let i = self.branches.partition_point(|b| b.domain.hi <= x);
        i.min(self.branches.len() - 1)
    }

    /// `T(x)` by the branch whose half-open domain contains `x`.
    #[inline]
    pub fn evaluate(&self, x: f64) -> f64 {
        let y = self.branches[self.branch_index(x)].apply(x);
        y.clamp(0.0, BELOW_ONE)
    }

    #[inline]
    pub fn derivative_magnitude(&self, x: f64) -> f64 {
        self.branches[self.branch_index(x)].slope.abs()
    }

    /// One preimage per branch whose (half-open) image holds `y`.
    pub fn preimage_points(&self, y: f64) -> Vec<(f64, usize)> {
        let mut out = Vec::new();
        for (i, b) in self.branches.iter().enumerate() {
            let im = b.image();
            let inside = if b.increasing() {
                im.lo <= y && y < im.hi
            } else {
                im.lo < y && y <= im.hi
            };
            if inside {
                let x = b.inverse(y).clamp(b.domain.lo, b.domain.hi);
                out.push((x, i));
            }
        }
        out
    }

    /// `T^{-1}(S)`.
    pub fn pullback(&self, s: &IntervalSet) -> IntervalSet {
        let mut pieces = Vec::new();
        for b in &self.branches {
            for iv in s.intervals() {
                if let Some(p) = b.preimage(iv.lo, iv.hi) {
                    pieces.push(p);
                }
            }
        }
        IntervalSet::from_intervals(pieces)
    }

    /// Pull back weighted pieces: each preimage piece carries the product of
    /// the incoming weight and `|slope|^{1-r}` (the Jacobian times the
    /// geometric weight `|slope|^{-r}`).
    pub fn weighted_pullback(&self, pieces: &[(Interval, f64)], r: f64) -> Vec<(Interval, f64)> {
        let mut out = Vec::new();
        for b in &self.branches {
            let w = b.slope.abs().powf(1.0 - r);
            for (iv, weight) in pieces {
                if let Some(p) = b.preimage(iv.lo, iv.hi) {
                    out.push((p, weight * w));
                }
            }
        }
        out
    }

    /// Forward image of a set.
    pub fn image(&self, s: &IntervalSet) -> IntervalSet {
        let mut pieces = Vec::new();
        for b in &self.branches {
            for iv in s.intervals() {
                if let Some(p) = iv.intersect(&b.domain) {
                    let (lo, hi) = b.image_of(p.lo, p.hi);
                    if lo < hi {
                        pieces.push(Interval::raw(lo, hi));
                    }
                }
            }
        }
        IntervalSet::from_intervals(pieces)
    }

    /// Indices of full branches whose domain avoids `hole`.
    pub fn full_branches_outside(&self, hole: &IntervalSet) -> Vec<usize> {
        self.branches
            .iter()
            .enumerate()
            .filter(|(_, b)| {
                b.is_full() && hole.intersect_interval(&b.domain).measure() <= SNAP
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// True when every branch is a full branch.
    pub fn all_full(&self) -> bool {
        self.branches.iter().all(Branch::is_full)
    }

    /// True when Lebesgue measure is invariant: `Σ_b 1/|slope_b|` over the
    /// branches covering each point equals one. Checked on every piece of
    /// the partition generated by the branch images.
    pub fn preserves_lebesgue(&self) -> bool {
        let mut cuts: Vec<f64> = vec![0.0, 1.0];
        for b in &self.branches {
            let im = b.image();
            cuts.push(im.lo);
            cuts.push(im.hi);
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() <= SNAP);
        cuts.windows(2).all(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            let density: f64 = self
                .branches
                .iter()
                .filter(|b| b.image().contains(mid))
                .map(|b| 1.0 / b.slope.abs())
                .sum();
            (density - 1.0).abs() < 1e-12
        })
    }

    /// Breakpoints strictly inside (0, 1).
    pub fn breakpoints(&self) -> Vec<f64> {
        self.branches[1..].iter().map(|b| b.domain.lo).collect()
    }

    pub fn min_expansion(&self) -> f64 {
        self.branches
            .iter()
            .map(|b| b.slope.abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// True when every slope is an integer and every branch maps grid points
    /// of the `n`-cell grid to grid points — then the grid is Markov and the
    /// cell-wise transfer is exact.
    pub fn is_markov_on_grid(&self, n: usize) -> bool {
        let nf = n as f64;
        let on_grid = |x: f64| ((x * nf) - (x * nf).round()).abs() < 1e-9;
        self.branches.iter().all(|b| {
            let s = b.slope.abs();
            (s - s.round()).abs() < 1e-12
                && on_grid(b.domain.lo)
                && on_grid(b.domain.hi)
                && on_grid(b.apply(b.domain.lo))
        })
    }
}

fn beta_shift_branches(beta: f64, shift: f64) -> Result<Vec<Branch>> {
    if !(beta > 1.0) || !beta.is_finite() {
        return Err(Error::InvalidConfig(format!("beta must exceed 1, got {beta}")));
    }
    if !(0.0..1.0).contains(&shift) {
        return Err(Error::InvalidConfig(format!("shift must lie in [0,1), got {shift}")));
    }
    let mut out = Vec::new();
    let mut k = 0usize;
    let mut lo = 0.0;
    while lo < 1.0 {
        // branch on which βx + shift ∈ [k, k+1)
        let hi = ((k as f64 + 1.0 - shift) / beta).min(1.0);
        if hi > lo {
            let hi_snapped = if 1.0 - hi < 1e-12 { 1.0 } else { hi };
            out.push(Branch {
                domain: Interval::raw(lo, hi_snapped),
                slope: beta,
                intercept: shift - k as f64,
            });
            lo = hi_snapped;
        }
        k += 1;
    }
    Ok(out)
}
