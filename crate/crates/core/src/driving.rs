//! The driving system (Ω, m, σ): two-sided, reproducible sequences of fiber
//! symbols.
//!
//! Every kind is invertible: symbols exist at negative indices as well as
//! non-negative ones. An IID driving uses one ChaCha stream for indices
//! `n >= 0` and an independent one for `n < 0`, both random-access through
//! the generator word position, so any window of the orbit can be
//! materialized without generating its prefix.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FORWARD_STREAM: u64 = 0x5eed_f0f0;
const BACKWARD_STREAM: u64 = 0x5eed_b0b0;

/// Minimum denominator for the rational image of a rotation number.
pub const ROTATION_MIN_DENOMINATOR: i128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DrivingKind {
    Iid { p: Vec<f64>, seed: u64 },
    /// Irrational rotation coded by the arcs `[cuts[i], cuts[i+1])`;
    /// `cuts[0]` must be 0.
    Rotation {
        alpha: f64,
        cuts: Vec<f64>,
        angle: f64,
    },
    Periodic { word: Vec<usize> },
    Constant { symbol: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrivingSystem {
    kind: DrivingKind,
    symbols: usize,
    /// σ^offset has been applied: symbol(n) reads the base sequence at n + offset.
    offset: i64,
    cumulative: Vec<f64>,
    rotation: Option<(i128, i128)>,
}

impl DrivingSystem {
    pub fn new(kind: DrivingKind) -> Result<Self> {
        let (symbols, cumulative, rotation) = match &kind {
            DrivingKind::Iid { p, .. } => {
                if p.is_empty() || p.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                    return Err(Error::InvalidConfig(
                        "iid probabilities must be positive".into(),
                    ));
                }
                let total: f64 = p.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidConfig(format!(
                        "iid probabilities sum to {total}, not 1"
                    )));
                }
                let mut acc = 0.0;
                let cumulative = p
                    .iter()
                    .map(|&x| {
                        acc += x;
                        acc
                    })
                    .collect();
                (p.len(), cumulative, None)
            }
            DrivingKind::Rotation { alpha, cuts, angle } => {
                if !alpha.is_finite() || !angle.is_finite() {
                    return Err(Error::InvalidConfig("rotation parameters must be finite".into()));
                }
                if cuts.is_empty() || cuts[0] != 0.0 {
                    return Err(Error::InvalidConfig("rotation arcs must start at 0".into()));
                }
                if cuts.windows(2).any(|w| !(w[0] < w[1])) || *cuts.last().unwrap() >= 1.0 {
                    return Err(Error::InvalidConfig(
                        "rotation cut points must increase strictly inside [0,1)".into(),
                    ));
                }
                let frac = alpha.rem_euclid(1.0);
                let (p, q) = rational_approximation(frac, ROTATION_MIN_DENOMINATOR);
                (cuts.len(), Vec::new(), Some((p, q)))
            }
            DrivingKind::Periodic { word } => {
                if word.is_empty() {
                    return Err(Error::InvalidConfig("periodic word must be nonempty".into()));
                }
                (word.iter().max().unwrap() + 1, Vec::new(), None)
            }
            DrivingKind::Constant { symbol } => (symbol + 1, Vec::new(), None),
        };
        Ok(Self {
            kind,
            symbols,
            offset: 0,
            cumulative,
            rotation,
        })
    }

    pub fn kind(&self) -> &DrivingKind {
        &self.kind
    }

    /// Number of symbols in the alphabet (an upper bound on any symbol + 1).
    pub fn symbol_count(&self) -> usize {
        self.symbols
    }

    /// The driving system started at σω.
    pub fn shift(&self) -> Self {
        self.shifted(1)
    }

    pub fn shifted(&self, by: i64) -> Self {
        let mut out = self.clone();
        out.offset += by;
        out
    }

    /// Marginal law of the symbol at any fixed index.
    pub fn marginals(&self) -> Vec<f64> {
        match &self.kind {
            DrivingKind::Iid { p, .. } => p.clone(),
            DrivingKind::Rotation { cuts, .. } => {
                let mut out: Vec<f64> = cuts.windows(2).map(|w| w[1] - w[0]).collect();
                out.push(1.0 - cuts.last().unwrap());
                out
            }
            DrivingKind::Periodic { word } => {
                let mut out = vec![0.0; self.symbols];
                for &s in word {
                    out[s] += 1.0 / word.len() as f64;
                }
                out
            }
            DrivingKind::Constant { symbol } => {
                let mut out = vec![0.0; self.symbols];
                out[*symbol] = 1.0;
                out
            }
        }
    }

    /// Rational stand-in `p/q` for the rotation number, if this is a rotation.
    pub fn rotation_rational(&self) -> Option<(i128, i128)> {
        self.rotation
    }

    fn rotation_symbol(&self, n: i64) -> usize {
        let DrivingKind::Rotation { cuts, angle, .. } = &self.kind else {
            unreachable!()
        };
        let (p, q) = self.rotation.unwrap();
        let r = ((n as i128).rem_euclid(q) * p).rem_euclid(q);
        let pos = (angle + r as f64 / q as f64).rem_euclid(1.0);
        // arcs are [cuts[i], cuts[i+1])
        cuts.partition_point(|&c| c <= pos) - 1
    }

    fn iid_symbol(&self, u: f64) -> usize {
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cumulative.len() - 1)
    }

    /// Symbols at base indices `lo..=hi` (offset already applied by caller).
    fn base_symbols(&self, lo: i64, hi: i64) -> Vec<usize> {
        if hi < lo {
            return Vec::new();
        }
        match &self.kind {
            DrivingKind::Constant { symbol } => vec![*symbol; (hi - lo + 1) as usize],
            DrivingKind::Periodic { word } => (lo..=hi)
                .map(|n| word[n.rem_euclid(word.len() as i64) as usize])
                .collect(),
            DrivingKind::Rotation { .. } => (lo..=hi).map(|n| self.rotation_symbol(n)).collect(),
            DrivingKind::Iid { seed, .. } => {
                let mut out = Vec::with_capacity((hi - lo + 1) as usize);
                // backward part: base index n < 0 reads backward stream word -(n+1)
                if lo < 0 {
                    let top = hi.min(-1);
                    let mut back = Vec::with_capacity((top - lo + 1) as usize);
                    let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                    rng.set_stream(BACKWARD_STREAM);
                    let first = -(top + 1);
                    rng.set_word_pos(2 * first as u128);
                    for _ in lo..=top {
                        back.push(self.iid_symbol(unit_f64(rng.next_u64())));
                    }
                    back.reverse();
                    out.extend(back);
                }
                if hi >= 0 {
                    let start = lo.max(0);
                    let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                    rng.set_stream(FORWARD_STREAM);
                    rng.set_word_pos(2 * start as u128);
                    for _ in start..=hi {
                        out.push(self.iid_symbol(unit_f64(rng.next_u64())));
                    }
                }
                out
            }
        }
    }

    pub fn symbol_at(&self, n: i64) -> usize {
        self.base_symbols(n + self.offset, n + self.offset)[0]
    }
}

#[inline]
pub(crate) fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// First continued-fraction convergent of `x` with denominator at least `min_q`.
pub fn rational_approximation(x: f64, min_q: i128) -> (i128, i128) {
    let (mut p0, mut q0, mut p1, mut q1) = (0i128, 1i128, 1i128, 0i128);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        let ai = a as i128;
        let (p2, q2) = (ai * p1 + p0, ai * q1 + q0);
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
        if q1 >= min_q {
            return (p1, q1);
        }
        let f = r - a;
        if f < 1e-15 {
            break;
        }
        r = 1.0 / f;
    }
    // x is (numerically) rational with a small denominator: scale it up.
    let k = (min_q + q1 - 1) / q1.max(1);
    (p1 * k, q1 * k)
}

/// A materialized window `[-backward, forward]` of the symbol sequence of ω.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiberOrbit {
    symbols: Vec<usize>,
    backward: usize,
}

impl FiberOrbit {
    pub fn from_symbols(backward: usize, symbols: Vec<usize>) -> Self {
        assert!(symbols.len() > backward, "orbit must contain the origin");
        Self { symbols, backward }
    }

    pub fn backward(&self) -> usize {
        self.backward
    }

    pub fn forward(&self) -> usize {
        self.symbols.len() - 1 - self.backward
    }

    pub fn lo(&self) -> i64 {
        -(self.backward as i64)
    }

    pub fn hi(&self) -> i64 {
        self.forward() as i64
    }

    /// Symbol of σ^n ω.
    #[inline]
    pub fn symbol(&self, n: i64) -> usize {
        self.symbols[(n + self.backward as i64) as usize]
    }

    pub fn try_symbol(&self, n: i64) -> Option<usize> {
        let idx = n + self.backward as i64;
        (idx >= 0 && (idx as usize) < self.symbols.len()).then(|| self.symbols[idx as usize])
    }

    pub fn symbols(&self) -> &[usize] {
        &self.symbols
    }

    pub fn covers(&self, lo: i64, hi: i64) -> Result<()> {
        if lo < self.lo() || hi > self.hi() {
            return Err(Error::OrbitTooShort {
                need_lo: lo,
                need_hi: hi,
                have_lo: self.lo(),
                have_hi: self.hi(),
            });
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,symbol\n");
        for n in self.lo()..=self.hi() {
            out.push_str(&format!("{},{}\n", n, self.symbol(n)));
        }
        out
    }
}

/// Materialize σ^n ω for n in `[-backward, forward]`.
pub fn fiber_sequence(driving: &DrivingSystem, backward: usize, forward: usize) -> FiberOrbit {
    let lo = -(backward as i64) + driving.offset;
    let hi = forward as i64 + driving.offset;
    FiberOrbit {
        symbols: driving.base_symbols(lo, hi),
        backward,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_periodic_examples() {
        let c = DrivingSystem::new(DrivingKind::Constant { symbol: 0 }).unwrap();
        assert_eq!(fiber_sequence(&c, 0, 3).symbols(), &[0, 0, 0, 0]);
        let p = DrivingSystem::new(DrivingKind::Periodic { word: vec![0, 1] }).unwrap();
        assert_eq!(fiber_sequence(&p, 2, 2).symbols(), &[0, 1, 0, 1, 0]);
    }

    #[test]
    fn iid_frequency_law_of_large_numbers() {
        let d = DrivingSystem::new(DrivingKind::Iid {
            p: vec![0.5, 0.5],
            seed: 11,
        })
        .unwrap();
        let orbit = fiber_sequence(&d, 0, 100_000);
        let zeros = orbit.symbols().iter().filter(|&&s| s == 0).count();
        let freq = zeros as f64 / orbit.symbols().len() as f64;
        assert!((freq - 0.5).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn iid_random_access_matches_sequential() {
        let d = DrivingSystem::new(DrivingKind::Iid {
            p: vec![0.2, 0.3, 0.5],
            seed: 99,
        })
        .unwrap();
        let full = fiber_sequence(&d, 40, 40);
        for n in [-40i64, -17, -1, 0, 5, 40] {
            assert_eq!(d.symbol_at(n), full.symbol(n));
        }
    }

    #[test]
    fn rotation_coding_uses_large_denominator() {
        let golden = (5f64.sqrt() - 1.0) / 2.0;
        let d = DrivingSystem::new(DrivingKind::Rotation {
            alpha: golden,
            cuts: vec![0.0, 0.5],
            angle: 0.1,
        })
        .unwrap();
        let (p, q) = d.rotation_rational().unwrap();
        assert!(q >= ROTATION_MIN_DENOMINATOR);
        assert!((p as f64 / q as f64 - golden).abs() < 1e-11);
        // symbol at 0 is the arc containing the initial angle
        assert_eq!(d.symbol_at(0), 0);
        let orbit = fiber_sequence(&d, 0, 20_000);
        let ones = orbit.symbols().iter().filter(|&&s| s == 1).count() as f64;
        assert!((ones / orbit.symbols().len() as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn invalid_drivings_rejected() {
        assert!(DrivingSystem::new(DrivingKind::Iid { p: vec![0.5, 0.6], seed: 0 }).is_err());
        assert!(DrivingSystem::new(DrivingKind::Iid { p: vec![1.0, 0.0], seed: 0 }).is_err());
        assert!(DrivingSystem::new(DrivingKind::Periodic { word: vec![] }).is_err());
        assert!(DrivingSystem::new(DrivingKind::Rotation {
            alpha: 0.3,
            cuts: vec![0.2, 0.5],
            angle: 0.0
        })
        .is_err());
    }
}
