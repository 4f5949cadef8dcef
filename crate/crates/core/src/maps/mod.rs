//! Piecewise-linear monotone interval maps and exact interval arithmetic.

mod interval;
mod pwl;
mod step;

pub use interval::{Interval, IntervalSet, SNAP};
pub use pwl::{Branch, MapPreset, PiecewiseLinearMap};
pub use step::StepFunction;

/// Iterated pullback `T_{ω}^{-n}` along a word of maps: `maps[0]` acts first.
pub fn pullback_word(maps: &[&PiecewiseLinearMap], s: &IntervalSet) -> IntervalSet {
    maps.iter().rev().fold(s.clone(), |acc, m| m.pullback(&acc))
}
