use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used when merging nearly touching intervals and when
/// snapping endpoints onto 0 and 1.
pub const SNAP: f64 = 1e-13;

/// Half-open interval `[lo, hi)` inside `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi > 1.0 || lo >= hi {
            return Err(Error::InvalidConfig(format!(
                "interval [{lo}, {hi}) is not a nonempty subinterval of [0,1]"
            )));
        }
        Ok(Self { lo, hi })
    }

    /// Construct without validation; callers guarantee `lo < hi`.
    #[inline]
    pub(crate) fn raw(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    #[inline]
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x < self.hi
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo < hi).then_some(Interval { lo, hi })
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.lo, self.hi)
    }
}

/// Finite union of disjoint half-open intervals of `[0, 1)`, kept sorted and
/// merged (touching neighbours are fused).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<Interval>", into = "Vec<Interval>")]
pub struct IntervalSet {
    intervals: Vec<Interval>,
    total: f64,
}

impl From<Vec<Interval>> for IntervalSet {
    fn from(v: Vec<Interval>) -> Self {
        IntervalSet::from_intervals(v)
    }
}

impl From<IntervalSet> for Vec<Interval> {
    fn from(s: IntervalSet) -> Self {
        s.intervals
    }
}

impl IntervalSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn full() -> Self {
        Self {
            intervals: vec![Interval::raw(0.0, 1.0)],
            total: 1.0,
        }
    }

    pub fn single(lo: f64, hi: f64) -> Self {
        Self::from_intervals(vec![Interval::raw(lo, hi)])
    }

    /// Normalize an arbitrary list of (possibly overlapping, unsorted)
    /// intervals: clip to `[0,1]`, drop empty pieces, sort and merge.
    pub fn from_intervals(mut v: Vec<Interval>) -> Self {
        for iv in v.iter_mut() {
            if iv.lo < SNAP {
                iv.lo = iv.lo.max(0.0);
                if iv.lo < SNAP {
                    iv.lo = 0.0;
                }
            }
            if iv.hi > 1.0 - SNAP {
                iv.hi = 1.0;
            }
        }
        v.retain(|iv| iv.hi > iv.lo);
        v.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        let mut out: Vec<Interval> = Vec::with_capacity(v.len());
        for iv in v {
            match out.last_mut() {
                Some(last) if iv.lo <= last.hi + SNAP => {
                    if iv.hi > last.hi {
                        last.hi = iv.hi;
                    }
                }
                _ => out.push(iv),
            }
        }
        let total = out.iter().map(Interval::len).sum();
        Self {
            intervals: out,
            total,
        }
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Lebesgue measure.
    pub fn measure(&self) -> f64 {
        self.total
    }

    pub fn contains(&self, x: f64) -> bool {
        let idx = self.intervals.partition_point(|iv| iv.hi <= x);
        idx < self.intervals.len() && self.intervals[idx].contains(x)
    }

    pub fn union(&self, other: &IntervalSet) -> IntervalSet {
        let mut v = self.intervals.clone();
        v.extend_from_slice(&other.intervals);
        Self::from_intervals(v)
    }

    pub fn intersection(&self, other: &IntervalSet) -> IntervalSet {
        let (a, b) = (&self.intervals, &other.intervals);
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < a.len() && j < b.len() {
            if let Some(iv) = a[i].intersect(&b[j]) {
                out.push(iv);
            }
            if a[i].hi < b[j].hi {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self::from_intervals(out)
    }

    pub fn intersect_interval(&self, iv: &Interval) -> IntervalSet {
        let out = self
            .intervals
            .iter()
            .filter_map(|x| x.intersect(iv))
            .collect();
        Self::from_intervals(out)
    }

    /// Complement in `[0, 1)`.
    pub fn complement(&self) -> IntervalSet {
        let mut out = Vec::with_capacity(self.intervals.len() + 1);
        let mut cursor = 0.0;
        for iv in &self.intervals {
            if iv.lo > cursor {
                out.push(Interval::raw(cursor, iv.lo));
            }
            cursor = iv.hi;
        }
        if cursor < 1.0 {
            out.push(Interval::raw(cursor, 1.0));
        }
        Self::from_intervals(out)
    }

    pub fn difference(&self, other: &IntervalSet) -> IntervalSet {
        self.intersection(&other.complement())
    }

    /// Subset test up to the snap tolerance.
    pub fn is_subset_of(&self, other: &IntervalSet) -> bool {
        self.difference(other).intervals.iter().all(|iv| iv.len() <= SNAP)
    }

    /// Largest absolute endpoint discrepancy, or infinity when the component
    /// counts differ.
    pub fn distance(&self, other: &IntervalSet) -> f64 {
        if self.len() != other.len() {
            return f64::INFINITY;
        }
        self.intervals
            .iter()
            .zip(&other.intervals)
            .map(|(a, b)| (a.lo - b.lo).abs().max((a.hi - b.hi).abs()))
            .fold(0.0, f64::max)
    }

    pub fn endpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.intervals.iter().flat_map(|iv| [iv.lo, iv.hi])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lo,hi\n");
        for iv in &self.intervals {
            s.push_str(&format!("{:.17e},{:.17e}\n", iv.lo, iv.hi));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut v = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("lo") || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(',');
            let parse = |p: Option<&str>| -> Result<f64> {
                p.and_then(|s| s.trim().parse::<f64>().ok()).ok_or_else(|| {
                    Error::InvalidConfig(format!("bad interval row {}: {line}", line_no + 1))
                })
            };
            let lo = parse(parts.next())?;
            let hi = parse(parts.next())?;
            v.push(Interval::new(lo, hi)?);
        }
        Ok(Self::from_intervals(v))
    }
}

impl fmt::Display for IntervalSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.intervals.is_empty() {
            return write!(f, "{{}}");
        }
        let parts: Vec<String> = self.intervals.iter().map(|iv| iv.to_string()).collect();
        write!(f, "{}", parts.join(" U "))
    }
}
