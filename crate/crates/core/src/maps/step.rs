use super::interval::{IntervalSet, SNAP};
use super::pwl::PiecewiseLinearMap;

/// Right-continuous piecewise-constant function on `[0, 1)`.
///
/// `breaks` runs from 0 to 1; `values[i]` holds on `[breaks[i], breaks[i+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    breaks: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn constant(c: f64) -> Self {
        Self {
            breaks: vec![0.0, 1.0],
            values: vec![c],
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// `c · 1_S`.
    pub fn indicator(s: &IntervalSet, c: f64) -> Self {
        let mut breaks = vec![0.0];
        let mut values = Vec::new();
        for iv in s.intervals() {
            if iv.lo > *breaks.last().unwrap() {
                values.push(0.0);
                breaks.push(iv.lo);
            }
            values.push(c);
            breaks.push(iv.hi);
        }
        if *breaks.last().unwrap() < 1.0 {
            values.push(0.0);
            breaks.push(1.0);
        }
        let mut f = Self { breaks, values };
        f.compact();
        f
    }

    /// Function equal to `values[i]` on the `i`-th cell of a uniform grid.
    pub fn from_cells(values: &[f64]) -> Self {
        let n = values.len();
        let breaks = (0..=n).map(|i| i as f64 / n as f64).collect();
        let mut f = Self {
            breaks,
            values: values.to_vec(),
        };
        f.compact();
        f
    }

    pub fn from_parts(breaks: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(breaks.len(), values.len() + 1);
        assert!(breaks[0] == 0.0 && *breaks.last().unwrap() == 1.0);
        let mut f = Self { breaks, values };
        f.compact();
        f
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pieces(&self) -> usize {
        self.values.len()
    }

    /// Merge equal neighbours and drop zero-length pieces.
    fn compact(&mut self) {
        let mut breaks = Vec::with_capacity(self.breaks.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.values.len());
        breaks.push(0.0);
        for (i, &v) in self.values.iter().enumerate() {
            let hi = self.breaks[i + 1];
            if hi <= *breaks.last().unwrap() {
                continue;
            }
            match values.last() {
                Some(&last) if last == v => {
                    *breaks.last_mut().unwrap() = hi;
                }
                _ => {
                    values.push(v);
                    breaks.push(hi);
                }
            }
        }
        if values.is_empty() {
            values.push(0.0);
            breaks.push(1.0);
        }
        *breaks.last_mut().unwrap() = 1.0;
        self.breaks = breaks;
        self.values = values;
    }

    #[inline]
    fn piece_index(&self, x: f64) -> usize {
        let i = self.breaks.partition_point(|&b| b <= x);
        i.saturating_sub(1).min(self.values.len() - 1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.values[self.piece_index(x)]
    }

    /// Lebesgue integral over `[0, 1)`.
    pub fn integral(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v * (self.breaks[i + 1] - self.breaks[i]))
            .sum()
    }

    /// Lebesgue integral over `S`.
    pub fn integral_over(&self, s: &IntervalSet) -> f64 {
        let mut total = 0.0;
        for iv in s.intervals() {
            let mut i = self.piece_index(iv.lo);
            let mut x = iv.lo;
            while x < iv.hi && i < self.values.len() {
                let hi = self.breaks[i + 1].min(iv.hi);
                if hi > x {
                    total += self.values[i] * (hi - x);
                    x = hi;
                }
                i += 1;
            }
        }
        total
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, c: f64) {
        for v in self.values.iter_mut() {
            *v *= c;
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.scale(c);
        out
    }

    /// Pointwise combination on the common refinement.
    pub fn zip_with(&self, other: &StepFunction, op: impl Fn(f64, f64) -> f64) -> StepFunction {
        let mut breaks = Vec::with_capacity(self.breaks.len() + other.breaks.len());
        let mut values = Vec::with_capacity(self.values.len() + other.values.len());
        breaks.push(0.0);
        let (mut i, mut j) = (0, 0);
        while i < self.values.len() && j < other.values.len() {
            let hi = self.breaks[i + 1].min(other.breaks[j + 1]);
            values.push(op(self.values[i], other.values[j]));
            breaks.push(hi);
            if self.breaks[i + 1] <= hi {
                i += 1;
            }
            if other.breaks[j + 1] <= hi {
                j += 1;
            }
        }
        let mut f = StepFunction { breaks, values };
        f.compact();
        f
    }

    pub fn mul(&self, other: &StepFunction) -> StepFunction {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn add(&self, other: &StepFunction) -> StepFunction {
        self.zip_with(other, |a, b| a + b)
    }

    /// `f · 1_S`.
    pub fn restrict(&self, s: &IntervalSet) -> StepFunction {
        self.mul(&StepFunction::indicator(s, 1.0))
    }

    /// `f · 1_{S^c}`.
    pub fn remove(&self, s: &IntervalSet) -> StepFunction {
        if s.is_empty() {
            return self.clone();
        }
        self.mul(&StepFunction::indicator(&s.complement(), 1.0))
    }

    /// Cell averages on the uniform `n`-cell grid.
    pub fn cell_averages(&self, n: usize) -> Vec<f64> {
        let nf = n as f64;
        (0..n)
            .map(|i| {
                let cell = IntervalSet::single(i as f64 / nf, (i + 1) as f64 / nf);
                self.integral_over(&cell) * nf
            })
            .collect()
    }

    /// Exact transfer operator with weight `|slope|^{-r}`:
    /// `(L f)(y) = Σ_b |s_b|^{-r} f(T_b^{-1} y) 1_{T_b(dom_b)}(y)`.
    ///
    /// The result is again a step function whose breakpoints are the images
    /// of the breakpoints of `f` plus the branch-image endpoints, so the
    /// number of pieces grows at most linearly under iteration.
    pub fn transfer(&self, map: &PiecewiseLinearMap, r: f64) -> StepFunction {
        let mut cuts: Vec<f64> = Vec::with_capacity(self.breaks.len() + 2 * map.branches().len());
        cuts.push(0.0);
        cuts.push(1.0);
        for b in map.branches() {
            let im = b.image();
            cuts.push(im.lo);
            cuts.push(im.hi);
            let lo = self.breaks.partition_point(|&x| x <= b.domain.lo);
            for &x in &self.breaks[lo..] {
                if x >= b.domain.hi {
                    break;
                }
                let (y, _) = b.image_of(x, x);
                cuts.push(y);
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() <= SNAP * 0.01);
        if cuts[0] != 0.0 {
            cuts.insert(0, 0.0);
        }
        *cuts.last_mut().unwrap() = 1.0;
        let mids: Vec<f64> = cuts.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let mut values = vec![0.0; mids.len()];
        for b in map.branches() {
            let im = b.image();
            let g = b.slope.abs().powf(-r);
            let start = mids.partition_point(|&m| m < im.lo);
            let end = mids.partition_point(|&m| m < im.hi);
            if start >= end {
                continue;
            }
            // Walk the preimages monotonically through f's pieces.
            if b.increasing() {
                let mut k = self.piece_index(b.inverse(mids[start]));
                for idx in start..end {
                    let x = b.inverse(mids[idx]);
                    while k + 1 < self.values.len() && self.breaks[k + 1] <= x {
                        k += 1;
                    }
                    values[idx] += g * self.values[k];
                }
            } else {
                let mut k = self.piece_index(b.inverse(mids[end - 1]));
                for idx in (start..end).rev() {
                    let x = b.inverse(mids[idx]);
                    while k + 1 < self.values.len() && self.breaks[k + 1] <= x {
                        k += 1;
                    }
                    values[idx] += g * self.values[k];
                }
            }
        }
        let mut f = StepFunction {
            breaks: cuts,
            values,
        };
        f.compact();
        f
    }
}
