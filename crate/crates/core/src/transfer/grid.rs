use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{IntervalSet, PiecewiseLinearMap, StepFunction};

/// Uniform grid of `n` cells `[i/n, (i+1)/n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidConfig(format!("grid needs at least 2 cells, got {n}")));
        }
        Ok(Self { n })
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn width(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn is_grid_point(&self, x: f64) -> bool {
        let s = x * self.n as f64;
        (s - s.round()).abs() < 1e-9
    }

    /// Every branch breakpoint lies on the grid.
    pub fn aligned_with_map(&self, map: &PiecewiseLinearMap) -> bool {
        map.breakpoints().into_iter().all(|x| self.is_grid_point(x))
    }

    /// Every endpoint of the set lies on the grid.
    pub fn aligned_with_set(&self, s: &IntervalSet) -> bool {
        s.endpoints().all(|x| self.is_grid_point(x))
    }

    /// Fraction of each cell lying outside `hole`.
    pub fn survival_mask(&self, hole: &IntervalSet) -> Vec<f64> {
        let nf = self.n as f64;
        let mut mask = vec![1.0; self.n];
        for iv in hole.intervals() {
            let first = ((iv.lo * nf).floor() as usize).min(self.n - 1);
            let last = (((iv.hi * nf).ceil() as usize).max(first + 1)).min(self.n);
            for (i, m) in mask.iter_mut().enumerate().take(last).skip(first) {
                let c0 = i as f64 / nf;
                let c1 = (i + 1) as f64 / nf;
                let overlap = (iv.hi.min(c1) - iv.lo.max(c0)).max(0.0);
                *m -= overlap * nf;
            }
        }
        for m in mask.iter_mut() {
            if *m < 1e-12 {
                *m = 0.0;
            } else if *m > 1.0 - 1e-12 {
                *m = 1.0;
            }
        }
        mask
    }
}

/// Piecewise-constant function on a grid: one value per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub values: Vec<f64>,
}

impl GridDensity {
    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            values: vec![c; grid.cells()],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values }
    }

    /// Cell averages of an exact step function.
    pub fn from_step(grid: Grid, f: &StepFunction) -> Self {
        Self {
            values: f.cell_averages(grid.cells()),
        }
    }

    pub fn indicator(grid: Grid, s: &IntervalSet) -> Self {
        let mask = grid.survival_mask(s);
        Self {
            values: mask.into_iter().map(|m| 1.0 - m).collect(),
        }
    }

    pub fn cells(&self) -> usize {
        self.values.len()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    /// Lebesgue integral.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Lebesgue integral over a set (exact for step values).
    pub fn integral_over(&self, s: &IntervalSet) -> f64 {
        self.to_step().integral_over(s)
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_distance(&self, other: &GridDensity) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn scale(&mut self, c: f64) {
        for v in self.values.iter_mut() {
            *v *= c;
        }
    }

    pub fn mul_mask(&self, mask: &[f64]) -> GridDensity {
        GridDensity {
            values: self.values.iter().zip(mask).map(|(v, m)| v * m).collect(),
        }
    }

    pub fn to_step(&self) -> StepFunction {
        StepFunction::from_cells(&self.values)
    }
}

/// Sparse weighted Ulam matrix in compressed-column form.
///
/// `M[j][i] = N Σ_b |s_b|^{-r} Leb(T_b(cell_i ∩ dom_b) ∩ cell_j)`: the
/// same matrix moves cell masses and acts on cell values of densities,
/// `(M f)_j = Σ_i M[j][i] f_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    vals: Vec<f64>,
    pub symbol: usize,
    pub open: bool,
    /// Breakpoints on the grid.
    pub aligned: bool,
    /// Aligned, integer slopes and grid-point images: the action on cell
    /// functions equals the exact transfer operator.
    pub exact: bool,
}

impl TransferMatrix {
    pub fn cells(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn column(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.col_ptr[i], self.col_ptr[i + 1]);
        self.row_idx[a..b]
            .iter()
            .zip(&self.vals[a..b])
            .map(|(&r, &v)| (r as usize, v))
    }

    pub fn column_sum(&self, i: usize) -> f64 {
        self.column(i).map(|(_, v)| v).sum()
    }

    pub fn max_column_nnz(&self) -> usize {
        self.col_ptr.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }

    pub fn entry(&self, j: usize, i: usize) -> f64 {
        self.column(i).filter(|&(r, _)| r == j).map(|(_, v)| v).sum()
    }

    /// `M f`, with the optional source mask applied first: `M (f ⊙ mask)`.
    pub fn apply(&self, f: &[f64], mask: Option<&[f64]>) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.apply_into(f, mask, &mut out);
        out
    }

    pub fn apply_into(&self, f: &[f64], mask: Option<&[f64]>, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let mut x = f[i];
            if let Some(m) = mask {
                x *= m[i];
            }
            if x == 0.0 {
                continue;
            }
            let (a, b) = (self.col_ptr[i], self.col_ptr[i + 1]);
            for k in a..b {
                out[self.row_idx[k] as usize] += self.vals[k] * x;
            }
        }
    }

    /// Matrix with source columns scaled by the survival mask.
    pub fn with_source_mask(&self, mask: &[f64]) -> TransferMatrix {
        let mut out = self.clone();
        for i in 0..self.n {
            for k in self.col_ptr[i]..self.col_ptr[i + 1] {
                out.vals[k] *= mask[i];
            }
        }
        out.open = true;
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            for (j, v) in self.column(i) {
                d[j][i] += v;
            }
        }
        d
    }

    /// Coordinate dump `i,j,value` (source cell, target cell).
    pub fn to_coo_csv(&self) -> String {
        let mut s = String::from("i,j,value\n");
        for i in 0..self.n {
            for (j, v) in self.column(i) {
                s.push_str(&format!("{i},{j},{v:.17e}\n"));
            }
        }
        s
    }
}

/// Build the closed weighted Ulam matrix of `map` on `grid` with weight
/// `|T'|^{-r}`.
pub fn build_closed_matrix(map: &PiecewiseLinearMap, r: f64, grid: Grid, symbol: usize) -> TransferMatrix {
    let n = grid.cells();
    let nf = n as f64;
    let mut col_ptr = Vec::with_capacity(n + 1);
    let mut row_idx = Vec::new();
    let mut vals = Vec::new();
    col_ptr.push(0);
    let mut scratch: Vec<(u32, f64)> = Vec::new();
    for i in 0..n {
        let c0 = i as f64 / nf;
        let c1 = (i + 1) as f64 / nf;
        scratch.clear();
        for b in map.branches() {
            let lo = c0.max(b.domain.lo);
            let hi = c1.min(b.domain.hi);
            if hi <= lo {
                continue;
            }
            let g = b.slope.abs().powf(-r);
            let (y0, y1) = b.image_of(lo, hi);
            if y1 <= y0 {
                continue;
            }
            let j0 = ((y0 * nf + 1e-9).floor() as usize).min(n - 1);
            let j1 = ((y1 * nf - 1e-9).ceil() as usize).clamp(j0 + 1, n);
            for j in j0..j1 {
                let t0 = j as f64 / nf;
                let t1 = (j + 1) as f64 / nf;
                let overlap = y1.min(t1) - y0.max(t0);
                if overlap > 1e-15 * (y1 - y0) {
                    scratch.push((j as u32, g * nf * overlap));
                }
            }
        }
        scratch.sort_by_key(|e| e.0);
        let mut last: Option<u32> = None;
        for &(j, v) in &scratch {
            if last == Some(j) {
                *vals.last_mut().unwrap() += v;
            } else {
                row_idx.push(j);
                vals.push(v);
                last = Some(j);
            }
        }
        col_ptr.push(vals.len());
    }
    let aligned = grid.aligned_with_map(map);
    TransferMatrix {
        n,
        col_ptr,
        row_idx,
        vals,
        symbol,
        open: false,
        aligned,
        exact: aligned && map.is_markov_on_grid(n),
    }
}

/// Open matrix: the closed matrix with source contributions from the hole
/// removed, `L_ε f = L_0(f · 1_{H^c})`.
pub fn open_matrix(closed: &TransferMatrix, hole: &IntervalSet, grid: Grid) -> TransferMatrix {
    let mask = grid.survival_mask(hole);
    let mut m = closed.with_source_mask(&mask);
    m.exact = closed.exact && grid.aligned_with_set(hole);
    m
}

/// Read-mostly memo of closed matrices keyed by `(symbol, r)`.
#[derive(Debug)]
pub struct MatrixCache {
    maps: Vec<PiecewiseLinearMap>,
    grid: Grid,
    inner: RwLock<HashMap<(usize, u64), Arc<TransferMatrix>>>,
}

impl MatrixCache {
    pub fn new(maps: Vec<PiecewiseLinearMap>, grid: Grid) -> Self {
        Self {
            maps,
            grid,
            inner: RwLock::new(HashMap::new()),
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn maps(&self) -> &[PiecewiseLinearMap] {
        &self.maps
    }

    pub fn get(&self, symbol: usize, r: f64) -> Arc<TransferMatrix> {
        let key = (symbol, r.to_bits());
        if let Some(m) = self.inner.read().expect("matrix cache poisoned").get(&key) {
            return Arc::clone(m);
        }
        let m = Arc::new(build_closed_matrix(&self.maps[symbol], r, self.grid, symbol));
        let mut w = self.inner.write().expect("matrix cache poisoned");
        Arc::clone(w.entry(key).or_insert(m))
    }

    /// Build all matrices for `r` up front, in parallel.
    pub fn warm(&self, r: f64) {
        use rayon::prelude::*;
        let built: Vec<_> = (0..self.maps.len())
            .into_par_iter()
            .map(|s| ((s, r.to_bits()), Arc::new(build_closed_matrix(&self.maps[s], r, self.grid, s))))
            .collect();
        let mut w = self.inner.write().expect("matrix cache poisoned");
        for (k, m) in built {
            w.entry(k).or_insert(m);
        }
    }

    pub fn all_exact(&self, r: f64) -> bool {
        (0..self.maps.len()).all(|s| self.get(s, r).exact)
    }
}
