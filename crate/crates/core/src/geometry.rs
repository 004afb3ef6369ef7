//! Norms, boxes, uniform grids and the `CellSet` occupancy representation of
//! compact subsets of R^n.
//!
//! Everything downstream (reachability, intensity, continuation) manipulates
//! sets exclusively through `CellSet`, so the conventions live here:
//! cells are closed axis-aligned boxes, rasterization is outer (a set
//! occupies a cell as soon as it meets the closed cell), and all metric
//! queries go through a `NormSpec`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("norm parameter p = {0} outside [1, inf]")]
    BadNorm(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("box has lo >= hi on axis {0}")]
    BadBox(usize),
    #[error("grid cell width must be positive on axis {0}")]
    BadDelta(usize),
    #[error("operands live on different grids")]
    GridMismatch,
    #[error("set operation on empty operand")]
    EmptySet,
    #[error("unsupported dimension 0")]
    ZeroDim,
    #[error("direction count {count} too small for dimension {dim}")]
    TooFewDirections { count: usize, dim: usize },
    #[error("malformed cell-set file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A p-norm descriptor, `p` in `[1, inf]`. `f64::INFINITY` encodes the max
/// norm. Governs every ball, distance and control bound in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    p: f64,
}

impl NormSpec {
    pub fn new(p: f64) -> Result<Self, GeometryError> {
        if p >= 1.0 {
            Ok(Self { p })
        } else {
            Err(GeometryError::BadNorm(p))
        }
    }

    pub fn l1() -> Self {
        Self { p: 1.0 }
    }

    pub fn l2() -> Self {
        Self { p: 2.0 }
    }

    pub fn max() -> Self {
        Self { p: f64::INFINITY }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// `(sum |v_i|^p)^(1/p)`, or `max |v_i|` for the max norm.
    pub fn eval(&self, v: &[f64]) -> f64 {
        if self.p.is_infinite() {
            v.iter().fold(0.0, |m, x| m.max(x.abs()))
        } else if self.p == 1.0 {
            v.iter().map(|x| x.abs()).sum()
        } else if self.p == 2.0 {
            v.iter().map(|x| x * x).sum::<f64>().sqrt()
        } else {
            v.iter()
                .map(|x| x.abs().powf(self.p))
                .sum::<f64>()
                .powf(1.0 / self.p)
        }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.eval(&diff)
    }

    /// Exact distance from `point` to the closed box `[lo, hi]`: clamp per
    /// axis, then take the norm of the residual. Separability of the p-norm
    /// makes the per-axis clamp the nearest point for every p.
    pub fn point_to_box(&self, point: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
        let diff: Vec<f64> = point
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(&x, (&l, &h))| {
                let c = x.clamp(l, h);
                x - c
            })
            .collect();
        self.eval(&diff)
    }
}

/// Checked norm evaluation with an explicit expected dimension.
pub fn norm_eval(n: &NormSpec, v: &[f64], dim: usize) -> Result<f64, GeometryError> {
    if v.len() != dim {
        return Err(GeometryError::DimensionMismatch {
            expected: dim,
            got: v.len(),
        });
    }
    Ok(n.eval(v))
}

/// `count` unit vectors (in the given norm) covering the directions of the
/// unit sphere. Dimension 1 always returns `{+1, -1}`; dimension 2 returns
/// equally spaced angles renormalized to the requested norm; higher
/// dimensions use a deterministic spiral / low-discrepancy sample.
pub fn ball_directions(
    n: &NormSpec,
    dim: usize,
    count: usize,
) -> Result<Vec<Vec<f64>>, GeometryError> {
    if dim == 0 {
        return Err(GeometryError::ZeroDim);
    }
    if count < 2 * dim {
        return Err(GeometryError::TooFewDirections { count, dim });
    }
    if dim == 1 {
        return Ok(vec![vec![1.0], vec![-1.0]]);
    }
    let mut dirs = Vec::with_capacity(count);
    if dim == 2 {
        for k in 0..count {
            let th = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            dirs.push(vec![th.cos(), th.sin()]);
        }
    } else if dim == 3 {
        // Fibonacci spiral on the Euclidean sphere.
        let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
        for k in 0..count {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
            let rho = (1.0 - z * z).sqrt();
            let th = 2.0 * std::f64::consts::PI * k as f64 / golden;
            dirs.push(vec![rho * th.cos(), rho * th.sin(), z]);
        }
    } else {
        // Axis directions first, then a deterministic Gaussian sample.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x9a11_d1f5);
        for a in 0..dim {
            for s in [1.0, -1.0] {
                let mut v = vec![0.0; dim];
                v[a] = s;
                dirs.push(v);
            }
        }
        while dirs.len() < count {
            let v: Vec<f64> = (0..dim)
                .map(|_| {
                    // Box-Muller from two uniforms.
                    let u1: f64 = rng.gen_range(1e-12..1.0);
                    let u2: f64 = rng.gen_range(0.0..1.0);
                    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                })
                .collect();
            if v.iter().map(|x| x * x).sum::<f64>() > 1e-12 {
                dirs.push(v);
            }
        }
    }
    for d in &mut dirs {
        let len = n.eval(d);
        for x in d.iter_mut() {
            *x /= len;
        }
    }
    Ok(dirs)
}

/// Closed axis-aligned box `[lo, hi]`, the truncation window for all grid
/// computations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Aabb {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, GeometryError> {
        if lo.len() != hi.len() {
            return Err(GeometryError::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        for (a, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !(l < h) {
                return Err(GeometryError::BadBox(a));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&v, (&l, &h))| v >= l && v <= h)
    }

    /// Box grown by `pad` on every side.
    pub fn inflated(&self, pad: f64) -> Self {
        Self {
            lo: self.lo.iter().map(|x| x - pad).collect(),
            hi: self.hi.iter().map(|x| x + pad).collect(),
        }
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| 0.5 * (l + h))
            .collect()
    }
}

/// Uniform grid over an `Aabb`. Cell widths may differ per axis; the stored
/// box is snapped outward so that an integer number of cells tiles it
/// exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    lo: Vec<f64>,
    hi: Vec<f64>,
    delta: Vec<f64>,
    n: Vec<usize>,
    strides: Vec<u64>,
}

impl GridSpec {
    pub fn new(bounds: &Aabb, delta: &[f64]) -> Result<Self, GeometryError> {
        if delta.len() != bounds.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: bounds.dim(),
                got: delta.len(),
            });
        }
        let mut n = Vec::with_capacity(delta.len());
        let mut hi = Vec::with_capacity(delta.len());
        for (a, &d) in delta.iter().enumerate() {
            if !(d > 0.0) {
                return Err(GeometryError::BadDelta(a));
            }
            let span = bounds.hi[a] - bounds.lo[a];
            let cells = ((span / d) - 1e-9).ceil().max(1.0) as usize;
            n.push(cells);
            hi.push(bounds.lo[a] + cells as f64 * d);
        }
        let strides = Self::strides_for(&n);
        Ok(Self {
            lo: bounds.lo.clone(),
            hi,
            delta: delta.to_vec(),
            n,
            strides,
        })
    }

    /// Uniform cell width on every axis.
    pub fn uniform(bounds: &Aabb, delta: f64) -> Result<Self, GeometryError> {
        let d = vec![delta; bounds.dim()];
        Self::new(bounds, &d)
    }

    fn strides_for(n: &[usize]) -> Vec<u64> {
        let mut strides = vec![1u64; n.len()];
        for a in (0..n.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * n[a + 1] as u64;
        }
        strides
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn counts(&self) -> &[usize] {
        &self.n
    }

    pub fn strides(&self) -> &[u64] {
        &self.strides
    }

    pub fn bounds(&self) -> Aabb {
        Aabb {
            lo: self.lo.clone(),
            hi: self.hi.clone(),
        }
    }

    pub fn total_cells(&self) -> u64 {
        self.n.iter().map(|&c| c as u64).product()
    }

    /// Half the cell diagonal measured in `norm`: the radius of a cell
    /// around its center.
    pub fn cell_radius(&self, norm: &NormSpec) -> f64 {
        let half: Vec<f64> = self.delta.iter().map(|d| 0.5 * d).collect();
        norm.eval(&half)
    }

    pub fn cell_diameter(&self, norm: &NormSpec) -> f64 {
        norm.eval(&self.delta)
    }

    pub fn linear(&self, idx: &[usize]) -> u64 {
        idx.iter()
            .zip(&self.strides)
            .map(|(&i, &s)| i as u64 * s)
            .sum()
    }

    pub fn unravel(&self, mut lin: u64) -> Vec<usize> {
        let mut idx = vec![0usize; self.dim()];
        for a in 0..self.dim() {
            idx[a] = (lin / self.strides[a]) as usize;
            lin %= self.strides[a];
        }
        idx
    }

    /// Cell containing `x`, or `None` if `x` lies outside the grid box.
    pub fn locate(&self, x: &[f64]) -> Option<u64> {
        let mut lin = 0u64;
        for a in 0..self.dim() {
            if x[a] < self.lo[a] || x[a] > self.hi[a] {
                return None;
            }
            let i = (((x[a] - self.lo[a]) / self.delta[a]).floor() as i64)
                .clamp(0, self.n[a] as i64 - 1) as u64;
            lin += i * self.strides[a];
        }
        Some(lin)
    }

    pub fn center_of(&self, lin: u64) -> Vec<f64> {
        let idx = self.unravel(lin);
        idx.iter()
            .enumerate()
            .map(|(a, &i)| self.lo[a] + (i as f64 + 0.5) * self.delta[a])
            .collect()
    }

    pub fn cell_box(&self, lin: u64) -> (Vec<f64>, Vec<f64>) {
        let idx = self.unravel(lin);
        let lo: Vec<f64> = idx
            .iter()
            .enumerate()
            .map(|(a, &i)| self.lo[a] + i as f64 * self.delta[a])
            .collect();
        let hi: Vec<f64> = idx
            .iter()
            .enumerate()
            .map(|(a, &i)| self.lo[a] + (i + 1) as f64 * self.delta[a])
            .collect();
        (lo, hi)
    }

    pub fn on_boundary(&self, lin: u64) -> bool {
        let idx = self.unravel(lin);
        idx.iter().zip(&self.n).any(|(&i, &c)| i == 0 || i + 1 == c)
    }

    /// The same box tiled `factor` times finer on every axis.
    pub fn refined(&self, factor: usize) -> GridSpec {
        assert!(factor >= 1);
        let n: Vec<usize> = self.n.iter().map(|&c| c * factor).collect();
        let delta: Vec<f64> = self.delta.iter().map(|d| d / factor as f64).collect();
        let strides = Self::strides_for(&n);
        GridSpec {
            lo: self.lo.clone(),
            hi: self.hi.clone(),
            delta,
            n,
            strides,
        }
    }
}

/// Dense bit-per-cell occupancy used by the grid engines. `CellSet` is the
/// compact, serializable form; `BitGrid` is the working form.
#[derive(Clone)]
pub struct BitGrid {
    grid: GridSpec,
    words: Vec<u64>,
}

impl BitGrid {
    pub fn empty(grid: GridSpec) -> Self {
        let cells = grid.total_cells();
        let words = vec![0u64; ((cells + 63) / 64) as usize];
        Self { grid, words }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn get(&self, lin: u64) -> bool {
        (self.words[(lin >> 6) as usize] >> (lin & 63)) & 1 == 1
    }

    /// Sets the bit; returns true if it was newly set.
    #[inline]
    pub fn set(&mut self, lin: u64) -> bool {
        let w = &mut self.words[(lin >> 6) as usize];
        let mask = 1u64 << (lin & 63);
        let fresh = *w & mask == 0;
        *w |= mask;
        fresh
    }

    pub fn iter_set(&self) -> impl Iterator<Item = u64> + '_ {
        let total = self.grid.total_cells();
        self.words.iter().enumerate().flat_map(move |(wi, &w)| {
            let base = (wi as u64) << 6;
            BitIter { word: w, base }.filter(move |&lin| lin < total)
        })
    }

    pub fn count(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn to_cell_set(&self) -> CellSet {
        let cells: Vec<u64> = self.iter_set().collect();
        CellSet::from_sorted(self.grid.clone(), cells)
    }
}

struct BitIter {
    word: u64,
    base: u64,
}

impl Iterator for BitIter {
    type Item = u64;
    fn next(&mut self) -> Option<u64> {
        if self.word == 0 {
            return None;
        }
        let tz = self.word.trailing_zeros() as u64;
        self.word &= self.word - 1;
        Some(self.base + tz)
    }
}

/// A finite occupancy set over a uniform grid: the computable stand-in for
/// compact subsets of R^n (reachable sets, attractor blocks, basins).
/// Cell indices are kept sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSet {
    grid: GridSpec,
    cells: Vec<u64>,
    touches_boundary: bool,
}

impl CellSet {
    pub fn empty(grid: GridSpec) -> Self {
        Self {
            grid,
            cells: Vec::new(),
            touches_boundary: false,
        }
    }

    pub fn from_sorted(grid: GridSpec, cells: Vec<u64>) -> Self {
        debug_assert!(cells.windows(2).all(|w| w[0] < w[1]));
        let touches = cells.iter().any(|&c| grid.on_boundary(c));
        Self {
            grid,
            cells,
            touches_boundary: touches,
        }
    }

    pub fn from_cells(grid: GridSpec, mut cells: Vec<u64>) -> Self {
        cells.sort_unstable();
        cells.dedup();
        Self::from_sorted(grid, cells)
    }

    /// Cells containing the given points; points outside the grid are
    /// silently dropped (the caller sees the truncation through
    /// `touches_boundary` of downstream results).
    pub fn from_points(grid: GridSpec, points: &[Vec<f64>]) -> Self {
        let cells: Vec<u64> = points.iter().filter_map(|p| grid.locate(p)).collect();
        Self::from_cells(grid, cells)
    }

    /// Outer rasterization of a box: every cell whose closed box meets it.
    pub fn from_box(grid: GridSpec, region: &Aabb) -> Self {
        let dim = grid.dim();
        let mut ranges = Vec::with_capacity(dim);
        for a in 0..dim {
            let lo = ((region.lo[a] - grid.lo[a]) / grid.delta[a]).floor() as i64;
            let hi = ((region.hi[a] - grid.lo[a]) / grid.delta[a]).ceil() as i64;
            let lo = lo.clamp(0, grid.n[a] as i64 - 1) as usize;
            let hi = (hi - 1).clamp(0, grid.n[a] as i64 - 1) as usize;
            ranges.push(lo..=hi);
        }
        let mut cells = Vec::new();
        let mut idx: Vec<usize> = ranges.iter().map(|r| *r.start()).collect();
        'outer: loop {
            cells.push(grid.linear(&idx));
            for a in (0..dim).rev() {
                if idx[a] < *ranges[a].end() {
                    idx[a] += 1;
                    for r in idx.iter_mut().skip(a + 1) {
                        *r = 0;
                    }
                    for (b, rr) in ranges.iter().enumerate().skip(a + 1) {
                        idx[b] = *rr.start();
                    }
                    continue 'outer;
                }
            }
            break;
        }
        Self::from_cells(grid, cells)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn touches_boundary(&self) -> bool {
        self.touches_boundary
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        self.cells.iter().copied()
    }

    pub fn cells(&self) -> &[u64] {
        &self.cells
    }

    pub fn contains_cell(&self, lin: u64) -> bool {
        self.cells.binary_search(&lin).is_ok()
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        self.grid.locate(x).map_or(false, |c| self.contains_cell(c))
    }

    pub fn centers(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        self.cells.iter().map(|&c| self.grid.center_of(c))
    }

    /// Smallest box covering the occupied cells (cell boxes, not centers).
    pub fn bounding_box(&self) -> Option<Aabb> {
        if self.cells.is_empty() {
            return None;
        }
        let dim = self.grid.dim();
        let mut lo = vec![usize::MAX; dim];
        let mut hi = vec![0usize; dim];
        for &c in &self.cells {
            let idx = self.grid.unravel(c);
            for a in 0..dim {
                lo[a] = lo[a].min(idx[a]);
                hi[a] = hi[a].max(idx[a]);
            }
        }
        let blo: Vec<f64> = (0..dim)
            .map(|a| self.grid.lo[a] + lo[a] as f64 * self.grid.delta[a])
            .collect();
        let bhi: Vec<f64> = (0..dim)
            .map(|a| self.grid.lo[a] + (hi[a] + 1) as f64 * self.grid.delta[a])
            .collect();
        Some(Aabb { lo: blo, hi: bhi })
    }

    fn check_grid(&self, other: &CellSet) -> Result<(), GeometryError> {
        if self.grid != other.grid {
            return Err(GeometryError::GridMismatch);
        }
        Ok(())
    }

    pub fn union(&self, other: &CellSet) -> Result<CellSet, GeometryError> {
        self.check_grid(other)?;
        let mut cells = Vec::with_capacity(self.cells.len() + other.cells.len());
        let (mut i, mut j) = (0, 0);
        while i < self.cells.len() || j < other.cells.len() {
            let c = match (self.cells.get(i), other.cells.get(j)) {
                (Some(&a), Some(&b)) if a == b => {
                    i += 1;
                    j += 1;
                    a
                }
                (Some(&a), Some(&b)) if a < b => {
                    i += 1;
                    a
                }
                (Some(_), Some(&b)) => {
                    j += 1;
                    b
                }
                (Some(&a), None) => {
                    i += 1;
                    a
                }
                (None, Some(&b)) => {
                    j += 1;
                    b
                }
                (None, None) => unreachable!(),
            };
            cells.push(c);
        }
        Ok(CellSet::from_sorted(self.grid.clone(), cells))
    }

    pub fn intersection(&self, other: &CellSet) -> Result<CellSet, GeometryError> {
        self.check_grid(other)?;
        let cells: Vec<u64> = self
            .cells
            .iter()
            .copied()
            .filter(|c| other.contains_cell(*c))
            .collect();
        Ok(CellSet::from_sorted(self.grid.clone(), cells))
    }

    pub fn difference(&self, other: &CellSet) -> Result<CellSet, GeometryError> {
        self.check_grid(other)?;
        let cells: Vec<u64> = self
            .cells
            .iter()
            .copied()
            .filter(|c| !other.contains_cell(*c))
            .collect();
        Ok(CellSet::from_sorted(self.grid.clone(), cells))
    }

    /// All grid cells not occupied: the complement within the grid box.
    pub fn complement_within_box(&self) -> CellSet {
        let total = self.grid.total_cells();
        let mut cells = Vec::with_capacity((total as usize).saturating_sub(self.cells.len()));
        let mut next = 0usize;
        for lin in 0..total {
            if next < self.cells.len() && self.cells[next] == lin {
                next += 1;
            } else {
                cells.push(lin);
            }
        }
        CellSet::from_sorted(self.grid.clone(), cells)
    }

    /// Interior cells: occupied cells all of whose axis neighbors are
    /// occupied and which do not sit on the grid boundary.
    pub fn interior(&self) -> CellSet {
        let bits = self.to_bit_grid();
        let dim = self.grid.dim();
        let cells: Vec<u64> = self
            .cells
            .iter()
            .copied()
            .filter(|&c| {
                if self.grid.on_boundary(c) {
                    return false;
                }
                let idx = self.grid.unravel(c);
                for a in 0..dim {
                    for off in [-1i64, 1] {
                        let mut nb = idx.clone();
                        nb[a] = (idx[a] as i64 + off) as usize;
                        if !bits.get(self.grid.linear(&nb)) {
                            return false;
                        }
                    }
                }
                true
            })
            .collect();
        CellSet::from_sorted(self.grid.clone(), cells)
    }

    pub fn to_bit_grid(&self) -> BitGrid {
        let mut bits = BitGrid::empty(self.grid.clone());
        for &c in &self.cells {
            bits.set(c);
        }
        bits
    }

    /// Each cell split into `factor^dim` subcells on the refined grid.
    pub fn refined(&self, factor: usize) -> CellSet {
        if factor == 1 {
            return self.clone();
        }
        let fine = self.grid.refined(factor);
        let dim = self.grid.dim();
        let mut cells = Vec::with_capacity(self.cells.len() * factor.pow(dim as u32));
        for &c in &self.cells {
            let idx = self.grid.unravel(c);
            let mut sub = vec![0usize; dim];
            loop {
                let fidx: Vec<usize> = idx
                    .iter()
                    .zip(&sub)
                    .map(|(&i, &s)| i * factor + s)
                    .collect();
                cells.push(fine.linear(&fidx));
                let mut a = dim;
                loop {
                    if a == 0 {
                        break;
                    }
                    a -= 1;
                    sub[a] += 1;
                    if sub[a] < factor {
                        break;
                    }
                    sub[a] = 0;
                    if a == 0 {
                        break;
                    }
                }
                if sub.iter().all(|&s| s == 0) {
                    break;
                }
            }
        }
        CellSet::from_cells(fine, cells)
    }

    /// Outer coarsening: a coarse cell is occupied when any of its subcells
    /// is. Inverse of `refined` up to outer rasterization.
    pub fn coarsened(&self, factor: usize, coarse: &GridSpec) -> CellSet {
        if factor == 1 {
            return self.clone();
        }
        let cells: Vec<u64> = self
            .cells
            .iter()
            .map(|&c| {
                let idx = self.grid.unravel(c);
                let cidx: Vec<usize> = idx.iter().map(|&i| i / factor).collect();
                coarse.linear(&cidx)
            })
            .collect();
        let mut set = CellSet::from_cells(coarse.clone(), cells);
        // Boundary contact is inherited from the fine computation.
        set.touches_boundary |= self.touches_boundary;
        set
    }
}

/// Offset stencil for a radius-`radius` ball: all index offsets whose cell
/// box comes within `radius` of the origin cell's box. `closed` admits
/// offsets whose gap equals the radius (closed-ball coverage for certified
/// over-approximations); otherwise the gap must be strictly smaller (open
/// neighborhood).
pub(crate) fn ball_stencil(
    grid: &GridSpec,
    radius: f64,
    n: &NormSpec,
    closed: bool,
) -> Vec<Vec<i64>> {
    let dim = grid.dim();
    let reach: Vec<i64> = grid
        .delta
        .iter()
        .map(|&d| (radius / d).ceil() as i64 + 1)
        .collect();
    let mut stencil: Vec<Vec<i64>> = Vec::new();
    let mut off = vec![0i64; dim];
    for (a, r) in reach.iter().enumerate() {
        off[a] = -r;
    }
    'gen: loop {
        let gap: Vec<f64> = off
            .iter()
            .enumerate()
            .map(|(a, &o)| (o.unsigned_abs().saturating_sub(1)) as f64 * grid.delta[a])
            .collect();
        let g = n.eval(&gap);
        let hit = if closed { g <= radius + 1e-12 } else { g < radius };
        if hit || off.iter().all(|&o| o == 0) {
            stencil.push(off.clone());
        }
        for a in (0..dim).rev() {
            if off[a] < reach[a] {
                off[a] += 1;
                for (b, r) in reach.iter().enumerate().skip(a + 1) {
                    off[b] = -r;
                }
                continue 'gen;
            }
        }
        break;
    }
    stencil
}

/// Rasterized `radius`-neighborhood of `s` in norm `n`: every cell whose
/// closed box meets the open neighborhood. Result is clipped at the grid
/// box; zero radius returns `s` unchanged.
pub fn inflate(s: &CellSet, radius: f64, n: &NormSpec) -> Result<CellSet, GeometryError> {
    if radius < 0.0 {
        return Err(GeometryError::BadNorm(radius));
    }
    if radius == 0.0 || s.is_empty() {
        return Ok(s.clone());
    }
    let grid = s.grid().clone();
    let dim = grid.dim();
    let stencil = ball_stencil(&grid, radius, n, false);
    let mut bits = BitGrid::empty(grid.clone());
    for &c in s.cells() {
        let idx = grid.unravel(c);
        'apply: for o in &stencil {
            let mut tgt = Vec::with_capacity(dim);
            for a in 0..dim {
                let t = idx[a] as i64 + o[a];
                if t < 0 || t >= grid.n[a] as i64 {
                    continue 'apply;
                }
                tgt.push(t as usize);
            }
            bits.set(grid.linear(&tgt));
        }
    }
    Ok(bits.to_cell_set())
}

/// Certified lower bound on `dist(a, b)`: minimum center-to-center distance
/// over occupied pairs, minus one cell diameter, floored at zero.
pub fn set_distance(a: &CellSet, b: &CellSet, n: &NormSpec) -> Result<f64, GeometryError> {
    if a.grid() != b.grid() {
        return Err(GeometryError::GridMismatch);
    }
    if a.is_empty() || b.is_empty() {
        return Err(GeometryError::EmptySet);
    }
    let grid = a.grid();
    let bbits = b.to_bit_grid();
    let dmin = grid
        .delta
        .iter()
        .fold(f64::INFINITY, |m: f64, &d| m.min(d));
    let mut best = f64::INFINITY;
    for &ca in a.cells() {
        let idx = grid.unravel(ca);
        let center = grid.center_of(ca);
        // Expand chebyshev rings around the cell until the ring's lower
        // bound exceeds the best distance found so far.
        let max_ring = *grid.n.iter().max().unwrap() as i64;
        'rings: for ring in 0..=max_ring {
            if best.is_finite() && (ring as f64 - 1.0) * dmin > best {
                break 'rings;
            }
            let mut found_any = false;
            visit_ring(&idx, ring, &grid.n, &mut |cand: &[usize]| {
                let lin = grid.linear(cand);
                if bbits.get(lin) {
                    found_any = true;
                    let d = n.distance(&center, &grid.center_of(lin));
                    if d < best {
                        best = d;
                    }
                }
            });
            if found_any && ring == 0 {
                break 'rings;
            }
        }
    }
    let diam = grid.cell_diameter(n);
    Ok((best - diam).max(0.0))
}

/// Visit all in-grid cells at exact chebyshev distance `ring` from `idx`.
fn visit_ring(idx: &[usize], ring: i64, n: &[usize], f: &mut impl FnMut(&[usize])) {
    let dim = idx.len();
    let mut off = vec![-ring; dim];
    'outer: loop {
        if off.iter().any(|&o| o.abs() == ring) || ring == 0 {
            let mut cand = Vec::with_capacity(dim);
            let mut ok = true;
            for a in 0..dim {
                let t = idx[a] as i64 + off[a];
                if t < 0 || t >= n[a] as i64 {
                    ok = false;
                    break;
                }
                cand.push(t as usize);
            }
            if ok {
                f(&cand);
            }
        }
        for a in (0..dim).rev() {
            if off[a] < ring {
                off[a] += 1;
                for o in off.iter_mut().skip(a + 1) {
                    *o = -ring;
                }
                continue 'outer;
            }
        }
        break;
    }
}

/// True iff every occupied cell of `inner` is occupied in `outer`.
pub fn contains(outer: &CellSet, inner: &CellSet) -> Result<bool, GeometryError> {
    if outer.grid() != inner.grid() {
        return Err(GeometryError::GridMismatch);
    }
    Ok(inner.iter().all(|c| outer.contains_cell(c)))
}

fn fmt_vec(v: &[f64]) -> String {
    let mut s = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{x}");
    }
    s
}

fn parse_vec(s: &str) -> Result<Vec<f64>, GeometryError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| GeometryError::Parse(format!("bad number {t:?}: {e}")))
        })
        .collect()
}

impl CellSet {
    /// CSV serialization: `# grid lo=<..> hi=<..> delta=<..>` header, then
    /// one line per cell with integer indices followed by center
    /// coordinates. Round-trips bit-exactly (floats printed in shortest
    /// round-trip form).
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# grid lo={} hi={} delta={}",
            fmt_vec(&self.grid.lo),
            fmt_vec(&self.grid.hi),
            fmt_vec(&self.grid.delta)
        );
        for &c in &self.cells {
            let idx = self.grid.unravel(c);
            let center = self.grid.center_of(c);
            let mut line = String::new();
            for i in &idx {
                let _ = write!(line, "{i},");
            }
            line.push_str(&fmt_vec(&center));
            let _ = writeln!(out, "{line}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<CellSet, GeometryError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| GeometryError::Parse("empty file".into()))?;
        let header = header
            .strip_prefix("# grid ")
            .ok_or_else(|| GeometryError::Parse("missing '# grid' header".into()))?;
        let mut lo = None;
        let mut hi = None;
        let mut delta = None;
        for part in header.split_whitespace() {
            if let Some(v) = part.strip_prefix("lo=") {
                lo = Some(parse_vec(v)?);
            } else if let Some(v) = part.strip_prefix("hi=") {
                hi = Some(parse_vec(v)?);
            } else if let Some(v) = part.strip_prefix("delta=") {
                delta = Some(parse_vec(v)?);
            }
        }
        let (lo, hi, delta) = match (lo, hi, delta) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(GeometryError::Parse("header missing lo/hi/delta".into())),
        };
        let grid = GridSpec::new(&Aabb::new(lo, hi)?, &delta)?;
        let dim = grid.dim();
        let mut cells = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 2 * dim {
                return Err(GeometryError::Parse(format!(
                    "expected {} fields, got {}",
                    2 * dim,
                    fields.len()
                )));
            }
            let idx: Vec<usize> = fields[..dim]
                .iter()
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|e| GeometryError::Parse(format!("bad index {t:?}: {e}")))
                })
                .collect::<Result<_, _>>()?;
            cells.push(grid.linear(&idx));
        }
        Ok(CellSet::from_cells(grid, cells))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid2d(delta: f64) -> GridSpec {
        let b = Aabb::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        GridSpec::uniform(&b, delta).unwrap()
    }

    #[test]
    fn norm_pythagorean() {
        assert_relative_eq!(NormSpec::l2().eval(&[3.0, 4.0]), 5.0);
    }

    #[test]
    fn norm_max_and_l1() {
        assert_relative_eq!(NormSpec::max().eval(&[3.0, -4.0]), 4.0);
        let h = std::f64::consts::SQRT_2 / 2.0;
        assert_relative_eq!(
            NormSpec::l1().eval(&[h, h]),
            std::f64::consts::SQRT_2,
            epsilon = 1e-14
        );
    }

    #[test]
    fn norm_rejects_small_p() {
        assert!(NormSpec::new(0.5).is_err());
    }

    #[test]
    fn directions_1d() {
        let d = ball_directions(&NormSpec::l2(), 1, 2).unwrap();
        assert_eq!(d, vec![vec![1.0], vec![-1.0]]);
    }

    #[test]
    fn directions_max_norm_square_corners() {
        let d = ball_directions(&NormSpec::max(), 2, 8).unwrap();
        assert_eq!(d.len(), 8);
        for v in &d {
            assert_relative_eq!(NormSpec::max().eval(v), 1.0, epsilon = 1e-12);
        }
        for corner in [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]] {
            assert!(
                d.iter()
                    .any(|v| (v[0] - corner[0]).abs() < 1e-9 && (v[1] - corner[1]).abs() < 1e-9),
                "corner {corner:?} missing"
            );
        }
    }

    #[test]
    fn directions_euclidean_equal_spacing() {
        let d = ball_directions(&NormSpec::l2(), 2, 16).unwrap();
        assert_eq!(d.len(), 16);
        for w in d.windows(2) {
            let dot = w[0][0] * w[1][0] + w[0][1] * w[1][1];
            let angle = dot.clamp(-1.0, 1.0).acos();
            assert_relative_eq!(
                angle,
                2.0 * std::f64::consts::PI / 16.0,
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn inflate_zero_radius_is_identity() {
        let g = grid2d(0.1);
        let s = CellSet::from_points(g, &[vec![0.0, 0.0]]);
        let r = inflate(&s, 0.0, &NormSpec::l2()).unwrap();
        assert_eq!(r, s);
    }

    #[test]
    fn inflate_max_norm_block() {
        let g = grid2d(0.1);
        let s = CellSet::from_points(g, &[vec![0.05, 0.05]]);
        let r = inflate(&s, 0.2, &NormSpec::max()).unwrap();
        assert_eq!(r.len(), 25);
    }

    #[test]
    fn inflate_euclidean_subset_of_block() {
        let g = grid2d(0.1);
        let s = CellSet::from_points(g.clone(), &[vec![0.05, 0.05]]);
        let disk = inflate(&s, 0.2, &NormSpec::l2()).unwrap();
        let block = inflate(&s, 0.2, &NormSpec::max()).unwrap();
        assert!(contains(&block, &disk).unwrap());
        assert!(disk.len() <= 25);
        // Independently enumerate: cell boxes meeting the disk around the
        // occupied cell's box.
        let (clo, chi) = s.grid().cell_box(s.cells()[0]);
        let expect: Vec<u64> = (0..g.total_cells())
            .filter(|&lin| {
                let (lo, hi) = g.cell_box(lin);
                // box-to-box distance
                let gap: Vec<f64> = (0..2)
                    .map(|a| {
                        if hi[a] < clo[a] {
                            clo[a] - hi[a]
                        } else if lo[a] > chi[a] {
                            lo[a] - chi[a]
                        } else {
                            0.0
                        }
                    })
                    .collect();
                // Strictly-inside test with a tiny epsilon so float noise
                // in cell coordinates cannot flip knife-edge cells whose
                // gap equals the radius exactly.
                NormSpec::l2().eval(&gap) < 0.2 - 1e-9
            })
            .collect();
        assert_eq!(disk.cells(), expect.as_slice());
    }

    #[test]
    fn set_distance_same_set_zero() {
        let g = grid2d(0.1);
        let s = CellSet::from_points(g, &[vec![0.0, 0.0], vec![0.5, 0.5]]);
        assert_eq!(set_distance(&s, &s, &NormSpec::l2()).unwrap(), 0.0);
    }

    #[test]
    fn set_distance_1d_points() {
        let b = Aabb::new(vec![-0.5], vec![1.5]).unwrap();
        let g = GridSpec::uniform(&b, 0.1).unwrap();
        let a = CellSet::from_points(g.clone(), &[vec![0.0]]);
        let c = CellSet::from_points(g, &[vec![1.0]]);
        let d = set_distance(&a, &c, &NormSpec::l2()).unwrap();
        assert!((d - 0.9).abs() <= 0.1 + 1e-12, "d = {d}");
    }

    #[test]
    fn set_distance_disjoint_boxes() {
        let b = Aabb::new(vec![-1.0, -1.0], vec![5.0, 5.0]).unwrap();
        let g = GridSpec::uniform(&b, 0.25).unwrap();
        let a = CellSet::from_box(g.clone(), &Aabb::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap());
        let c = CellSet::from_box(g, &Aabb::new(vec![3.0, 3.0], vec![4.0, 4.0]).unwrap());
        let d = set_distance(&a, &c, &NormSpec::max()).unwrap();
        assert!((d - 2.0).abs() <= 0.25 + 1e-12, "d = {d}");
    }

    #[test]
    fn set_distance_empty_errors() {
        let g = grid2d(0.1);
        let s = CellSet::from_points(g.clone(), &[vec![0.0, 0.0]]);
        let e = CellSet::empty(g);
        assert!(set_distance(&s, &e, &NormSpec::l2()).is_err());
    }

    #[test]
    fn contains_reflexive_and_strict_growth() {
        let g = grid2d(0.1);
        let s = CellSet::from_points(g.clone(), &[vec![0.0, 0.0]]);
        assert!(contains(&s, &s).unwrap());
        let grown = inflate(&s, 0.15, &NormSpec::l2()).unwrap();
        assert!(!contains(&s, &grown).unwrap());
        assert!(contains(&grown, &s).unwrap());
        let full = CellSet::from_box(g.clone(), &g.bounds());
        assert!(contains(&full, &grown).unwrap());
    }

    #[test]
    fn boundary_flag() {
        let g = grid2d(0.1);
        let inner = CellSet::from_points(g.clone(), &[vec![0.0, 0.0]]);
        assert!(!inner.touches_boundary());
        let edge = CellSet::from_points(g, &[vec![0.99, 0.0]]);
        assert!(edge.touches_boundary());
    }

    #[test]
    fn csv_round_trip_bit_exact() {
        let b = Aabb::new(vec![-1.0, -0.5], vec![1.0, 0.7]).unwrap();
        let g = GridSpec::new(&b, &[0.03, 0.07]).unwrap();
        let s = CellSet::from_points(
            g,
            &[vec![0.1, 0.2], vec![-0.33, 0.41], vec![0.99, -0.49]],
        );
        let text = s.to_csv();
        let back = CellSet::from_csv(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_csv(), text);
    }

    #[test]
    fn refine_coarsen_round_trip() {
        let g = grid2d(0.1);
        let s = CellSet::from_points(g.clone(), &[vec![0.0, 0.0], vec![0.35, -0.22]]);
        let fine = s.refined(4);
        assert_eq!(fine.len(), s.len() * 16);
        let back = fine.coarsened(4, &g);
        assert_eq!(back, s);
    }
}
