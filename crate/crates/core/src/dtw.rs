//! Dynamic time warping over multivariate sequences: exact, window
//! constrained, and the multiresolution FastDTW approximation.
//!
//! Indices are 0-based. Point distance is Euclidean over the feature vector.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum DtwError {
    #[error("sequence is empty")]
    Empty,
    #[error("feature dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
    #[error("invalid warp window: {0}")]
    InvalidWindow(String),
}

/// Row-major `length × dim` matrix of points.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    data: Vec<f64>,
    len: usize,
    dim: usize,
}

impl Sequence {
    pub fn new(data: Vec<f64>, len: usize, dim: usize) -> Result<Self, DtwError> {
        if len == 0 {
            return Err(DtwError::Empty);
        }
        if dim == 0 || data.len() != len * dim {
            return Err(DtwError::InvalidSequence(format!(
                "{} values for {len} points of dimension {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DtwError::InvalidSequence("non-finite value".into()));
        }
        Ok(Self { data, len, dim })
    }

    pub fn univariate(values: &[f64]) -> Result<Self, DtwError> {
        Self::new(values.to_vec(), values.len(), 1)
    }

    /// From a `features × length` tensor, i.e. one row per channel.
    pub fn from_channel_major(t: &Tensor) -> Result<Self, DtwError> {
        let (f, l) = t
            .dims2()
            .ok_or_else(|| DtwError::InvalidSequence(format!("expected 2-D tensor, got {:?}", t.shape())))?;
        Self::new(t.transposed().into_data(), l, f)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn point_dist(a: &[f64], b: &[f64]) -> Result<f64, DtwError> {
    if a.len() != b.len() {
        return Err(DtwError::DimMismatch(a.len(), b.len()));
    }
    Ok(euclid(a, b))
}

#[inline]
fn euclid(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == 1 {
        return (a[0] - b[0]).abs();
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Monotone alignment from `(0, 0)` to `(n-1, m-1)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarpPath(pub Vec<(usize, usize)>);

impl WarpPath {
    pub fn cells(&self) -> &[(usize, usize)] {
        &self.0
    }

    pub fn is_valid_for(&self, n: usize, m: usize) -> bool {
        let p = &self.0;
        p.first() == Some(&(0, 0))
            && p.last() == Some(&(n - 1, m - 1))
            && p.windows(2).all(|w| {
                let (di, dj) = (w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1));
                matches!((di, dj), (1, 0) | (0, 1) | (1, 1))
            })
    }

    pub fn transposed(&self) -> WarpPath {
        WarpPath(self.0.iter().map(|&(i, j)| (j, i)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtwResult {
    pub cost: f64,
    pub path: WarpPath,
}

/// Inclusive column interval per row of an `n × m` cost matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarpWindow {
    cols: usize,
    ranges: Vec<(usize, usize)>,
}

impl WarpWindow {
    /// Checks that the window is nonempty per row, monotone, contains both
    /// corners, and is connected from row to row.
    pub fn new(ranges: Vec<(usize, usize)>, cols: usize) -> Result<Self, DtwError> {
        let n = ranges.len();
        if n == 0 || cols == 0 {
            return Err(DtwError::InvalidWindow("empty window".into()));
        }
        if ranges[0].0 != 0 {
            return Err(DtwError::InvalidWindow("window excludes the first cell".into()));
        }
        if ranges[n - 1].1 != cols - 1 {
            return Err(DtwError::InvalidWindow("window excludes the last cell".into()));
        }
        for (i, &(lo, hi)) in ranges.iter().enumerate() {
            if lo > hi || hi >= cols {
                return Err(DtwError::InvalidWindow(format!("row {i}: bad interval [{lo}, {hi}]")));
            }
            if i > 0 {
                let (plo, phi) = ranges[i - 1];
                if lo < plo || hi < phi {
                    return Err(DtwError::InvalidWindow(format!("row {i}: interval not monotone")));
                }
                if lo > phi + 1 {
                    return Err(DtwError::InvalidWindow(format!("row {i}: disconnected from row {}", i - 1)));
                }
            }
        }
        Ok(Self { cols, ranges })
    }

    pub fn full(n: usize, m: usize) -> Self {
        Self {
            cols: m,
            ranges: vec![(0, m - 1); n],
        }
    }

    /// Cells within `band` columns of the rescaled diagonal. Each row's core
    /// reaches the next row's start so the band stays connected when `m > n`.
    pub fn sakoe_chiba(n: usize, m: usize, band: usize) -> Result<Self, DtwError> {
        let start = |i: usize| if n == 1 { 0 } else { i * (m - 1) / (n - 1) };
        let ranges = (0..n)
            .map(|i| {
                let end = if i + 1 == n { m - 1 } else { start(i).max(start(i + 1).saturating_sub(1)) };
                (start(i).saturating_sub(band), (end + band).min(m - 1))
            })
            .collect();
        Self::new(ranges, m)
    }

    pub fn rows(&self) -> usize {
        self.ranges.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn range(&self, i: usize) -> (usize, usize) {
        self.ranges[i]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i < self.ranges.len() && (self.ranges[i].0..=self.ranges[i].1).contains(&j)
    }

    pub fn cell_count(&self) -> usize {
        self.ranges.iter().map(|(lo, hi)| hi - lo + 1).sum()
    }
}

fn check_pair(x: &Sequence, y: &Sequence) -> Result<(), DtwError> {
    if x.dim != y.dim {
        return Err(DtwError::DimMismatch(x.dim, y.dim));
    }
    Ok(())
}

pub fn dtw(x: &Sequence, y: &Sequence) -> Result<DtwResult, DtwError> {
    check_pair(x, y)?;
    Ok(windowed_core(x, y, &WarpWindow::full(x.len, y.len)))
}

pub fn dtw_windowed(x: &Sequence, y: &Sequence, w: &WarpWindow) -> Result<DtwResult, DtwError> {
    check_pair(x, y)?;
    if w.rows() != x.len || w.cols() != y.len {
        return Err(DtwError::InvalidWindow(format!(
            "window is {}×{}, sequences are {}×{}",
            w.rows(),
            w.cols(),
            x.len,
            y.len
        )));
    }
    Ok(windowed_core(x, y, w))
}

/// Accumulated costs stored only inside the window, row by row.
struct WindowCosts<'w> {
    w: &'w WarpWindow,
    offsets: Vec<usize>,
    cost: Vec<f64>,
}

impl WindowCosts<'_> {
    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = self.w.ranges[i];
        if j < lo || j > hi {
            f64::INFINITY
        } else {
            self.cost[self.offsets[i] + j - lo]
        }
    }
}

fn windowed_core(x: &Sequence, y: &Sequence, w: &WarpWindow) -> DtwResult {
    let n = x.len;
    let mut offsets = Vec::with_capacity(n);
    let mut total = 0;
    for &(lo, hi) in &w.ranges {
        offsets.push(total);
        total += hi - lo + 1;
    }
    let mut c = WindowCosts {
        w,
        offsets,
        cost: vec![0.0; total],
    };

    for i in 0..n {
        let (lo, hi) = w.ranges[i];
        let xi = x.point(i);
        let base = c.offsets[i];
        for j in lo..=hi {
            let d = euclid(xi, y.point(j));
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let left = if j > lo { c.cost[base + j - 1 - lo] } else { f64::INFINITY };
                let (up, diag) = if i > 0 {
                    (c.get(i - 1, j), if j > 0 { c.get(i - 1, j - 1) } else { f64::INFINITY })
                } else {
                    (f64::INFINITY, f64::INFINITY)
                };
                diag.min(up).min(left)
            };
            c.cost[base + j - lo] = d + best;
        }
    }

    let m = y.len;
    let cost = c.get(n - 1, m - 1);
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while (i, j) != (0, 0) {
        let diag = if i > 0 && j > 0 { c.get(i - 1, j - 1) } else { f64::INFINITY };
        let up = if i > 0 { c.get(i - 1, j) } else { f64::INFINITY };
        let left = if j > 0 { c.get(i, j - 1) } else { f64::INFINITY };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();
    DtwResult {
        cost,
        path: WarpPath(path),
    }
}

/// Pairwise means of consecutive points; an odd trailing point is copied.
pub fn reduce_by_half(x: &Sequence) -> Sequence {
    let half = x.len.div_ceil(2);
    let mut data = Vec::with_capacity(half * x.dim);
    for k in 0..half {
        let a = x.point(2 * k);
        if 2 * k + 1 < x.len {
            let b = x.point(2 * k + 1);
            data.extend(a.iter().zip(b).map(|(p, q)| (p + q) / 2.0));
        } else {
            data.extend_from_slice(a);
        }
    }
    Sequence {
        data,
        len: half,
        dim: x.dim,
    }
}

/// Projects a half-resolution path onto an `n × m` grid, dilates it by
/// `radius` cells (Chebyshev), clips, and closes it into a monotone window.
pub fn expand_window(low_res_path: &WarpPath, n: usize, m: usize, radius: usize) -> WarpWindow {
    let mut lo = vec![usize::MAX; n];
    let mut hi = vec![0usize; n];
    for &(i, j) in low_res_path.cells() {
        let r0 = (2 * i).saturating_sub(radius);
        let r1 = (2 * i + 1 + radius).min(n - 1);
        let c0 = (2 * j).saturating_sub(radius);
        let c1 = (2 * j + 1 + radius).min(m - 1);
        if r0 > r1 || c0 > c1 {
            continue;
        }
        for r in r0..=r1 {
            lo[r] = lo[r].min(c0);
            hi[r] = hi[r].max(c1);
        }
    }
    for r in (0..n.saturating_sub(1)).rev() {
        lo[r] = lo[r].min(lo[r + 1]);
    }
    for r in 1..n {
        hi[r] = hi[r].max(hi[r - 1]);
    }
    lo[0] = 0;
    hi[n - 1] = m - 1;
    // A row the projection never reached inherits its neighbours' bounds.
    for r in 0..n {
        if lo[r] == usize::MAX {
            lo[r] = if r > 0 { lo[r - 1] } else { 0 };
        }
        if lo[r] > hi[r] {
            hi[r] = lo[r];
        }
    }
    let ranges = lo.into_iter().zip(hi).collect();
    WarpWindow::new(ranges, m).expect("projected window is valid by construction")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FastDtwVariant {
    /// Project, expand by the radius, and refine with windowed DTW.
    #[default]
    Canonical,
    /// Return the coarsest-level result without refinement.
    Truncated,
}

impl std::str::FromStr for FastDtwVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "canonical" => Ok(Self::Canonical),
            "truncated" => Ok(Self::Truncated),
            other => Err(format!("unknown FastDTW variant {other:?}")),
        }
    }
}

pub fn fastdtw(x: &Sequence, y: &Sequence, radius: usize) -> Result<DtwResult, DtwError> {
    fastdtw_with(x, y, radius, FastDtwVariant::Canonical)
}

/// FastDTW. The truncated variant's path lives on the coarsest grid.
pub fn fastdtw_with(x: &Sequence, y: &Sequence, radius: usize, variant: FastDtwVariant) -> Result<DtwResult, DtwError> {
    check_pair(x, y)?;
    Ok(fastdtw_rec(x, y, radius, variant))
}

fn fastdtw_rec(x: &Sequence, y: &Sequence, radius: usize, variant: FastDtwVariant) -> DtwResult {
    if x.len.min(y.len) <= radius + 2 {
        return windowed_core(x, y, &WarpWindow::full(x.len, y.len));
    }
    let coarse = fastdtw_rec(&reduce_by_half(x), &reduce_by_half(y), radius, variant);
    match variant {
        FastDtwVariant::Truncated => coarse,
        FastDtwVariant::Canonical => {
            let w = expand_window(&coarse.path, x.len, y.len, radius);
            windowed_core(x, y, &w)
        }
    }
}
