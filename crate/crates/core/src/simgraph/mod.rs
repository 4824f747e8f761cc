//! Similarity graph over series: cluster the learned representations, take
//! FastDTW distances within clusters (a `-1` sentinel marks pairs in
//! different clusters), turn distances into weights, keep the top-K
//! neighbours per row, and row-normalize.

mod io;
mod kmeans;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dtw::{fastdtw_with, DtwError, FastDtwVariant, Sequence};
use crate::numerics::{SparseRows, Tensor};
use crate::temcl::Representation;

pub use io::{export_heatmap, load_matrix, parse_heatmap, save_matrix, MatrixKind, MatrixMeta, StoredMatrix, MATRIX_MAGIC};
pub use kmeans::kmeans;

/// Distance recorded for pairs in different clusters.
pub const SENTINEL: f64 = -1.0;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("node index {index} out of range for {n} nodes")]
    OutOfRange { index: usize, n: usize },
    #[error("duplicate node index {0}")]
    DuplicateIndex(usize),
    #[error("matrix file: {0}")]
    Format(String),
    #[error(transparent)]
    Dtw(#[from] DtwError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub ids: Vec<usize>,
    pub k: usize,
}

impl ClusterAssignment {
    pub fn single(n: usize) -> Self {
        Self { ids: vec![0; n], k: 1 }
    }
}

/// k-means over temporally mean-pooled representations.
pub fn cluster_representations(reps: &[Representation], k: usize, seed: u64) -> Result<ClusterAssignment, GraphError> {
    if k < 2 || reps.len() < k {
        return Err(GraphError::InvalidArgument(format!(
            "need k >= 2 and at least k series (k = {k}, n = {})",
            reps.len()
        )));
    }
    let points: Vec<Vec<f64>> = reps.iter().map(Representation::mean_pooled).collect();
    Ok(ClusterAssignment {
        ids: kmeans(&points, k, seed),
        k,
    })
}

/// Symmetric `n×n` matrix of distances with [`SENTINEL`] across clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self, GraphError> {
        let m = Self { n, data };
        m.validate()?;
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_sentinel(&self, i: usize, j: usize) -> bool {
        self.get(i, j) == SENTINEL
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let n = self.n;
        if self.data.len() != n * n {
            return Err(GraphError::InvalidArgument(format!("{} entries for a {n}×{n} matrix", self.data.len())));
        }
        for i in 0..n {
            if self.get(i, i) != 0.0 {
                return Err(GraphError::InvalidArgument(format!("diagonal entry {i} is not 0")));
            }
            for j in 0..n {
                let v = self.get(i, j);
                if v != self.get(j, i) {
                    return Err(GraphError::InvalidArgument(format!("not symmetric at ({i}, {j})")));
                }
                if !(v == SENTINEL || (v >= 0.0 && v.is_finite())) {
                    return Err(GraphError::InvalidArgument(format!("entry ({i}, {j}) = {v}")));
                }
            }
        }
        Ok(())
    }

    /// Node `k` of the result is node `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> DistanceMatrix {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for (a, &i) in perm.iter().enumerate() {
            for (b, &j) in perm.iter().enumerate() {
                data[a * n + b] = self.get(i, j);
            }
        }
        DistanceMatrix { n, data }
    }
}

/// Pairwise FastDTW within clusters. Pairs are computed in parallel and
/// written in a fixed order, so the result does not depend on the pool size.
pub fn fastdtw_matrix(
    seqs: &[Sequence],
    clusters: &ClusterAssignment,
    radius: usize,
    variant: FastDtwVariant,
) -> Result<DistanceMatrix, GraphError> {
    let n = seqs.len();
    if clusters.ids.len() != n {
        return Err(GraphError::InvalidArgument(format!(
            "{} cluster ids for {n} series",
            clusters.ids.len()
        )));
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| clusters.ids[i] == clusters.ids[j])
        .collect();
    let costs: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| fastdtw_with(&seqs[i], &seqs[j], radius, variant).map(|r| r.cost))
        .collect::<Result<_, _>>()?;
    let mut data = vec![SENTINEL; n * n];
    for i in 0..n {
        data[i * n + i] = 0.0;
    }
    for (&(i, j), &c) in pairs.iter().zip(&costs) {
        data[i * n + j] = c;
        data[j * n + i] = c;
    }
    Ok(DistanceMatrix { n, data })
}

pub fn contrast_fastdtw_matrix(
    reps: &[Representation],
    clusters: &ClusterAssignment,
    radius: usize,
) -> Result<DistanceMatrix, GraphError> {
    contrast_fastdtw_matrix_with(reps, clusters, radius, FastDtwVariant::Canonical)
}

pub fn contrast_fastdtw_matrix_with(
    reps: &[Representation],
    clusters: &ClusterAssignment,
    radius: usize,
    variant: FastDtwVariant,
) -> Result<DistanceMatrix, GraphError> {
    let seqs = reps
        .iter()
        .map(|r| Sequence::from_channel_major(&r.0))
        .collect::<Result<Vec<_>, _>>()?;
    fastdtw_matrix(&seqs, clusters, radius, variant)
}

/// How sentinel entries and distances become edge weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphOrder {
    /// Sentinels become weight 0; other entries `exp(−α·d̂)`.
    #[default]
    Masked,
    /// The exponential is applied to the sentinel value itself.
    Raw,
    /// Masked, then each weight `w` is replaced by `1/(1+|w|)`.
    Similarity,
}

impl std::str::FromStr for GraphOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "masked" => Ok(Self::Masked),
            "raw" => Ok(Self::Raw),
            "similarity" => Ok(Self::Similarity),
            other => Err(format!("unknown graph order {other:?}")),
        }
    }
}

/// Median of the positive, non-sentinel, off-diagonal distances.
pub fn median_positive(d: &DistanceMatrix) -> Option<f64> {
    let n = d.n();
    let mut vals: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| d.get(i, j))
        .filter(|&v| v > 0.0 && v.is_finite())
        .collect();
    if vals.is_empty() {
        return None;
    }
    vals.sort_by(f64::total_cmp);
    let m = vals.len();
    Some(if m % 2 == 1 {
        vals[m / 2]
    } else {
        (vals[m / 2 - 1] + vals[m / 2]) / 2.0
    })
}

/// Dense `n×n` weights with a zero diagonal.
pub fn scale_adjacency(d: &DistanceMatrix, alpha: f64) -> Result<Tensor, GraphError> {
    scale_adjacency_with(d, alpha, GraphOrder::Masked)
}

pub fn scale_adjacency_with(d: &DistanceMatrix, alpha: f64, order: GraphOrder) -> Result<Tensor, GraphError> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(GraphError::InvalidArgument(format!("alpha must be >= 0, got {alpha}")));
    }
    let n = d.n();
    let scale = median_positive(d).unwrap_or(1.0);
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = d.get(i, j);
            a[i * n + j] = if v == SENTINEL {
                match order {
                    GraphOrder::Raw => (-alpha * SENTINEL).exp(),
                    GraphOrder::Masked | GraphOrder::Similarity => 0.0,
                }
            } else {
                let w = (-alpha * v / scale).exp();
                match order {
                    GraphOrder::Similarity => 1.0 / (1.0 + w.abs()),
                    _ => w,
                }
            };
        }
    }
    Ok(Tensor::new(a, vec![n, n]).expect("n×n"))
}

/// Row-sparse nonnegative adjacency before normalization. Each row lists
/// `(column, weight)` by decreasing weight, ties by lower column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAdjacency {
    pub n: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseAdjacency {
    pub fn to_dense(&self) -> Tensor {
        let n = self.n;
        let mut a = vec![0.0; n * n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                a[i * n + j] = w;
            }
        }
        Tensor::new(a, vec![n, n]).expect("n×n")
    }

    /// Keeps every positive off-diagonal entry of a dense matrix.
    pub fn from_dense(a: &Tensor) -> Result<Self, GraphError> {
        topk_sparsify(a, usize::MAX)
    }
}

fn order_row(row: &mut [(usize, f64)]) {
    row.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
}

/// Keeps the `topk` largest off-diagonal entries per row; zeros are dropped.
pub fn topk_sparsify(a: &Tensor, topk: usize) -> Result<SparseAdjacency, GraphError> {
    let (n, m) = a
        .dims2()
        .filter(|(r, c)| r == c)
        .ok_or_else(|| GraphError::InvalidArgument(format!("expected a square matrix, got {:?}", a.shape())))?;
    if topk == 0 {
        return Err(GraphError::InvalidArgument("topk must be >= 1".into()));
    }
    let rows = (0..n)
        .map(|i| {
            let mut row: Vec<(usize, f64)> = (0..m)
                .filter(|&j| j != i)
                .map(|j| (j, a.get2(i, j)))
                .filter(|&(_, w)| w > 0.0)
                .collect();
            order_row(&mut row);
            row.truncate(topk);
            row
        })
        .collect();
    Ok(SparseAdjacency { n, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    /// Pre-normalization weights, kept so sub-graphs can be renormalized.
    pub raw: SparseAdjacency,
    pub normalized: SparseRows,
    pub alpha: f64,
    pub topk: usize,
}

impl SimilarityGraph {
    pub fn n(&self) -> usize {
        self.raw.n
    }

    /// Graph with no edges.
    pub fn empty(n: usize) -> Self {
        row_normalize(&SparseAdjacency {
            n,
            rows: vec![Vec::new(); n],
        })
    }

    pub fn with_meta(mut self, alpha: f64, topk: usize) -> Self {
        self.alpha = alpha;
        self.topk = topk;
        self
    }

    pub fn normalized_dense(&self) -> Tensor {
        SparseAdjacency {
            n: self.n(),
            rows: self.normalized.as_ref().clone(),
        }
        .to_dense()
    }

    /// Rows with weight 1 on every kept neighbour.
    pub fn unweighted_rows(&self) -> SparseRows {
        Arc::new(
            self.raw
                .rows
                .iter()
                .map(|r| r.iter().map(|&(j, _)| (j, 1.0)).collect())
                .collect(),
        )
    }

    pub fn edge_count(&self) -> usize {
        self.raw.rows.iter().map(Vec::len).sum()
    }

    /// Relabels nodes (new node `k` is old node `perm[k]`), keeping the edge
    /// set and re-sorting each row so the result matches a graph built in the
    /// new order.
    pub fn permuted(&self, perm: &[usize]) -> Result<SimilarityGraph, GraphError> {
        let n = self.n();
        let mut inv = vec![usize::MAX; n];
        for (k, &i) in perm.iter().enumerate() {
            if i >= n {
                return Err(GraphError::OutOfRange { index: i, n });
            }
            if inv[i] != usize::MAX {
                return Err(GraphError::DuplicateIndex(i));
            }
            inv[i] = k;
        }
        if perm.len() != n {
            return Err(GraphError::InvalidArgument(format!("permutation of length {} for {n} nodes", perm.len())));
        }
        let rows = perm
            .iter()
            .map(|&i| {
                let mut row: Vec<(usize, f64)> = self.raw.rows[i].iter().map(|&(j, w)| (inv[j], w)).collect();
                order_row(&mut row);
                row
            })
            .collect();
        Ok(row_normalize(&SparseAdjacency { n, rows }).with_meta(self.alpha, self.topk))
    }
}

/// Divides each row by its sum; all-zero rows stay empty.
pub fn row_normalize(a: &SparseAdjacency) -> SimilarityGraph {
    let normalized = a
        .rows
        .iter()
        .map(|row| {
            let s: f64 = row.iter().map(|&(_, w)| w).sum();
            if s > 0.0 {
                row.iter().map(|&(j, w)| (j, w / s)).collect()
            } else {
                Vec::new()
            }
        })
        .collect();
    SimilarityGraph {
        raw: a.clone(),
        normalized: Arc::new(normalized),
        alpha: f64::NAN,
        topk: 0,
    }
}

/// Distances → weights → top-K → row normalization.
pub fn build_graph(d: &DistanceMatrix, alpha: f64, topk: usize, order: GraphOrder) -> Result<SimilarityGraph, GraphError> {
    let a = scale_adjacency_with(d, alpha, order)?;
    Ok(row_normalize(&topk_sparsify(&a, topk)?).with_meta(alpha, topk))
}

/// Restriction to `indices × indices` of the pre-normalization weights,
/// renormalized. Node `k` of the result is node `indices[k]`.
pub fn batch_subgraph(g: &SimilarityGraph, indices: &[usize]) -> Result<SimilarityGraph, GraphError> {
    let n = g.n();
    let mut pos = vec![usize::MAX; n];
    for (k, &i) in indices.iter().enumerate() {
        if i >= n {
            return Err(GraphError::OutOfRange { index: i, n });
        }
        if pos[i] != usize::MAX {
            return Err(GraphError::DuplicateIndex(i));
        }
        pos[i] = k;
    }
    let rows = indices
        .iter()
        .map(|&i| {
            g.raw.rows[i]
                .iter()
                .filter(|&&(j, _)| pos[j] != usize::MAX)
                .map(|&(j, w)| (pos[j], w))
                .collect()
        })
        .collect();
    let sub = SparseAdjacency {
        n: indices.len(),
        rows,
    };
    Ok(row_normalize(&sub).with_meta(g.alpha, g.topk))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rep(values: &[f64]) -> Representation {
        Representation(Tensor::matrix(1, values.len(), values.to_vec()).unwrap())
    }

    #[test]
    fn identical_series_give_zero_matrix() {
        let reps = vec![rep(&[1.0, 2.0, 3.0]); 4];
        let d = contrast_fastdtw_matrix(&reps, &ClusterAssignment::single(4), 1).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sentinel_combinatorics() {
        let reps: Vec<_> = (0..4).map(|i| rep(&[i as f64, 1.0, 0.0])).collect();
        let c = ClusterAssignment { ids: vec![0, 0, 1, 1], k: 2 };
        let d = contrast_fastdtw_matrix(&reps, &c, 1).unwrap();
        let off: Vec<f64> = (0..4).flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| d.get(i, j)).collect();
        assert_eq!(off.iter().filter(|&&v| v >= 0.0).count(), 4);
        assert_eq!(off.iter().filter(|&&v| v == SENTINEL).count(), 8);
        d.validate().unwrap();
    }

    #[test]
    fn alpha_zero_and_duplicates() {
        let d = DistanceMatrix::new(3, vec![0.0, 2.0, -1.0, 2.0, 0.0, 0.0, -1.0, 0.0, 0.0]).unwrap();
        let a = scale_adjacency(&d, 0.0).unwrap();
        assert_eq!(a.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let a = scale_adjacency(&d, 3.0).unwrap();
        assert_eq!(a.get2(1, 2), 1.0);
        assert_eq!(a.get2(0, 2), 0.0);
        assert!((a.get2(0, 1) - (-3.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn raw_order_weights_sentinels() {
        let d = DistanceMatrix::new(2, vec![0.0, -1.0, -1.0, 0.0]).unwrap();
        let a = scale_adjacency_with(&d, 1.0, GraphOrder::Raw).unwrap();
        assert!((a.get2(0, 1) - 1f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn topk_tie_rule() {
        let a = Tensor::matrix(
            5,
            5,
            vec![
                0.0, 0.9, 0.5, 0.5, 0.1, //
                0.0, 0.0, 0.0, 0.0, 0.0, //
                1.0, 1.0, 0.0, 1.0, 1.0, //
                0.0, 0.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0, 0.0,
            ],
        )
        .unwrap();
        let s = topk_sparsify(&a, 2).unwrap();
        assert_eq!(s.rows[0], vec![(1, 0.9), (2, 0.5)]);
        assert!(s.rows[1].is_empty());
        assert_eq!(s.rows[2], vec![(0, 1.0), (1, 1.0)]);
        let all = topk_sparsify(&a, 4).unwrap();
        assert_eq!(all.to_dense(), a);
    }

    #[test]
    fn normalization() {
        let s = SparseAdjacency {
            n: 3,
            rows: vec![vec![(1, 2.0), (2, 2.0)], vec![], vec![(0, 0.3)]],
        };
        let g = row_normalize(&s);
        assert_eq!(g.normalized[0], vec![(1, 0.5), (2, 0.5)]);
        assert!(g.normalized[1].is_empty());
        assert_eq!(g.normalized[2], vec![(0, 1.0)]);
    }

    #[test]
    fn subgraphs() {
        let s = SparseAdjacency {
            n: 3,
            rows: vec![vec![(1, 0.8), (2, 0.2)], vec![(0, 0.8), (2, 0.1)], vec![(0, 0.5)]],
        };
        let g = row_normalize(&s);
        assert_eq!(batch_subgraph(&g, &[0, 1, 2]).unwrap().normalized, g.normalized);
        let one = batch_subgraph(&g, &[2]).unwrap();
        assert_eq!(one.n(), 1);
        assert!(one.normalized[0].is_empty());
        let pair = batch_subgraph(&g, &[1, 0]).unwrap();
        assert_eq!(pair.normalized_dense().data(), &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(batch_subgraph(&g, &[3]), Err(GraphError::OutOfRange { .. })));
        assert!(matches!(batch_subgraph(&g, &[1, 1]), Err(GraphError::DuplicateIndex(1))));
    }

    #[test]
    fn median_ignores_sentinels_and_zeros() {
        let d = DistanceMatrix::new(3, vec![0.0, 4.0, -1.0, 4.0, 0.0, 0.0, -1.0, 0.0, 0.0]).unwrap();
        assert_eq!(median_positive(&d), Some(4.0));
        let z = DistanceMatrix::new(2, vec![0.0, -1.0, -1.0, 0.0]).unwrap();
        assert_eq!(median_positive(&z), None);
    }

    #[test]
    fn validation_catches_asymmetry() {
        assert!(DistanceMatrix::new(2, vec![0.0, 1.0, 2.0, 0.0]).is_err());
        assert!(DistanceMatrix::new(2, vec![1.0, 1.0, 1.0, 0.0]).is_err());
        assert!(DistanceMatrix::new(2, vec![0.0, -2.0, -2.0, 0.0]).is_err());
    }
}
