//! Matrix persistence and heatmap export.
//!
//! A matrix is a row-major little-endian `f64` blob at `path` plus a JSON
//! sidecar at `path.json`. Graphs store their pre-normalization weights
//! densely and are renormalized on load.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{row_normalize, DistanceMatrix, GraphError, SimilarityGraph, SparseAdjacency, SENTINEL};
use crate::numerics::Tensor;

pub const MATRIX_MAGIC: &str = "CSDP-MAT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    Distance,
    Graph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub magic: String,
    pub n: usize,
    pub alpha: f64,
    pub topk: usize,
    pub radius: usize,
    pub kind: MatrixKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoredMatrix {
    Distance(DistanceMatrix),
    Graph(SimilarityGraph),
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_matrix(path: &Path, m: &StoredMatrix, alpha: f64, topk: usize, radius: usize) -> Result<MatrixMeta, GraphError> {
    let (kind, n, values) = match m {
        StoredMatrix::Distance(d) => (MatrixKind::Distance, d.n(), d.data().to_vec()),
        StoredMatrix::Graph(g) => (MatrixKind::Graph, g.n(), g.raw.to_dense().into_data()),
    };
    let meta = MatrixMeta {
        magic: MATRIX_MAGIC.into(),
        n,
        alpha,
        topk,
        radius,
        kind,
    };
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes)?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(meta)
}

pub fn load_matrix(path: &Path) -> Result<(StoredMatrix, MatrixMeta), GraphError> {
    let meta: MatrixMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    if meta.magic != MATRIX_MAGIC {
        return Err(GraphError::Format(format!("bad magic {:?}", meta.magic)));
    }
    let bytes = fs::read(path)?;
    let n = meta.n;
    if bytes.len() != n * n * 8 {
        return Err(GraphError::Format(format!(
            "blob has {} bytes, expected {} for n = {n}",
            bytes.len(),
            n * n * 8
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let m = match meta.kind {
        MatrixKind::Distance => StoredMatrix::Distance(DistanceMatrix::new(n, values)?),
        MatrixKind::Graph => {
            let dense = Tensor::new(values, vec![n, n]).expect("n×n");
            if dense.data().iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
                return Err(GraphError::Format("graph weights must be finite and nonnegative".into()));
            }
            let sparse = SparseAdjacency::from_dense(&dense)?;
            StoredMatrix::Graph(row_normalize(&sparse).with_meta(meta.alpha, meta.topk))
        }
    };
    Ok((m, meta))
}

/// `n×n` CSV without header; sentinels as `NA`, the diagonal as `0`.
pub fn export_heatmap(d: &DistanceMatrix, path: &Path) -> Result<(), GraphError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    let n = d.n();
    for i in 0..n {
        let row: Vec<String> = (0..n)
            .map(|j| {
                let v = d.get(i, j);
                if i == j {
                    "0".to_string()
                } else if v == SENTINEL {
                    "NA".to_string()
                } else {
                    v.to_string()
                }
            })
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_heatmap(path: &Path) -> Result<DistanceMatrix, GraphError> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        for cell in rec.iter() {
            values.push(match cell {
                "NA" => SENTINEL,
                v => v
                    .parse::<f64>()
                    .map_err(|_| GraphError::Format(format!("row {rows}: bad cell {v:?}")))?,
            });
        }
        rows += 1;
    }
    DistanceMatrix::new(rows, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgraph::{build_graph, GraphOrder};

    fn sample() -> DistanceMatrix {
        DistanceMatrix::new(
            3,
            vec![0.0, 0.1 + 0.2, -1.0, 0.1 + 0.2, 0.0, 1e-17, -1.0, 1e-17, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn distance_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("distance.mat");
        let meta = save_matrix(&path, &StoredMatrix::Distance(sample()), 1.0, 5, 1).unwrap();
        assert_eq!(meta.n, 3);
        let (back, meta2) = load_matrix(&path).unwrap();
        assert_eq!(back, StoredMatrix::Distance(sample()));
        assert_eq!(meta, meta2);
        let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(side["magic"], "CSDP-MAT1");
        assert_eq!(side["n"], 3);
        assert_eq!(side["kind"], "distance");
    }

    #[test]
    fn graph_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("graph.mat");
        let g = build_graph(&sample(), 1.0, 1, GraphOrder::Masked).unwrap();
        save_matrix(&path, &StoredMatrix::Graph(g.clone()), 1.0, 1, 1).unwrap();
        assert_eq!(load_matrix(&path).unwrap().0, StoredMatrix::Graph(g));
    }

    #[test]
    fn truncated_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.mat");
        save_matrix(&path, &StoredMatrix::Distance(sample()), 1.0, 5, 1).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load_matrix(&path).is_err());
        fs::write(&path, &bytes).unwrap();
        let side = fs::read_to_string(sidecar_path(&path)).unwrap().replace("CSDP-MAT1", "NOPE");
        fs::write(sidecar_path(&path), side).unwrap();
        assert!(matches!(load_matrix(&path), Err(GraphError::Format(_))));
    }

    #[test]
    fn heatmap_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("heatmap.csv");
        export_heatmap(&sample(), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row[i], "0");
        }
        assert_eq!(rows[0][2], "NA");
        let back = parse_heatmap(&path).unwrap();
        for (a, b) in back.data().iter().zip(sample().data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}
