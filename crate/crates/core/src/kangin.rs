//! KAN-enhanced GIN layers and the classification head.
//!
//! A KAN bank maps `d_in → d_out` with one learnable univariate function per
//! input/output pair: `φ_ij(x) = w_ij·silu(x) + Σ_k c_ijk·B_k(clamp(x))`, and
//! `out_j = Σ_i φ_ij(v_i)`. A GIN layer applies a bank to
//! `(1+ε)·h(v) + Σ_u Ã[v][u]·h(u)`.

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::numerics::{bind_params, normal_tensor, uniform_tensor, NumericsError, ParamSet, SparseRows, SplineGrid, Tape, Tensor, Var};
use crate::simgraph::SimilarityGraph;

#[derive(Debug, Error)]
pub enum KanGinError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Function bank of one KAN layer.
#[derive(Debug, Clone, PartialEq)]
pub struct KanBank {
    /// `[d_in×d_out]` silu residual weights.
    pub residual: Tensor,
    /// `[d_in·nb × d_out]`; row `i·nb + k` holds `c_i·k` for every output.
    pub coef: Tensor,
    pub grid: SplineGrid,
}

impl KanBank {
    pub fn init(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let grid = SplineGrid::default();
        let nb = grid.basis_count();
        Self {
            residual: uniform_tensor(rng, &[d_in, d_out], 1.0 / (d_in as f64).sqrt()),
            coef: normal_tensor(rng, &[d_in * nb, d_out], 0.1 / (grid.intervals as f64).sqrt()),
            grid,
        }
    }

    pub fn d_in(&self) -> usize {
        self.residual.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.residual.shape()[1]
    }
}

/// Applies a bank to the rows of `x[N×d_in]`.
pub fn kan_on_tape(tape: &mut Tape, residual: Var, coef: Var, grid: SplineGrid, x: Var) -> Result<Var, KanGinError> {
    let s = tape.silu(x)?;
    let r = tape.matmul(s, residual)?;
    let basis = tape.bspline_basis(x, grid)?;
    let sp = tape.matmul(basis, coef)?;
    Ok(tape.add(r, sp)?)
}

/// `out_j = Σ_i φ_ij(v_i)`.
pub fn kan_apply(bank: &KanBank, v: &[f64]) -> Result<Vec<f64>, KanGinError> {
    if v.len() != bank.d_in() {
        return Err(KanGinError::DimMismatch(format!(
            "input has {} entries, bank expects {}",
            v.len(),
            bank.d_in()
        )));
    }
    let mut tape = Tape::new();
    let r = tape.constant(bank.residual.clone());
    let c = tape.constant(bank.coef.clone());
    let x = tape.constant(Tensor::matrix(1, v.len(), v.to_vec())?);
    let out = kan_on_tape(&mut tape, r, c, bank.grid, x)?;
    Ok(tape.value(out).data().to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GinLayerParams {
    pub epsilon: Tensor,
    pub bank: KanBank,
}

impl GinLayerParams {
    pub fn init(d: usize, rng: &mut impl Rng) -> Self {
        Self {
            epsilon: Tensor::vector(vec![0.0]),
            bank: KanBank::init(d, d, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    /// `[d×classes]`.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ClassifierHead {
    pub fn init(d: usize, classes: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: uniform_tensor(rng, &[d, classes], 1.0 / (d as f64).sqrt()),
            bias: Tensor::zeros(&[classes]),
        }
    }

    pub fn classes(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Stack of GIN layers followed by the head.
#[derive(Debug, Clone, PartialEq)]
pub struct KanGin {
    pub layers: Vec<GinLayerParams>,
    pub head: ClassifierHead,
}

impl KanGin {
    pub fn init(d: usize, classes: usize, layers: usize, rng: &mut impl Rng) -> Result<Self, KanGinError> {
        if d == 0 || classes < 2 || !(1..=3).contains(&layers) {
            return Err(KanGinError::InvalidArgument(format!(
                "need d > 0, classes >= 2 and 1..=3 layers (got {d}, {classes}, {layers})"
            )));
        }
        let layers = (0..layers).map(|_| GinLayerParams::init(d, rng)).collect();
        Ok(Self {
            layers,
            head: ClassifierHead::init(d, classes, rng),
        })
    }

    pub fn width(&self) -> usize {
        self.head.weight.shape()[0]
    }
}

impl ParamSet for KanGin {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            v.push((format!("kangin.layer{l}.epsilon"), &layer.epsilon));
            v.push((format!("kangin.layer{l}.residual"), &layer.bank.residual));
            v.push((format!("kangin.layer{l}.coef"), &layer.bank.coef));
        }
        v.push(("kangin.head.weight".into(), &self.head.weight));
        v.push(("kangin.head.bias".into(), &self.head.bias));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        for layer in &mut self.layers {
            v.push(&mut layer.epsilon);
            v.push(&mut layer.bank.residual);
            v.push(&mut layer.bank.coef);
        }
        v.push(&mut self.head.weight);
        v.push(&mut self.head.bias);
        v
    }
}

/// Tape handles of a [`KanGin`] in `named_params` order.
#[derive(Debug, Clone)]
pub struct KanGinVars {
    pub all: Vec<Var>,
    grid: SplineGrid,
}

impl KanGinVars {
    pub fn bind(tape: &mut Tape, m: &KanGin) -> Self {
        Self::from_vars(m, bind_params(tape, m))
    }

    pub fn constants(tape: &mut Tape, m: &KanGin) -> Self {
        let all = m.named_params().into_iter().map(|(_, t)| tape.constant(t.clone())).collect();
        Self::from_vars(m, all)
    }

    pub fn from_vars(m: &KanGin, all: Vec<Var>) -> Self {
        let grid = m.layers.first().map(|l| l.bank.grid).unwrap_or_default();
        Self { all, grid }
    }

    fn layer_count(&self) -> usize {
        (self.all.len() - 2) / 3
    }
}

/// One GIN layer over sparse neighbor rows.
pub fn gin_layer_on_tape(
    tape: &mut Tape,
    vars: &KanGinVars,
    layer: usize,
    h: Var,
    rows: &SparseRows,
) -> Result<Var, KanGinError> {
    let [eps, residual, coef] = [0, 1, 2].map(|k| vars.all[3 * layer + k]);
    let own = tape.scale_by(h, eps)?;
    let own = tape.add(h, own)?;
    let neigh = tape.spmm(Arc::clone(rows), h)?;
    let z = tape.add(own, neigh)?;
    kan_on_tape(tape, residual, coef, vars.grid, z)
}

pub fn classify_on_tape(tape: &mut Tape, vars: &KanGinVars, h: Var) -> Result<Var, KanGinError> {
    let n = vars.all.len();
    let z = tape.matmul(h, vars.all[n - 2])?;
    let z = tape.add_bias(z, vars.all[n - 1])?;
    Ok(tape.log_softmax(z)?)
}

/// All layers then the head: `N×classes` log-probabilities.
pub fn forward_on_tape(tape: &mut Tape, vars: &KanGinVars, h: Var, rows: &SparseRows) -> Result<Var, KanGinError> {
    let n = tape.value(h).dims2().map(|(n, _)| n).unwrap_or(0);
    if rows.len() != n {
        return Err(KanGinError::DimMismatch(format!("graph has {} nodes, features {n}", rows.len())));
    }
    let mut h = h;
    for l in 0..vars.layer_count() {
        h = gin_layer_on_tape(tape, vars, l, h, rows)?;
    }
    classify_on_tape(tape, vars, h)
}

fn check_features(h: &Tensor, n: usize, d: usize) -> Result<(), KanGinError> {
    if h.dims2() != Some((n, d)) {
        return Err(KanGinError::DimMismatch(format!(
            "features {:?}, expected [{n}, {d}]",
            h.shape()
        )));
    }
    Ok(())
}

/// One layer with explicit neighbor rows.
pub fn gin_layer_rows(p: &GinLayerParams, h: &Tensor, rows: &SparseRows) -> Result<Tensor, KanGinError> {
    check_features(h, rows.len(), p.bank.d_in())?;
    let m = KanGin {
        layers: vec![p.clone()],
        head: ClassifierHead {
            weight: Tensor::zeros(&[p.bank.d_out(), 2]),
            bias: Tensor::zeros(&[2]),
        },
    };
    let mut tape = Tape::new();
    let vars = KanGinVars::constants(&mut tape, &m);
    let hv = tape.constant(h.clone());
    let out = gin_layer_on_tape(&mut tape, &vars, 0, hv, rows)?;
    Ok(tape.value(out).clone())
}

/// One layer aggregating with the graph's row-normalized weights.
pub fn gin_layer(p: &GinLayerParams, h: &Tensor, g: &SimilarityGraph) -> Result<Tensor, KanGinError> {
    gin_layer_rows(p, h, &g.normalized)
}

/// Row-wise log-softmax of `h·W + b`.
pub fn classify(head: &ClassifierHead, h: &Tensor) -> Result<Tensor, KanGinError> {
    let d = head.weight.shape()[0];
    let n = h.dims2().map(|(n, _)| n).unwrap_or(0);
    check_features(h, n, d)?;
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let w = tape.constant(head.weight.clone());
    let b = tape.constant(head.bias.clone());
    let z = tape.matmul(hv, w)?;
    let z = tape.add_bias(z, b)?;
    let out = tape.log_softmax(z)?;
    Ok(tape.value(out).clone())
}

/// Index of the largest entry of each row (lowest index on ties).
pub fn argmax_rows(logp: &Tensor) -> Vec<usize> {
    let (n, _) = logp.dims2().unwrap_or((0, 0));
    (0..n)
        .map(|i| {
            logp.row(i)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                .0
        })
        .collect()
}
