//! Tape-based reverse-mode differentiation over a fixed set of tensor ops.
//!
//! Every op evaluates eagerly and appends a node holding its value and the
//! handles of its inputs. [`Tape::backward`] walks the nodes once, newest
//! first, accumulating adjoints; only leaves created with [`Tape::param`]
//! keep their gradients.

use std::sync::Arc;

use super::spline::SplineGrid;
use super::tensor::{gemm, gemm_strided, Tensor};
use super::NumericsError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Constant row-sparse matrix used by [`Tape::spmm`]. Row `i` lists
/// `(column, weight)` pairs; products accumulate in list order.
pub type SparseRows = Arc<Vec<Vec<(usize, f64)>>>;

/// User-supplied op with a hand-written adjoint.
pub trait CustomOp: Send {
    fn name(&self) -> &'static str;
    /// Returns one gradient per input, shaped like that input.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ScaleBy(Var, Var),
    Relu(Var),
    Silu(Var),
    Tanh(Var),
    Logistic(Var),
    Sqrt(Var),
    Square(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    FlipRows(Var),
    Conv1d {
        input: Var,
        weight: Var,
        bias: Var,
        cols: Vec<f64>,
    },
    MaxPool1d {
        input: Var,
        argmax: Vec<usize>,
    },
    MeanAxis(Var, usize),
    Sum(Var),
    Mean(Var),
    StackRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    BSpline(Var, SplineGrid),
    Scan {
        input: Var,
        decay: Var,
    },
    ScanDense {
        input: Var,
        transition: Var,
    },
    LogSoftmax(Var),
    Nll {
        logp: Var,
        targets: Vec<(usize, usize)>,
    },
    SpMM(Var, SparseRows),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Record of executed ops. Single-threaded; independent tapes may live on
/// different threads.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of the trainable leaves of a consumed tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn shape_err(op: &'static str, detail: String) -> NumericsError {
    NumericsError::Shape { op, detail }
}

fn silu(x: f64) -> f64 {
    x * logistic(x)
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, needs_grad: bool) -> Result<Var, NumericsError> {
        if cfg!(debug_assertions) && !value.all_finite() {
            return Err(NumericsError::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.nodes.push(Node {
            value: t.clone(),
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericsError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var, NumericsError> {
        self.same_shape(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(data, ta.shape().to_vec())?;
        let ng = self.needs(a) || self.needs(b);
        self.push(name, value, op, ng)
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var, NumericsError> {
        let value = self.value(a).map(f);
        let ng = self.needs(a);
        self.push(name, value, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `x[r×c] + bias[c]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NumericsError> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (_, c) = tx
            .dims2()
            .ok_or_else(|| shape_err("add_bias", format!("input {:?} is not 2-D", tx.shape())))?;
        if tb.len() != c {
            return Err(shape_err("add_bias", format!("{:?} + {:?}", tx.shape(), tb.shape())));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(c) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let value = Tensor::new(data, tx.shape().to_vec())?;
        let ng = self.needs(x) || self.needs(bias);
        self.push("add_bias", value, Op::AddBias(x, bias), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, NumericsError> {
        self.unary("scale", a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var, NumericsError> {
        self.unary("add_scalar", a, |x| x + s, Op::AddScalar(a))
    }

    /// `x · s` where `s` is a one-element tensor on the tape.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var, NumericsError> {
        if self.value(s).len() != 1 {
            return Err(shape_err("scale_by", format!("factor shape {:?}", self.value(s).shape())));
        }
        let k = self.value(s).item();
        let value = self.value(x).map(|v| v * k);
        let ng = self.needs(x) || self.needs(s);
        self.push("scale_by", value, Op::ScaleBy(x, s), ng)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn silu(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary("silu", a, silu, Op::Silu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn logistic(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary("logistic", a, logistic, Op::Logistic(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, NumericsError> {
        if self.value(a).data().iter().any(|&v| v < 0.0) {
            return Err(NumericsError::NonFinite { op: "sqrt" });
        }
        self.unary("sqrt", a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary("square", a, |x| x * x, Op::Square(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, k), (k2, n)) = match (ta.dims2(), tb.dims2()) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(shape_err("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape()))),
        };
        if k != k2 {
            return Err(shape_err("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape())));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), tb.data(), &mut out);
        let value = Tensor::new(out, vec![m, n])?;
        let ng = self.needs(a) || self.needs(b);
        self.push("matmul", value, Op::MatMul(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let t = self.value(a);
        if t.dims2().is_none() {
            return Err(shape_err("transpose", format!("{:?}", t.shape())));
        }
        let value = t.transposed();
        let ng = self.needs(a);
        self.push("transpose", value, Op::Transpose(a), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let value = self.value(a).clone().reshaped(shape.to_vec())?;
        let ng = self.needs(a);
        self.push("reshape", value, Op::Reshape(a), ng)
    }

    /// Reverses the row order of a 2-D tensor (time reversal for `T×d` sequences).
    pub fn flip_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let t = self.value(a);
        let (r, c) = t
            .dims2()
            .ok_or_else(|| shape_err("flip_rows", format!("{:?}", t.shape())))?;
        let mut data = Vec::with_capacity(r * c);
        for i in (0..r).rev() {
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::new(data, vec![r, c])?;
        let ng = self.needs(a);
        self.push("flip_rows", value, Op::FlipRows(a), ng)
    }

    /// Valid-padding, stride-1 convolution of `input[C_in×L]` with
    /// `weight[C_out×C_in×K]` plus `bias[C_out]`, giving `C_out×(L−K+1)`.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, NumericsError> {
        let (tx, tw, tb) = (self.value(input), self.value(weight), self.value(bias));
        let desc = || format!("input {:?}, weight {:?}, bias {:?}", tx.shape(), tw.shape(), tb.shape());
        let (c_in, len) = tx.dims2().ok_or_else(|| shape_err("conv1d", desc()))?;
        let [c_out, wc_in, k] = *tw.shape() else {
            return Err(shape_err("conv1d", desc()));
        };
        if wc_in != c_in || tb.len() != c_out || k == 0 || len < k {
            return Err(shape_err("conv1d", desc()));
        }
        let l_out = len - k + 1;
        let rows = c_in * k;
        let mut cols = vec![0.0; rows * l_out];
        let x = tx.data();
        for c in 0..c_in {
            for kk in 0..k {
                let dst = &mut cols[(c * k + kk) * l_out..(c * k + kk + 1) * l_out];
                dst.copy_from_slice(&x[c * len + kk..c * len + kk + l_out]);
            }
        }
        let mut out = vec![0.0; c_out * l_out];
        for (o, row) in out.chunks_mut(l_out).enumerate() {
            row.fill(tb.data()[o]);
        }
        gemm_strided(c_out, rows, l_out, tw.data(), (rows as isize, 1), &cols, (l_out as isize, 1), 1.0, &mut out);
        let value = Tensor::new(out, vec![c_out, l_out])?;
        let ng = self.needs(input) || self.needs(weight) || self.needs(bias);
        self.push("conv1d", value, Op::Conv1d { input, weight, bias, cols }, ng)
    }

    /// Per-row max pooling over `input[C×L]`; ties go to the lowest index.
    pub fn maxpool1d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var, NumericsError> {
        let t = self.value(input);
        let (c, len) = t
            .dims2()
            .ok_or_else(|| shape_err("maxpool1d", format!("{:?}", t.shape())))?;
        if window == 0 || stride == 0 || len < window {
            return Err(shape_err(
                "maxpool1d",
                format!("input {:?}, window {window}, stride {stride}", t.shape()),
            ));
        }
        let l_out = (len - window) / stride + 1;
        let mut out = Vec::with_capacity(c * l_out);
        let mut argmax = Vec::with_capacity(c * l_out);
        for ch in 0..c {
            let row = t.row(ch);
            for p in 0..l_out {
                let start = p * stride;
                let mut best = start;
                for i in start + 1..start + window {
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                out.push(row[best]);
                argmax.push(ch * len + best);
            }
        }
        let value = Tensor::new(out, vec![c, l_out])?;
        let ng = self.needs(input);
        self.push("maxpool1d", value, Op::MaxPool1d { input, argmax }, ng)
    }

    /// Mean of a 2-D tensor over `axis` (0: over rows, giving `[c]`; 1: over columns, giving `[r]`).
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var, NumericsError> {
        let t = self.value(a);
        let (r, c) = t
            .dims2()
            .ok_or_else(|| shape_err("mean_axis", format!("{:?}", t.shape())))?;
        if axis > 1 || r == 0 || c == 0 {
            return Err(shape_err("mean_axis", format!("{:?} axis {axis}", t.shape())));
        }
        let value = if axis == 0 {
            let mut acc = vec![0.0; c];
            for i in 0..r {
                for (s, v) in acc.iter_mut().zip(t.row(i)) {
                    *s += v;
                }
            }
            Tensor::vector(acc.into_iter().map(|s| s / r as f64).collect())
        } else {
            Tensor::vector((0..r).map(|i| t.row(i).iter().sum::<f64>() / c as f64).collect())
        };
        let ng = self.needs(a);
        self.push("mean_axis", value, Op::MeanAxis(a, axis), ng)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        let value = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push("sum", value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumericsError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(shape_err("mean", "empty tensor".into()));
        }
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        let ng = self.needs(a);
        self.push("mean", value, Op::Mean(a), ng)
    }

    /// Concatenates along axis 0. 1-D inputs of length `d` count as `1×d` rows.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = parts.first().ok_or_else(|| shape_err("stack_rows", "no inputs".into()))?;
        let width = *self.value(*first).shape().last().unwrap_or(&0);
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            let ok = match t.shape() {
                [d] => *d == width,
                [_, d] => *d == width,
                _ => false,
            };
            if !ok {
                return Err(shape_err("stack_rows", format!("{:?} with row width {width}", t.shape())));
            }
            rows += t.len() / width.max(1);
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(data, vec![rows, width])?;
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push("stack_rows", value, Op::StackRows(parts.to_vec()), ng)
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(a);
        let (r, c) = t
            .dims2()
            .ok_or_else(|| shape_err("gather_rows", format!("{:?}", t.shape())))?;
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= r {
                return Err(shape_err("gather_rows", format!("row {i} of {r}")));
            }
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::new(data, vec![indices.len(), c])?;
        let ng = self.needs(a);
        self.push("gather_rows", value, Op::GatherRows(a, indices.to_vec()), ng)
    }

    /// Cubic B-spline basis of every entry; the last dimension grows by the
    /// basis count, entry `(…, i)` expanding to `(…, i·nb .. i·nb+nb)`.
    pub fn bspline_basis(&mut self, a: Var, grid: SplineGrid) -> Result<Var, NumericsError> {
        let t = self.value(a);
        let nb = grid.basis_count();
        let mut shape = t.shape().to_vec();
        match shape.last_mut() {
            Some(last) => *last *= nb,
            None => return Err(shape_err("bspline_basis", "scalar input".into())),
        }
        let mut data = vec![0.0; t.len() * nb];
        for (x, out) in t.data().iter().zip(data.chunks_mut(nb)) {
            grid.eval_into(*x, out);
        }
        let value = Tensor::new(data, shape)?;
        let ng = self.needs(a);
        self.push("bspline_basis", value, Op::BSpline(a, grid), ng)
    }

    /// Diagonal linear recurrence `h_t = decay ⊙ h_{t−1} + u_t`, `h_0 = 0`,
    /// over `input[T×S]`; returns all states `T×S`.
    pub fn scan(&mut self, input: Var, decay: Var) -> Result<Var, NumericsError> {
        let (tu, ta) = (self.value(input), self.value(decay));
        let (steps, s) = tu
            .dims2()
            .ok_or_else(|| shape_err("scan", format!("input {:?}", tu.shape())))?;
        if ta.len() != s {
            return Err(shape_err("scan", format!("input {:?}, decay {:?}", tu.shape(), ta.shape())));
        }
        let a = ta.data();
        let u = tu.data();
        let mut h = vec![0.0; steps * s];
        for t in 0..steps {
            for i in 0..s {
                let prev = if t == 0 { 0.0 } else { h[(t - 1) * s + i] };
                h[t * s + i] = a[i] * prev + u[t * s + i];
            }
        }
        let value = Tensor::new(h, vec![steps, s])?;
        let ng = self.needs(input) || self.needs(decay);
        self.push("scan", value, Op::Scan { input, decay }, ng)
    }

    /// Dense linear recurrence `h_t = A h_{t−1} + u_t`, `h_0 = 0`, with `A[S×S]`.
    pub fn scan_dense(&mut self, input: Var, transition: Var) -> Result<Var, NumericsError> {
        let (tu, ta) = (self.value(input), self.value(transition));
        let (steps, s) = tu
            .dims2()
            .ok_or_else(|| shape_err("scan_dense", format!("input {:?}", tu.shape())))?;
        if ta.shape() != [s, s] {
            return Err(shape_err("scan_dense", format!("input {:?}, transition {:?}", tu.shape(), ta.shape())));
        }
        let a = ta.data();
        let u = tu.data();
        let mut h = vec![0.0; steps * s];
        for t in 0..steps {
            for i in 0..s {
                let mut acc = u[t * s + i];
                if t > 0 {
                    let prev = &h[(t - 1) * s..t * s];
                    acc += a[i * s..(i + 1) * s].iter().zip(prev).map(|(x, y)| x * y).sum::<f64>();
                }
                h[t * s + i] = acc;
            }
        }
        let value = Tensor::new(h, vec![steps, s])?;
        let ng = self.needs(input) || self.needs(transition);
        self.push("scan_dense", value, Op::ScanDense { input, transition }, ng)
    }

    /// Row-wise log-softmax of a 2-D tensor.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        let t = self.value(a);
        let (_, c) = t
            .dims2()
            .ok_or_else(|| shape_err("log_softmax", format!("{:?}", t.shape())))?;
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(c) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let value = Tensor::new(data, t.shape().to_vec())?;
        let ng = self.needs(a);
        self.push("log_softmax", value, Op::LogSoftmax(a), ng)
    }

    /// Mean negative log-likelihood `−mean(logp[row, class])` over `targets`.
    pub fn nll(&mut self, logp: Var, targets: &[(usize, usize)]) -> Result<Var, NumericsError> {
        let t = self.value(logp);
        let (r, c) = t
            .dims2()
            .ok_or_else(|| shape_err("nll", format!("{:?}", t.shape())))?;
        if targets.is_empty() {
            return Err(shape_err("nll", "no targets".into()));
        }
        let mut acc = 0.0;
        for &(i, k) in targets {
            if i >= r || k >= c {
                return Err(shape_err("nll", format!("target ({i}, {k}) outside {:?}", t.shape())));
            }
            acc -= t.get2(i, k);
        }
        let value = Tensor::scalar(acc / targets.len() as f64);
        let ng = self.needs(logp);
        self.push(
            "nll",
            value,
            Op::Nll {
                logp,
                targets: targets.to_vec(),
            },
            ng,
        )
    }

    /// `out[i] = Σ_(j, w) ∈ rows[i] w · x[j]` for `x[N×d]`.
    pub fn spmm(&mut self, rows: SparseRows, x: Var) -> Result<Var, NumericsError> {
        let t = self.value(x);
        let (n, d) = t
            .dims2()
            .ok_or_else(|| shape_err("spmm", format!("{:?}", t.shape())))?;
        let mut out = vec![0.0; rows.len() * d];
        for (i, row) in rows.iter().enumerate() {
            let dst = &mut out[i * d..(i + 1) * d];
            for &(j, w) in row {
                if j >= n {
                    return Err(shape_err("spmm", format!("column {j} with {n} input rows")));
                }
                for (o, v) in dst.iter_mut().zip(t.row(j)) {
                    *o += w * v;
                }
            }
        }
        let value = Tensor::new(out, vec![rows.len(), d])?;
        let ng = self.needs(x);
        self.push("spmm", value, Op::SpMM(x, rows), ng)
    }

    /// Records an externally computed `value` whose adjoint is given by `op`.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Result<Var, NumericsError> {
        let ng = inputs.iter().any(|&v| self.needs(v));
        let name = op.name();
        self.push(name, value, Op::Custom(inputs.to_vec(), op), ng)
    }

    /// Consumes the tape and returns gradients of the scalar `loss` with respect
    /// to every trainable leaf.
    pub fn backward(self, loss: Var) -> Result<Gradients, NumericsError> {
        let lt = &self.nodes[loss.0].value;
        if lt.len() != 1 {
            return Err(NumericsError::NotScalar(lt.shape().to_vec()));
        }
        let shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                grads[idx] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if !(matches!(node.op, Op::Leaf) && node.needs_grad) {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let with = |t: &Tensor, f: &dyn Fn(usize, f64) -> f64| -> Tensor {
            let data = g.data().iter().enumerate().map(|(i, &gi)| f(i, gi)).collect();
            Tensor::new(data, t.shape().to_vec()).expect("shape preserved")
        };
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, with(ta, &|i, gi| gi * tb.data()[i]));
                acc(*b, with(tb, &|i, gi| gi * ta.data()[i]));
            }
            Op::AddBias(x, bias) => {
                acc(*x, g.clone());
                let c = val(*bias).len();
                let mut db = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (s, v) in db.iter_mut().zip(row) {
                        *s += v;
                    }
                }
                acc(*bias, Tensor::new(db, val(*bias).shape().to_vec()).expect("bias shape"));
            }
            Op::Scale(a, s) => acc(*a, g.map(|v| v * s)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::ScaleBy(x, s) => {
                let k = val(*s).item();
                acc(*x, g.map(|v| v * k));
                let ds: f64 = g.data().iter().zip(val(*x).data()).map(|(a, b)| a * b).sum();
                acc(*s, Tensor::new(vec![ds], val(*s).shape().to_vec()).expect("scalar"));
            }
            Op::Relu(a) => {
                let ta = val(*a);
                acc(*a, with(ta, &|i, gi| if ta.data()[i] > 0.0 { gi } else { 0.0 }));
            }
            Op::Silu(a) => {
                let ta = val(*a);
                acc(
                    *a,
                    with(ta, &|i, gi| {
                        let x = ta.data()[i];
                        let s = logistic(x);
                        gi * (s + x * s * (1.0 - s))
                    }),
                );
            }
            Op::Tanh(a) => {
                let ta = val(*a);
                acc(*a, with(ta, &|i, gi| gi * (1.0 - out.data()[i] * out.data()[i])));
            }
            Op::Logistic(a) => {
                let ta = val(*a);
                acc(*a, with(ta, &|i, gi| gi * out.data()[i] * (1.0 - out.data()[i])));
            }
            Op::Sqrt(a) => {
                let ta = val(*a);
                acc(
                    *a,
                    with(ta, &|i, gi| {
                        let y = out.data()[i];
                        if y > 0.0 {
                            gi * 0.5 / y
                        } else {
                            0.0
                        }
                    }),
                );
            }
            Op::Square(a) => {
                let ta = val(*a);
                acc(*a, with(ta, &|i, gi| 2.0 * gi * ta.data()[i]));
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = ta.dims2().expect("2-D");
                let n = tb.shape()[1];
                if self.nodes[a.0].needs_grad {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    gemm_strided(m, n, k, g.data(), (n as isize, 1), tb.data(), (1, n as isize), 0.0, &mut da);
                    acc(*a, Tensor::new(da, vec![m, k]).expect("shape"));
                }
                if self.nodes[b.0].needs_grad {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    gemm_strided(k, m, n, ta.data(), (1, k as isize), g.data(), (n as isize, 1), 0.0, &mut db);
                    acc(*b, Tensor::new(db, vec![k, n]).expect("shape"));
                }
            }
            Op::Transpose(a) => acc(*a, g.transposed()),
            Op::Reshape(a) => acc(*a, g.clone().reshaped(val(*a).shape().to_vec()).expect("reshape")),
            Op::FlipRows(a) => {
                let (r, c) = g.dims2().expect("2-D");
                let mut data = Vec::with_capacity(r * c);
                for i in (0..r).rev() {
                    data.extend_from_slice(g.row(i));
                }
                acc(*a, Tensor::new(data, vec![r, c]).expect("shape"));
            }
            Op::Conv1d {
                input,
                weight,
                bias,
                cols,
            } => {
                let tw = val(*weight);
                let [c_out, c_in, k] = *tw.shape() else { unreachable!() };
                let len = val(*input).shape()[1];
                let l_out = len - k + 1;
                let rows = c_in * k;
                if self.nodes[bias.0].needs_grad {
                    let db = (0..c_out).map(|o| g.row(o).iter().sum()).collect();
                    acc(*bias, Tensor::vector(db));
                }
                if self.nodes[weight.0].needs_grad {
                    // dW = G · colsᵀ
                    let mut dw = vec![0.0; c_out * rows];
                    gemm_strided(c_out, l_out, rows, g.data(), (l_out as isize, 1), cols, (1, l_out as isize), 0.0, &mut dw);
                    acc(*weight, Tensor::new(dw, vec![c_out, c_in, k]).expect("shape"));
                }
                if self.nodes[input.0].needs_grad {
                    // dcols = Wᵀ · G, then fold back onto the input positions
                    let mut dcols = vec![0.0; rows * l_out];
                    gemm_strided(rows, c_out, l_out, tw.data(), (1, rows as isize), g.data(), (l_out as isize, 1), 0.0, &mut dcols);
                    let mut dx = vec![0.0; c_in * len];
                    for c in 0..c_in {
                        for kk in 0..k {
                            let src = &dcols[(c * k + kk) * l_out..(c * k + kk + 1) * l_out];
                            for (d, s) in dx[c * len + kk..c * len + kk + l_out].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    acc(*input, Tensor::new(dx, vec![c_in, len]).expect("shape"));
                }
            }
            Op::MaxPool1d { input, argmax } => {
                let ti = val(*input);
                let mut dx = vec![0.0; ti.len()];
                for (&src, &gi) in argmax.iter().zip(g.data()) {
                    dx[src] += gi;
                }
                acc(*input, Tensor::new(dx, ti.shape().to_vec()).expect("shape"));
            }
            Op::MeanAxis(a, axis) => {
                let ta = val(*a);
                let (r, c) = ta.dims2().expect("2-D");
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = if *axis == 0 {
                            g.data()[j] / r as f64
                        } else {
                            g.data()[i] / c as f64
                        };
                    }
                }
                acc(*a, Tensor::new(dx, vec![r, c]).expect("shape"));
            }
            Op::Sum(a) => acc(*a, Tensor::full(val(*a).shape(), g.item())),
            Op::Mean(a) => {
                let ta = val(*a);
                acc(*a, Tensor::full(ta.shape(), g.item() / ta.len() as f64));
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let tp = val(p);
                    let slice = g.data()[offset..offset + tp.len()].to_vec();
                    offset += tp.len();
                    acc(p, Tensor::new(slice, tp.shape().to_vec()).expect("shape"));
                }
            }
            Op::GatherRows(a, indices) => {
                let ta = val(*a);
                let c = ta.shape()[1];
                let mut dx = vec![0.0; ta.len()];
                for (r, &i) in indices.iter().enumerate() {
                    for (d, s) in dx[i * c..(i + 1) * c].iter_mut().zip(g.row(r)) {
                        *d += s;
                    }
                }
                acc(*a, Tensor::new(dx, ta.shape().to_vec()).expect("shape"));
            }
            Op::BSpline(a, grid) => {
                let ta = val(*a);
                let nb = grid.basis_count();
                let mut deriv = vec![0.0; nb];
                let dx = ta
                    .data()
                    .iter()
                    .zip(g.data().chunks(nb))
                    .map(|(&x, gs)| {
                        grid.deriv_into(x, &mut deriv);
                        gs.iter().zip(&deriv).map(|(a, b)| a * b).sum()
                    })
                    .collect();
                acc(*a, Tensor::new(dx, ta.shape().to_vec()).expect("shape"));
            }
            Op::Scan { input, decay } => {
                let a = val(*decay).data();
                let (steps, s) = out.dims2().expect("2-D");
                let h = out.data();
                let mut lambda = vec![0.0; s];
                let mut du = vec![0.0; steps * s];
                let mut da = vec![0.0; s];
                for t in (0..steps).rev() {
                    for i in 0..s {
                        lambda[i] = g.data()[t * s + i] + a[i] * lambda[i];
                        du[t * s + i] = lambda[i];
                        if t > 0 {
                            da[i] += lambda[i] * h[(t - 1) * s + i];
                        }
                    }
                }
                acc(*input, Tensor::new(du, vec![steps, s]).expect("shape"));
                acc(*decay, Tensor::new(da, val(*decay).shape().to_vec()).expect("shape"));
            }
            Op::ScanDense { input, transition } => {
                let a = val(*transition).data();
                let (steps, s) = out.dims2().expect("2-D");
                let h = out.data();
                let mut lambda = vec![0.0; s];
                let mut next = vec![0.0; s];
                let mut du = vec![0.0; steps * s];
                let mut da = vec![0.0; s * s];
                for t in (0..steps).rev() {
                    // λ_t = g_t + Aᵀ λ_{t+1}
                    for j in 0..s {
                        let mut v = g.data()[t * s + j];
                        for i in 0..s {
                            v += a[i * s + j] * lambda[i];
                        }
                        next[j] = v;
                    }
                    std::mem::swap(&mut lambda, &mut next);
                    du[t * s..(t + 1) * s].copy_from_slice(&lambda);
                    if t > 0 {
                        let prev = &h[(t - 1) * s..t * s];
                        for i in 0..s {
                            for j in 0..s {
                                da[i * s + j] += lambda[i] * prev[j];
                            }
                        }
                    }
                }
                acc(*input, Tensor::new(du, vec![steps, s]).expect("shape"));
                acc(*transition, Tensor::new(da, vec![s, s]).expect("shape"));
            }
            Op::LogSoftmax(a) => {
                let (_, c) = out.dims2().expect("2-D");
                let mut dx = g.data().to_vec();
                for (drow, yrow) in dx.chunks_mut(c).zip(out.data().chunks(c)) {
                    let gsum: f64 = drow.iter().sum();
                    for (d, y) in drow.iter_mut().zip(yrow) {
                        *d -= y.exp() * gsum;
                    }
                }
                acc(*a, Tensor::new(dx, out.shape().to_vec()).expect("shape"));
            }
            Op::Nll { logp, targets } => {
                let tl = val(*logp);
                let c = tl.shape()[1];
                let mut dx = vec![0.0; tl.len()];
                let w = g.item() / targets.len() as f64;
                for &(i, k) in targets {
                    dx[i * c + k] -= w;
                }
                acc(*logp, Tensor::new(dx, tl.shape().to_vec()).expect("shape"));
            }
            Op::SpMM(x, rows) => {
                let tx = val(*x);
                let d = tx.shape()[1];
                let mut dx = vec![0.0; tx.len()];
                for (i, row) in rows.iter().enumerate() {
                    let gi = g.row(i);
                    for &(j, w) in row {
                        for (dd, gv) in dx[j * d..(j + 1) * d].iter_mut().zip(gi) {
                            *dd += w * gv;
                        }
                    }
                }
                acc(*x, Tensor::new(dx, tx.shape().to_vec()).expect("shape"));
            }
            Op::Custom(inputs, op) => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                for (v, gi) in inputs.iter().zip(op.backward(&ins, out, g)) {
                    acc(*v, gi);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(v: &[f64]) -> Tensor {
        Tensor::vector(v.to_vec())
    }

    #[test]
    fn relu_forward() {
        let mut tape = Tape::new();
        let x = tape.constant(t1(&[-1.0, 0.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn conv1d_sliding_sum() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 4, vec![1., 2., 3., 4.]).unwrap());
        let w = tape.constant(Tensor::new(vec![1., 1.], vec![1, 1, 2]).unwrap());
        let b = tape.constant(Tensor::vector(vec![0.0]));
        let y = tape.conv1d(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[3., 5., 7.]);
    }

    #[test]
    fn maxpool_pairs() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 4, vec![1., 3., 2., 5.]).unwrap());
        let y = tape.maxpool1d(x, 2, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[3., 5.]);
    }

    #[test]
    fn maxpool_tie_routes_to_lowest_index() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::matrix(1, 2, vec![4., 4.]).unwrap());
        let y = tape.maxpool1d(x, 2, 2).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let p = tape.param(&t1(&[1.0, -2.0, 3.5]));
        let s = tape.sum(p).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(p).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_sum_of_squares_is_twice_p() {
        let mut tape = Tape::new();
        let p = tape.param(&t1(&[1.0, -2.0, 3.5]));
        let sq = tape.mul(p, p).unwrap();
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(p).unwrap().data(), &[2.0, -4.0, 7.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let p = tape.param(&t1(&[1.0, 2.0]));
        let y = tape.scale(p, 2.0).unwrap();
        assert!(matches!(tape.backward(y), Err(NumericsError::NotScalar(_))));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"));
        let b = tape_vec(&mut tape);
        let err = tape.add(a, b).unwrap_err();
        assert!(err.to_string().contains("add"));
    }

    fn tape_vec(tape: &mut Tape) -> Var {
        tape.constant(t1(&[1.0]))
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 3, vec![1., 2., 3., -5., 0., 5.]).unwrap());
        let y = tape.log_softmax(x).unwrap();
        for r in 0..2 {
            let s: f64 = tape.value(y).row(r).iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unused_leaf_gets_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(&t1(&[1.0]));
        let b = tape.param(&t1(&[2.0]));
        let s = tape.sum(a).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(b).is_none());
        assert_eq!(g.get_or_zeros(b).data(), &[0.0]);
    }

    #[cfg(debug_assertions)]
    #[test]
    fn non_finite_forward_is_an_error() {
        let mut tape = Tape::new();
        let a = tape.constant(t1(&[1e300]));
        assert!(matches!(tape.square(a), Err(NumericsError::NonFinite { op: "square" })));
    }
}
