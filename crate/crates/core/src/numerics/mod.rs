//! Dense `f64` tensors, reverse-mode differentiation, Adam with a plateau
//! schedule, finite-difference gradient checking, and checkpoints.

mod checkpoint;
mod gradcheck;
mod optim;
mod spline;
mod tape;
mod tensor;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use checkpoint::{blob_path, Checkpoint, ParamSet, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, grad_check_sampled};
pub use optim::{adam_step, plateau_update, OptimState, BETA1, BETA2, EPS, LR_FLOOR};
pub use spline::SplineGrid;
pub use tape::{CustomOp, Gradients, SparseRows, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("function under gradient check returned NaN")]
    GradCheckNan,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// `Uniform(-bound, bound)` initialization.
pub fn uniform_tensor(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..=bound);
    }
    t
}

pub fn uniform_range_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(lo..=hi);
    }
    t
}

pub fn normal_tensor(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("std is finite and non-negative");
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = dist.sample(rng);
    }
    t
}

/// Binds every parameter of `ps` as a trainable leaf, in `named_params` order.
pub fn bind_params(tape: &mut Tape, ps: &impl ParamSet) -> Vec<Var> {
    ps.named_params().into_iter().map(|(_, t)| tape.param(t)).collect()
}
