//! Finite-difference checks of every hand-written adjoint the model relies on.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::TimeSeries;
use crate::dpmamba::{encode_nodes_on_tape, SsmConfig, SsmParams, SsmVars};
use crate::kangin::{forward_on_tape, kan_on_tape, KanBank, KanGin, KanGinVars};
use crate::numerics::{grad_check_sampled, uniform_tensor, NumericsError, ParamSet, SparseRows, Tape, Tensor, Var};
use crate::temcl::{pretrain_loss_on_tape, EncoderParams, EncoderVars};

pub const GRAD_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-6;
const MAX_ENTRIES: usize = 48;

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn numeric<E: std::fmt::Display>(e: E) -> NumericsError {
    NumericsError::InvalidArgument(e.to_string())
}

/// `Σ w ⊙ out` with fixed random weights, so every output entry matters.
fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Result<Var, NumericsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.value(out).shape().to_vec();
    let w = tape.constant(uniform_tensor(&mut rng, &shape, 1.0));
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

fn report(name: &'static str, err: Result<f64, NumericsError>) -> GradReport {
    let max_rel_error = err.unwrap_or(f64::INFINITY);
    GradReport {
        name,
        max_rel_error,
        passed: max_rel_error <= GRAD_TOLERANCE,
    }
}

fn wave(len: usize, phase: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len)
        .map(|t| (t as f64 * 0.3 + phase).sin() + 0.1 * rng.random_range(-1.0..1.0))
        .collect()
}

/// Contrastive pretraining loss on a two-series batch.
pub fn check_contrastive(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchors: Vec<TimeSeries> = (0..2)
        .map(|i| TimeSeries::from_channels(vec![wave(40, i as f64, &mut rng)], i).expect("finite"))
        .collect();
    let enc = EncoderParams::init(1, 4, &mut rng).expect("valid sizes");
    let params: Vec<Tensor> = enc.named_params().into_iter().map(|(_, t)| t.clone()).collect();
    report(
        "temcl_contrastive",
        grad_check_sampled(
            |tape, v| {
                let vars = EncoderVars::from_slice(v);
                pretrain_loss_on_tape(tape, &vars, &anchors, 0.2, 1.0, seed).map_err(numeric)
            },
            &params,
            STEP,
            Some(MAX_ENTRIES),
            seed,
        ),
    )
}

/// Diagonal and dense scan adjoints with respect to inputs and transitions.
pub fn check_scan(seed: u64) -> Vec<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (steps, s) = (12, 4);
    let u = uniform_tensor(&mut rng, &[steps, s], 1.0);
    let decay = Tensor::vector((0..s).map(|_| rng.random_range(0.3..0.95)).collect());
    let dense = Tensor::new((0..s * s).map(|_| rng.random_range(-0.3..0.3)).collect(), vec![s, s]).expect("s×s");
    vec![
        report(
            "scan",
            grad_check_sampled(
                |tape, v| {
                    let h = tape.scan(v[0], v[1])?;
                    weighted_sum(tape, h, seed)
                },
                &[u.clone(), decay],
                STEP,
                None,
                seed,
            ),
        ),
        report(
            "scan_dense",
            grad_check_sampled(
                |tape, v| {
                    let h = tape.scan_dense(v[0], v[1])?;
                    weighted_sum(tape, h, seed)
                },
                &[u, dense],
                STEP,
                None,
                seed,
            ),
        ),
    ]
}

/// The full dual-pathway encoder, pooled and projected.
pub fn check_dpmamba(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = SsmParams::init(&SsmConfig::new(3, 4), &mut rng).expect("valid sizes");
    let seqs = vec![uniform_tensor(&mut rng, &[6, 3], 1.0), uniform_tensor(&mut rng, &[4, 3], 1.0)];
    let params: Vec<Tensor> = p.named_params().into_iter().map(|(_, t)| t.clone()).collect();
    report(
        "dpmamba",
        grad_check_sampled(
            |tape, v| {
                let vars = SsmVars::from_vars(tape, &p, v.to_vec()).map_err(numeric)?;
                let out = encode_nodes_on_tape(tape, &vars, &seqs).map_err(numeric)?;
                weighted_sum(tape, out, seed)
            },
            &params,
            STEP,
            None,
            seed,
        ),
    )
}

/// A KAN bank with respect to its inputs and both coefficient sets. Inputs
/// stay clear of the clamp boundary, where the basis has a kink.
pub fn check_kan(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bank = KanBank::init(3, 2, &mut rng);
    let x = Tensor::new((0..12).map(|_| rng.random_range(-2.8..2.8)).collect(), vec![4, 3]).expect("4×3");
    let grid = bank.grid;
    report(
        "kan_apply",
        grad_check_sampled(
            |tape, v| {
                let out = kan_on_tape(tape, v[1], v[2], grid, v[0]).map_err(numeric)?;
                weighted_sum(tape, out, seed)
            },
            &[x, bank.residual, bank.coef],
            STEP,
            None,
            seed,
        ),
    )
}

/// NLL through two KAN-GIN layers and the head on a five-node graph, with
/// respect to node features and every model parameter.
pub fn check_kangin(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = KanGin::init(4, 3, 2, &mut rng).expect("valid sizes");
    for l in &mut model.layers {
        l.epsilon = Tensor::vector(vec![rng.random_range(-0.2..0.2)]);
    }
    let h = uniform_tensor(&mut rng, &[5, 4], 1.0);
    let rows: SparseRows = Arc::new(vec![
        vec![(1, 0.6), (4, 0.4)],
        vec![(0, 0.5), (2, 0.5)],
        vec![(1, 1.0)],
        vec![],
        vec![(0, 0.3), (2, 0.3), (3, 0.4)],
    ]);
    let targets = [(0, 0), (1, 2), (2, 1), (4, 0)];
    let mut params = vec![h];
    params.extend(model.named_params().into_iter().map(|(_, t)| t.clone()));
    report(
        "kangin_nll",
        grad_check_sampled(
            |tape, v| {
                let vars = KanGinVars::from_vars(&model, v[1..].to_vec());
                let logp = forward_on_tape(tape, &vars, v[0], &rows).map_err(numeric)?;
                tape.nll(logp, &targets)
            },
            &params,
            STEP,
            Some(MAX_ENTRIES),
            seed,
        ),
    )
}

/// Every check, in a fixed order.
pub fn run_battery(seed: u64) -> Vec<GradReport> {
    let mut out = vec![check_contrastive(seed)];
    out.extend(check_scan(seed));
    out.push(check_dpmamba(seed));
    out.push(check_kan(seed));
    out.push(check_kangin(seed));
    out
}
