//! Dual-pathway linear state-space encoder.
//!
//! A representation `d×T′` is read as a `T′×d` sequence. The forward path
//! runs `h_t = A h_{t−1} + B x_t`, `y_t = C h_t` from `h_0 = 0`; the reverse
//! path is the same recurrence on the time-reversed input, reversed back.
//! The two are mixed as `α·y + β·y_R`, mean-pooled over time, projected and
//! passed through silu to give one feature vector per series.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{bind_params, uniform_range_tensor, uniform_tensor, NumericsError, ParamSet, Tape, Tensor, Var};
use crate::temcl::Representation;

#[derive(Debug, Error)]
pub enum SsmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SsmConfig {
    pub d_model: usize,
    pub state: usize,
    /// Learn a dense transition matrix instead of a logistic-bounded diagonal.
    pub dense_a: bool,
    /// Give the reverse path its own `A`, `B`, `C`.
    pub split_paths: bool,
}

impl SsmConfig {
    pub fn new(d_model: usize, state: usize) -> Self {
        Self {
            d_model,
            state,
            dense_a: false,
            split_paths: false,
        }
    }
}

/// Transition, input and readout maps of one direction.
#[derive(Debug, Clone, PartialEq)]
pub struct PathParams {
    /// `[S]` pre-activation of the diagonal (`A = logistic(a)`), or `[S×S]`
    /// used directly when dense.
    pub a: Tensor,
    /// `[S×d]`.
    pub b: Tensor,
    /// `[d×S]`.
    pub c: Tensor,
}

impl PathParams {
    fn init(cfg: &SsmConfig, rng: &mut impl Rng) -> Self {
        let (s, d) = (cfg.state, cfg.d_model);
        let a_raw = uniform_range_tensor(rng, &[s], 0.5, 2.0);
        let a = if cfg.dense_a {
            let mut dense = Tensor::zeros(&[s, s]);
            for i in 0..s {
                dense.data_mut()[i * s + i] = logistic(a_raw.data()[i]);
            }
            dense
        } else {
            a_raw
        };
        Self {
            a,
            b: uniform_tensor(rng, &[s, d], 1.0 / (d as f64).sqrt()),
            c: uniform_tensor(rng, &[d, s], 1.0 / (s as f64).sqrt()),
        }
    }

    pub fn is_dense(&self) -> bool {
        self.a.ndim() == 2
    }

    /// The effective transition: diagonal entries, or the dense matrix.
    pub fn transition(&self) -> Tensor {
        if self.is_dense() {
            self.a.clone()
        } else {
            self.a.map(logistic)
        }
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsmParams {
    pub forward: PathParams,
    pub reverse: Option<PathParams>,
    pub alpha_mix: Tensor,
    pub beta_mix: Tensor,
    /// `[d×d]`, applied as `pooled · w_out`.
    pub w_out: Tensor,
    pub b_out: Tensor,
}

impl SsmParams {
    pub fn init(cfg: &SsmConfig, rng: &mut impl Rng) -> Result<Self, SsmError> {
        if cfg.d_model == 0 || cfg.state == 0 {
            return Err(SsmError::InvalidArgument(format!(
                "d_model and state must be positive (got {}, {})",
                cfg.d_model, cfg.state
            )));
        }
        let forward = PathParams::init(cfg, rng);
        let reverse = cfg.split_paths.then(|| PathParams::init(cfg, rng));
        let d = cfg.d_model;
        Ok(Self {
            forward,
            reverse,
            alpha_mix: Tensor::vector(vec![0.5]),
            beta_mix: Tensor::vector(vec![0.5]),
            w_out: uniform_tensor(rng, &[d, d], 1.0 / (d as f64).sqrt()),
            b_out: Tensor::zeros(&[d]),
        })
    }

    pub fn d_model(&self) -> usize {
        self.forward.b.shape()[1]
    }

    pub fn state(&self) -> usize {
        self.forward.b.shape()[0]
    }
}

impl ParamSet for SsmParams {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v = vec![
            ("dpmamba.a".to_string(), &self.forward.a),
            ("dpmamba.b".to_string(), &self.forward.b),
            ("dpmamba.c".to_string(), &self.forward.c),
        ];
        if let Some(r) = &self.reverse {
            v.push(("dpmamba.reverse.a".to_string(), &r.a));
            v.push(("dpmamba.reverse.b".to_string(), &r.b));
            v.push(("dpmamba.reverse.c".to_string(), &r.c));
        }
        v.extend([
            ("dpmamba.alpha_mix".to_string(), &self.alpha_mix),
            ("dpmamba.beta_mix".to_string(), &self.beta_mix),
            ("dpmamba.w_out".to_string(), &self.w_out),
            ("dpmamba.b_out".to_string(), &self.b_out),
        ]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.forward.a, &mut self.forward.b, &mut self.forward.c];
        if let Some(r) = &mut self.reverse {
            v.extend([&mut r.a, &mut r.b, &mut r.c]);
        }
        v.extend([&mut self.alpha_mix, &mut self.beta_mix, &mut self.w_out, &mut self.b_out]);
        v
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PathVars {
    a: Var,
    dense: bool,
    b_t: Var,
    c_t: Var,
}

/// Parameters bound on a tape, with the transposes and transition computed once.
#[derive(Debug, Clone)]
pub struct SsmVars {
    pub all: Vec<Var>,
    forward: PathVars,
    reverse: PathVars,
    alpha: Var,
    beta: Var,
    w_out: Var,
    b_out: Var,
}

impl SsmVars {
    pub fn bind(tape: &mut Tape, p: &SsmParams) -> Result<Self, SsmError> {
        let all = bind_params(tape, p);
        Self::from_vars(tape, p, all)
    }

    pub fn constants(tape: &mut Tape, p: &SsmParams) -> Result<Self, SsmError> {
        let all = p.named_params().into_iter().map(|(_, t)| tape.constant(t.clone())).collect();
        Self::from_vars(tape, p, all)
    }

    /// `vars` in `named_params` order.
    pub fn from_vars(tape: &mut Tape, p: &SsmParams, vars: Vec<Var>) -> Result<Self, SsmError> {
        let path = |tape: &mut Tape, at: usize, pp: &PathParams| -> Result<PathVars, SsmError> {
            let dense = pp.is_dense();
            let a = if dense { vars[at] } else { tape.logistic(vars[at])? };
            Ok(PathVars {
                a,
                dense,
                b_t: tape.transpose(vars[at + 1])?,
                c_t: tape.transpose(vars[at + 2])?,
            })
        };
        let forward = path(tape, 0, &p.forward)?;
        let (reverse, rest) = match &p.reverse {
            Some(r) => (path(tape, 3, r)?, 6),
            None => (forward, 3),
        };
        Ok(Self {
            forward,
            reverse,
            alpha: vars[rest],
            beta: vars[rest + 1],
            w_out: vars[rest + 2],
            b_out: vars[rest + 3],
            all: vars,
        })
    }
}

fn states_on_tape(tape: &mut Tape, pv: &PathVars, x: Var) -> Result<Var, SsmError> {
    let u = tape.matmul(x, pv.b_t)?;
    Ok(if pv.dense {
        tape.scan_dense(u, pv.a)?
    } else {
        tape.scan(u, pv.a)?
    })
}

fn path_on_tape(tape: &mut Tape, pv: &PathVars, x: Var) -> Result<Var, SsmError> {
    let h = states_on_tape(tape, pv, x)?;
    Ok(tape.matmul(h, pv.c_t)?)
}

fn check_seq(x: &Tensor, d: usize) -> Result<(), SsmError> {
    match x.dims2() {
        Some((t, dd)) if t >= 1 && dd == d => Ok(()),
        _ => Err(SsmError::InvalidArgument(format!(
            "expected a T×{d} sequence, got {:?}",
            x.shape()
        ))),
    }
}

/// Forward path `y` for a `T′×d` sequence.
pub fn ssm_forward_on_tape(tape: &mut Tape, v: &SsmVars, x: Var) -> Result<Var, SsmError> {
    path_on_tape(tape, &v.forward, x)
}

/// Reverse path: reverse ∘ forward recurrence ∘ reverse.
pub fn ssm_reverse_on_tape(tape: &mut Tape, v: &SsmVars, x: Var) -> Result<Var, SsmError> {
    let xr = tape.flip_rows(x)?;
    let yr = path_on_tape(tape, &v.reverse, xr)?;
    Ok(tape.flip_rows(yr)?)
}

pub fn combine_on_tape(tape: &mut Tape, v: &SsmVars, y: Var, yr: Var) -> Result<Var, SsmError> {
    let a = tape.scale_by(y, v.alpha)?;
    let b = tape.scale_by(yr, v.beta)?;
    Ok(tape.add(a, b)?)
}

/// Time-pooled mixture of both paths, before projection (`[d]`).
pub fn pooled_on_tape(tape: &mut Tape, v: &SsmVars, x: Var) -> Result<Var, SsmError> {
    let y = ssm_forward_on_tape(tape, v, x)?;
    let yr = ssm_reverse_on_tape(tape, v, x)?;
    let mix = combine_on_tape(tape, v, y, yr)?;
    Ok(tape.mean_axis(mix, 0)?)
}

/// Node features `[N×d]` for a list of `T′×d` sequences.
pub fn encode_nodes_on_tape(tape: &mut Tape, v: &SsmVars, seqs: &[Tensor]) -> Result<Var, SsmError> {
    let pooled = seqs
        .iter()
        .map(|s| {
            let x = tape.constant(s.clone());
            pooled_on_tape(tape, v, x)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let p = tape.stack_rows(&pooled)?;
    let z = tape.matmul(p, v.w_out)?;
    let z = tape.add_bias(z, v.b_out)?;
    Ok(tape.silu(z)?)
}

/// Reads a `d×T′` representation as a `T′×d` sequence.
pub fn as_sequence(rep: &Representation) -> Tensor {
    rep.0.transposed()
}

fn eval<F>(p: &SsmParams, x: &Tensor, f: F) -> Result<Tensor, SsmError>
where
    F: FnOnce(&mut Tape, &SsmVars, Var) -> Result<Var, SsmError>,
{
    check_seq(x, p.d_model())?;
    let mut tape = Tape::new();
    let v = SsmVars::constants(&mut tape, p)?;
    let xv = tape.constant(x.clone());
    let out = f(&mut tape, &v, xv)?;
    Ok(tape.value(out).clone())
}

/// Forward output `T′×d`.
pub fn ssm_forward(p: &SsmParams, x: &Tensor) -> Result<Tensor, SsmError> {
    eval(p, x, |t, v, x| ssm_forward_on_tape(t, v, x))
}

/// Hidden states `T′×S` of the forward path.
pub fn ssm_states(p: &SsmParams, x: &Tensor) -> Result<Tensor, SsmError> {
    eval(p, x, |t, v, x| states_on_tape(t, &v.forward, x))
}

pub fn ssm_reverse(p: &SsmParams, x: &Tensor) -> Result<Tensor, SsmError> {
    eval(p, x, |t, v, x| ssm_reverse_on_tape(t, v, x))
}

pub fn combine(p: &SsmParams, y: &Tensor, yr: &Tensor) -> Result<Tensor, SsmError> {
    if y.shape() != yr.shape() {
        return Err(SsmError::InvalidArgument(format!(
            "path outputs differ in shape: {:?} vs {:?}",
            y.shape(),
            yr.shape()
        )));
    }
    let (a, b) = (p.alpha_mix.item(), p.beta_mix.item());
    let data = y.data().iter().zip(yr.data()).map(|(u, v)| a * u + b * v).collect();
    Ok(Tensor::new(data, y.shape().to_vec())?)
}

/// Mixed, time-pooled vector before the output projection.
pub fn dpmamba_pooled(p: &SsmParams, rep: &Representation) -> Result<Vec<f64>, SsmError> {
    Ok(eval(p, &as_sequence(rep), |t, v, x| pooled_on_tape(t, v, x))?.into_data())
}

/// One feature vector per series: `silu(pooled · w_out + b_out)`.
pub fn dpmamba_encode(p: &SsmParams, rep: &Representation) -> Result<Vec<f64>, SsmError> {
    let seq = as_sequence(rep);
    check_seq(&seq, p.d_model())?;
    let mut tape = Tape::new();
    let v = SsmVars::constants(&mut tape, p)?;
    let out = encode_nodes_on_tape(&mut tape, &v, &[seq])?;
    Ok(tape.value(out).data().to_vec())
}
