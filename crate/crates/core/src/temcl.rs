//! Contrastive pretraining of a small convolutional encoder.
//!
//! Three blocks of valid conv → relu → maxpool(2, 2) map a `C×T` series to a
//! `d_target×T′` representation. Training pulls overlapping crops of one
//! series together and pushes away a noise-perturbed copy and a pair of
//! non-overlapping crops.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, TimeSeries};
use crate::numerics::{
    adam_step, uniform_tensor, Checkpoint, NumericsError, OptimState, ParamSet, Tape, Tensor, Var,
};

pub const KERNELS: [usize; 3] = [8, 5, 3];
pub const HIDDEN_WIDTHS: [usize; 2] = [32, 64];
const POOL: usize = 2;

#[derive(Debug, Error)]
pub enum TemclError {
    #[error("series of length {len} is shorter than the encoder minimum {min}")]
    TooShort { len: usize, min: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("pretraining diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Output length for an input of length `t`, or `None` if some stage would be empty.
pub fn output_len(t: usize) -> Option<usize> {
    KERNELS.iter().try_fold(t, |len, &k| {
        let conv = len.checked_sub(k - 1).filter(|&l| l >= 1)?;
        Some(conv / POOL).filter(|&l| l >= 1)
    })
}

/// Shortest input for which every stage is non-empty.
pub fn min_input_len() -> usize {
    (1..).find(|&t| output_len(t).is_some()).expect("some length works")
}

/// Right-pads every channel with zeros up to `len`.
pub fn pad_to(x: &TimeSeries, len: usize) -> TimeSeries {
    if x.len() >= len {
        return x.clone();
    }
    let chans = (0..x.channels())
        .map(|c| {
            let mut v = x.channel(c).to_vec();
            v.resize(len, 0.0);
            v
        })
        .collect();
    TimeSeries::from_channels(chans, x.series_id).expect("padding keeps values finite")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub weights: [Tensor; 3],
    pub biases: [Tensor; 3],
}

impl EncoderParams {
    pub fn init(in_channels: usize, d_target: usize, rng: &mut impl Rng) -> Result<Self, TemclError> {
        if d_target < 2 || in_channels == 0 {
            return Err(TemclError::InvalidArgument(format!(
                "need d_target >= 2 and at least one channel (got {d_target}, {in_channels})"
            )));
        }
        let widths = [HIDDEN_WIDTHS[0], HIDDEN_WIDTHS[1], d_target];
        let mut inputs = in_channels;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (&out, &k) in widths.iter().zip(&KERNELS) {
            let bound = 1.0 / ((inputs * k) as f64).sqrt();
            weights.push(uniform_tensor(rng, &[out, inputs, k], bound));
            biases.push(uniform_tensor(rng, &[out], bound));
            inputs = out;
        }
        Ok(Self {
            weights: weights.try_into().expect("three blocks"),
            biases: biases.try_into().expect("three blocks"),
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weights[0].shape()[1]
    }

    pub fn d_target(&self) -> usize {
        self.weights[2].shape()[0]
    }
}

impl ParamSet for EncoderParams {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v = Vec::with_capacity(6);
        for i in 0..3 {
            v.push((format!("temcl.conv{i}.weight"), &self.weights[i]));
            v.push((format!("temcl.conv{i}.bias"), &self.biases[i]));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let (w, b) = (&mut self.weights, &mut self.biases);
        let [w0, w1, w2] = w;
        let [b0, b1, b2] = b;
        vec![w0, b0, w1, b1, w2, b2]
    }
}

/// Encoder parameters bound on a tape, in `named_params` order.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars([Var; 6]);

impl EncoderVars {
    pub fn bind(tape: &mut Tape, p: &EncoderParams) -> Self {
        Self::from_slice(&crate::numerics::bind_params(tape, p))
    }

    pub fn constants(tape: &mut Tape, p: &EncoderParams) -> Self {
        let v: Vec<Var> = p.named_params().into_iter().map(|(_, t)| tape.constant(t.clone())).collect();
        Self::from_slice(&v)
    }

    pub fn from_slice(v: &[Var]) -> Self {
        Self(v.try_into().expect("six encoder parameters"))
    }

    pub fn vars(&self) -> &[Var; 6] {
        &self.0
    }
}

/// `d_target × T′` output of the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representation(pub Tensor);

impl Representation {
    pub fn dims(&self) -> (usize, usize) {
        self.0.dims2().expect("2-D representation")
    }

    /// Temporal mean, one value per feature.
    pub fn mean_pooled(&self) -> Vec<f64> {
        let (d, t) = self.dims();
        (0..d).map(|i| self.0.row(i).iter().sum::<f64>() / t as f64).collect()
    }
}

pub fn encode_on_tape(tape: &mut Tape, vars: &EncoderVars, x: Var) -> Result<Var, TemclError> {
    let len = tape.value(x).shape().get(1).copied().unwrap_or(0);
    if output_len(len).is_none() {
        return Err(TemclError::TooShort {
            len,
            min: min_input_len(),
        });
    }
    let v = vars.vars();
    let mut h = x;
    for b in 0..3 {
        h = tape.conv1d(h, v[2 * b], v[2 * b + 1])?;
        h = tape.relu(h)?;
        h = tape.maxpool1d(h, POOL, POOL)?;
    }
    Ok(h)
}

pub fn encode(p: &EncoderParams, x: &TimeSeries) -> Result<Representation, TemclError> {
    if x.channels() != p.in_channels() {
        return Err(TemclError::InvalidArgument(format!(
            "series has {} channels, encoder expects {}",
            x.channels(),
            p.in_channels()
        )));
    }
    let mut tape = Tape::new();
    let vars = EncoderVars::constants(&mut tape, p);
    let xv = tape.constant(x.values.clone());
    let out = encode_on_tape(&mut tape, &vars, xv)?;
    Ok(Representation(tape.value(out).clone()))
}

/// Encodes every series, right-padding those shorter than the encoder minimum.
pub fn encode_dataset(p: &EncoderParams, d: &Dataset) -> Result<Vec<Representation>, TemclError> {
    let min = min_input_len();
    d.series.par_iter().map(|s| encode(p, &pad_to(s, min))).collect()
}

/// `x + n` with `n ~ Normal(0, sigma²)` per entry.
pub fn gen_negative_noise(x: &TimeSeries, sigma: f64, seed: u64) -> Result<TimeSeries, TemclError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(TemclError::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let sigmas = vec![sigma; x.channels()];
    Ok(noise_view(x, &sigmas, &mut ChaCha8Rng::seed_from_u64(seed)))
}

fn noise_view(x: &TimeSeries, sigmas: &[f64], rng: &mut impl Rng) -> TimeSeries {
    let mut values = x.values.clone();
    let t = x.len();
    for (c, row) in values.data_mut().chunks_mut(t).enumerate() {
        let dist = Normal::new(0.0, sigmas[c]).expect("finite sigma");
        for v in row {
            *v += dist.sample(rng);
        }
    }
    TimeSeries::new(values, x.series_id).expect("noise keeps values finite")
}

/// Per-channel noise scale `sigma_scale × std`, falling back to `sigma_scale`
/// for a flat channel.
fn channel_sigmas(x: &TimeSeries, sigma_scale: f64) -> Vec<f64> {
    (0..x.channels())
        .map(|c| {
            let ch = x.channel(c);
            let mean = ch.iter().sum::<f64>() / ch.len() as f64;
            let std = (ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / ch.len() as f64).sqrt();
            if std > 1e-8 {
                sigma_scale * std
            } else {
                sigma_scale
            }
        })
        .collect()
}

fn window(x: &TimeSeries, start: usize, len: usize) -> TimeSeries {
    let chans = (0..x.channels())
        .map(|c| x.channel(c)[start..start + len].to_vec())
        .collect();
    TimeSeries::from_channels(chans, x.series_id).expect("window of a valid series")
}

/// Start offsets of two disjoint windows of length `len`.
fn crop_starts_disjoint(t: usize, len: usize, rng: &mut impl Rng) -> Result<(usize, usize), TemclError> {
    if len == 0 || t < 2 * len {
        return Err(TemclError::InvalidArgument(format!(
            "two disjoint crops of length {len} need length >= {}, got {t}",
            2 * len.max(1)
        )));
    }
    let a = rng.random_range(0..=t - 2 * len);
    let b = rng.random_range(a + len..=t - len);
    Ok(if rng.random_bool(0.5) { (a, b) } else { (b, a) })
}

/// Start offsets of two windows of length `len` overlapping by at least half.
fn crop_starts_overlapping(t: usize, len: usize, rng: &mut impl Rng) -> Result<(usize, usize), TemclError> {
    if len == 0 || t < len {
        return Err(TemclError::InvalidArgument(format!("crop length {len} exceeds series length {t}")));
    }
    let a = rng.random_range(0..=t - len);
    let shift = len / 2;
    let lo = a.saturating_sub(shift);
    let hi = (a + shift).min(t - len);
    Ok((a, rng.random_range(lo..=hi)))
}

pub fn default_crop_len(t: usize) -> usize {
    t / 2
}

/// Two non-overlapping crops of length `⌊T/2⌋`.
pub fn gen_negative_crop(x: &TimeSeries, seed: u64) -> Result<(TimeSeries, TimeSeries), TemclError> {
    gen_negative_crop_len(x, default_crop_len(x.len()), seed)
}

pub fn gen_negative_crop_len(x: &TimeSeries, len: usize, seed: u64) -> Result<(TimeSeries, TimeSeries), TemclError> {
    let (a, b) = crop_starts_disjoint(x.len(), len, &mut ChaCha8Rng::seed_from_u64(seed))?;
    Ok((window(x, a, len), window(x, b, len)))
}

/// Two views plus a similarity label (`1` similar, `0` dissimilar).
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastPair {
    pub left: TimeSeries,
    pub right: TimeSeries,
    pub y: u8,
}

pub fn gen_positive_pair(x: &TimeSeries, seed: u64) -> Result<ContrastPair, TemclError> {
    gen_positive_pair_len(x, default_crop_len(x.len()).max(1), seed)
}

pub fn gen_positive_pair_len(x: &TimeSeries, len: usize, seed: u64) -> Result<ContrastPair, TemclError> {
    let (a, b) = crop_starts_overlapping(x.len(), len, &mut ChaCha8Rng::seed_from_u64(seed))?;
    Ok(ContrastPair {
        left: window(x, a, len),
        right: window(x, b, len),
        y: 1,
    })
}

/// Which label value marks a similar pair in the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossConvention {
    /// `y·d² + (1−y)·max(0, m−d)²`.
    #[default]
    Standard,
    /// `(1−y)·d² + y·max(0, m−d)²`.
    Swapped,
}

impl std::str::FromStr for LossConvention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(Self::Standard),
            "swapped" | "alg2" => Ok(Self::Swapped),
            other => Err(format!("unknown loss convention {other:?}")),
        }
    }
}

impl LossConvention {
    fn pulls(self, y: u8) -> bool {
        match self {
            Self::Standard => y == 1,
            Self::Swapped => y == 0,
        }
    }
}

pub fn contrastive_loss(zi: &Representation, zj: &Representation, y: u8, margin: f64) -> Result<f64, TemclError> {
    if zi.0.shape() != zj.0.shape() {
        return Err(TemclError::InvalidArgument(format!(
            "representation shapes differ: {:?} vs {:?}",
            zi.0.shape(),
            zj.0.shape()
        )));
    }
    check_loss_args(y, margin)?;
    let d2: f64 = zi.0.data().iter().zip(zj.0.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(if y == 1 {
        d2
    } else {
        (margin - d2.sqrt()).max(0.0).powi(2)
    })
}

fn check_loss_args(y: u8, margin: f64) -> Result<(), TemclError> {
    if y > 1 {
        return Err(TemclError::InvalidArgument(format!("label must be 0 or 1, got {y}")));
    }
    if !(margin > 0.0) {
        return Err(TemclError::InvalidArgument(format!("margin must be positive, got {margin}")));
    }
    Ok(())
}

/// Pairwise loss on tape values of equal shape.
pub fn contrastive_loss_on_tape(
    tape: &mut Tape,
    zi: Var,
    zj: Var,
    y: u8,
    margin: f64,
    convention: LossConvention,
) -> Result<Var, TemclError> {
    check_loss_args(y, margin)?;
    let diff = tape.sub(zi, zj)?;
    let sq = tape.square(diff)?;
    let d2 = tape.sum(sq)?;
    if convention.pulls(y) {
        return Ok(d2);
    }
    let d = tape.sqrt(d2)?;
    let neg = tape.scale(d, -1.0)?;
    let gap = tape.add_scalar(neg, margin)?;
    let hinge = tape.relu(gap)?;
    Ok(tape.square(hinge)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    /// `None` means `min(train count, 64)`.
    pub batch_size: Option<usize>,
    pub lr: f64,
    pub margin: f64,
    pub sigma_scale: f64,
    pub d_target: usize,
    pub convention: LossConvention,
    /// Loaded instead of training when it exists; written after training.
    pub checkpoint: Option<PathBuf>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: None,
            lr: 1e-3,
            margin: 1.0,
            sigma_scale: 0.2,
            d_target: 64,
            convention: LossConvention::Standard,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub params: EncoderParams,
    /// Mean pair loss per epoch.
    pub loss_trace: Vec<f64>,
    pub loaded_from_checkpoint: bool,
}

struct AnchorViews {
    pairs: Vec<(TimeSeries, TimeSeries, u8)>,
}

fn anchor_views(x: &TimeSeries, sigma_scale: f64, rng: &mut impl Rng) -> Result<AnchorViews, TemclError> {
    let min = min_input_len();
    let t = x.len();
    let len = default_crop_len(t).max(1);
    let mut pairs = Vec::with_capacity(3);

    let (a, b) = crop_starts_overlapping(t, len, rng)?;
    pairs.push((window(x, a, len), window(x, b, len), 1));

    let noisy = noise_view(x, &channel_sigmas(x, sigma_scale), rng);
    pairs.push((x.clone(), noisy, 0));

    if t >= 2 {
        let (a, b) = crop_starts_disjoint(t, len, rng)?;
        pairs.push((window(x, a, len), window(x, b, len), 0));
    }
    for (l, r, _) in &mut pairs {
        *l = pad_to(l, min);
        *r = pad_to(r, min);
    }
    Ok(AnchorViews { pairs })
}

fn batch_loss(
    tape: &mut Tape,
    vars: &EncoderVars,
    views: &[AnchorViews],
    margin: f64,
    convention: LossConvention,
) -> Result<Var, TemclError> {
    let mut losses = Vec::new();
    for v in views {
        for (l, r, y) in &v.pairs {
            let lv = tape.constant(l.values.clone());
            let rv = tape.constant(r.values.clone());
            let zl = encode_on_tape(tape, vars, lv)?;
            let zr = encode_on_tape(tape, vars, rv)?;
            let loss = contrastive_loss_on_tape(tape, zl, zr, *y, margin, convention)?;
            losses.push(tape.reshape(loss, &[1])?);
        }
    }
    let all = tape.stack_rows(&losses)?;
    Ok(tape.mean(all)?)
}

/// Mean contrastive loss of `anchors`' views under fixed parameters; used by
/// tests and by the gradient battery.
pub fn pretrain_loss_on_tape(
    tape: &mut Tape,
    vars: &EncoderVars,
    anchors: &[TimeSeries],
    sigma_scale: f64,
    margin: f64,
    seed: u64,
) -> Result<Var, TemclError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let views = anchors
        .iter()
        .map(|x| anchor_views(x, sigma_scale, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    batch_loss(tape, vars, &views, margin, LossConvention::Standard)
}

pub fn pretrain(d: &Dataset, cfg: &PretrainConfig, seed: u64) -> Result<PretrainOutput, TemclError> {
    let train = d.train_indices();
    if train.is_empty() {
        return Err(TemclError::InvalidArgument("train split is empty".into()));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = EncoderParams::init(d.channels(), cfg.d_target, &mut init_rng)?;

    if let Some(path) = cfg.checkpoint.as_ref().filter(|p| p.exists()) {
        Checkpoint::load(path)?.restore_into(&mut params)?;
        log::info!("loaded encoder from {}", path.display());
        return Ok(PretrainOutput {
            params,
            loss_trace: Vec::new(),
            loaded_from_checkpoint: true,
        });
    }

    let batch = cfg.batch_size.unwrap_or(64).min(train.len()).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut state = OptimState::new(&params.named_params().into_iter().map(|(_, t)| t).collect::<Vec<_>>(), cfg.lr);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut order = train.clone();

    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(batch) {
            let views = chunk
                .iter()
                .map(|&i| anchor_views(&d.series[i], cfg.sigma_scale, &mut rng))
                .collect::<Result<Vec<_>, _>>()?;
            let pairs: usize = views.iter().map(|v| v.pairs.len()).sum();
            let mut tape = Tape::new();
            let vars = EncoderVars::bind(&mut tape, &params);
            let loss = match batch_loss(&mut tape, &vars, &views, cfg.margin, cfg.convention) {
                Ok(l) => l,
                Err(TemclError::Numerics(NumericsError::NonFinite { .. })) => {
                    return Err(TemclError::Diverged { epoch })
                }
                Err(e) => return Err(e),
            };
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(TemclError::Diverged { epoch });
            }
            total += value * pairs as f64;
            count += pairs;
            let grads = tape.backward(loss)?;
            let g: Vec<Tensor> = vars.vars().iter().map(|&v| grads.get_or_zeros(v)).collect();
            adam_step(&mut params.params_mut(), &g, &mut state, cfg.lr);
        }
        let mean = total / count as f64;
        log::debug!("pretrain epoch {epoch}: loss {mean:.6}");
        trace.push(mean);
    }

    if let Some(path) = &cfg.checkpoint {
        Checkpoint::from_params(&params, seed).save(path)?;
    }
    Ok(PretrainOutput {
        params,
        loss_trace: trace,
        loaded_from_checkpoint: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic, Split};

    fn ramp(c: usize, t: usize) -> TimeSeries {
        let chans = (0..c).map(|k| (0..t).map(|i| (i + k) as f64).collect()).collect();
        TimeSeries::from_channels(chans, 0).unwrap()
    }

    #[test]
    fn length_arithmetic() {
        // 64 -> conv 57 -> pool 28 -> conv 24 -> pool 12 -> conv 10 -> pool 5
        assert_eq!(output_len(64), Some(5));
        assert_eq!(output_len(128), Some(13));
        assert_eq!(min_input_len(), 31);
        assert_eq!(output_len(30), None);
    }

    #[test]
    fn encode_shapes_and_zero_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = EncoderParams::init(2, 8, &mut rng).unwrap();
        let z = encode(&p, &ramp(2, 64)).unwrap();
        assert_eq!(z.dims(), (8, 5));
        for b in &mut p.biases {
            *b = Tensor::zeros(b.shape());
        }
        let zero = TimeSeries::from_channels(vec![vec![0.0; 40]; 2], 0).unwrap();
        assert!(encode(&p, &zero).unwrap().0.data().iter().all(|&v| v == 0.0));
        assert_eq!(encode(&p, &ramp(2, 64)).unwrap(), encode(&p, &ramp(2, 64)).unwrap());
    }

    #[test]
    fn short_series_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = EncoderParams::init(1, 4, &mut rng).unwrap();
        assert!(matches!(encode(&p, &ramp(1, 20)), Err(TemclError::TooShort { len: 20, min: 31 })));
        assert_eq!(encode(&p, &pad_to(&ramp(1, 20), 31)).unwrap().dims(), (4, 1));
    }

    #[test]
    fn noise_is_seeded_and_scaled() {
        let x = TimeSeries::from_channels(vec![vec![0.0; 50_000], vec![1.0; 50_000]], 0).unwrap();
        let a = gen_negative_noise(&x, 0.3, 9).unwrap();
        assert_eq!(a, gen_negative_noise(&x, 0.3, 9).unwrap());
        let diffs: Vec<f64> = a.values.data().iter().zip(x.values.data()).map(|(p, q)| p - q).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let std = (diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / diffs.len() as f64).sqrt();
        assert!((std / 0.3 - 1.0).abs() < 0.02, "std {std}");
        let ones = TimeSeries::from_channels(vec![vec![1.0; 100]], 0).unwrap();
        assert_eq!(gen_negative_noise(&ones, 1e-300, 1).unwrap(), ones);
        assert!(gen_negative_noise(&x, 0.0, 1).is_err());
    }

    #[test]
    fn crops() {
        let x = ramp(1, 10);
        let (a, b) = gen_negative_crop(&x, 3).unwrap();
        let mut starts = [a.channel(0)[0] as usize, b.channel(0)[0] as usize];
        starts.sort();
        assert_eq!(starts, [0, 5]);
        let x = ramp(1, 20);
        for seed in 0..200 {
            let (a, b) = gen_negative_crop_len(&x, 5, seed).unwrap();
            let (sa, sb) = (a.channel(0)[0] as usize, b.channel(0)[0] as usize);
            assert!(sa + 5 <= sb || sb + 5 <= sa);
        }
        assert!(gen_negative_crop_len(&ramp(1, 9), 5, 0).is_err());
    }

    #[test]
    fn positive_pairs_overlap() {
        let x = ramp(1, 37);
        for seed in 0..1000 {
            let p = gen_positive_pair(&x, seed).unwrap();
            let (sa, sb) = (p.left.channel(0)[0] as usize, p.right.channel(0)[0] as usize);
            let len = p.left.len();
            assert_eq!(len, 18);
            let overlap = len - sa.abs_diff(sb);
            assert!(overlap * 2 >= len);
            assert_eq!(p.y, 1);
        }
        assert_eq!(gen_positive_pair(&x, 5).unwrap(), gen_positive_pair(&x, 5).unwrap());
        let whole = gen_positive_pair_len(&x, 37, 0).unwrap();
        assert_eq!(whole.left, whole.right);
    }

    #[test]
    fn loss_cases() {
        let z = Representation(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let far = Representation(Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap());
        assert_eq!(contrastive_loss(&z, &z, 1, 1.0).unwrap(), 0.0);
        assert_eq!(contrastive_loss(&z, &far, 0, 1.0).unwrap(), 0.0);
        assert_eq!(contrastive_loss(&z, &z, 0, 1.0).unwrap(), 1.0);
        assert_eq!(contrastive_loss(&z, &far, 1, 1.0).unwrap(), 25.0);
        let other = Representation(Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap());
        assert!(contrastive_loss(&z, &other, 1, 1.0).is_err());
    }

    #[test]
    fn tape_loss_matches_plain_loss() {
        let a = Tensor::matrix(1, 3, vec![0.1, -0.2, 0.3]).unwrap();
        let b = Tensor::matrix(1, 3, vec![0.0, 0.1, 0.2]).unwrap();
        for y in [0, 1] {
            let mut tape = Tape::new();
            let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
            let l = contrastive_loss_on_tape(&mut tape, va, vb, y, 1.0, LossConvention::Standard).unwrap();
            let expect = contrastive_loss(&Representation(a.clone()), &Representation(b.clone()), y, 1.0).unwrap();
            assert!((tape.value(l).item() - expect).abs() < 1e-15);
        }
    }

    fn two_series() -> Dataset {
        let d = synthetic::sinusoids(
            &synthetic::SinusoidSpec {
                frequencies: vec![1.0, 4.0],
                channels: 1,
                length: 64,
                train_per_class: 1,
                test_per_class: 0,
                noise_std: 0.05,
            },
            3,
        );
        assert_eq!(d.split, vec![Split::Train; 2]);
        d
    }

    #[test]
    fn zero_epochs_returns_init() {
        let d = two_series();
        let cfg = PretrainConfig {
            epochs: 0,
            d_target: 4,
            ..Default::default()
        };
        let out = pretrain(&d, &cfg, 11).unwrap();
        let init = EncoderParams::init(1, 4, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(out.params, init);
        assert!(out.loss_trace.is_empty());
    }

    #[test]
    fn loss_decreases_and_checkpoint_short_circuits() {
        let d = two_series();
        let dir = tempfile::tempdir().unwrap();
        let cfg = PretrainConfig {
            epochs: 50,
            d_target: 8,
            checkpoint: Some(dir.path().join("temcl.ckpt")),
            ..Default::default()
        };
        let out = pretrain(&d, &cfg, 1).unwrap();
        let first = out.loss_trace[..5].iter().sum::<f64>();
        let last = out.loss_trace[45..].iter().sum::<f64>();
        assert!(last < first, "{first} -> {last}");
        let again = pretrain(&d, &cfg, 1).unwrap();
        assert!(again.loaded_from_checkpoint);
        assert_eq!(again.params, out.params);
    }
}
