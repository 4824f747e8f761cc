//! Transductive training of the DPMamba → KAN-GIN classifier, evaluation,
//! and the ablation / label-fraction harnesses.

mod battery;
mod pipeline;

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, Split};
use crate::dpmamba::{encode_nodes_on_tape, SsmConfig, SsmError, SsmParams, SsmVars};
use crate::dtw::FastDtwVariant;
use crate::kangin::{argmax_rows, forward_on_tape, KanGin, KanGinError, KanGinVars};
use crate::numerics::{
    adam_step, bind_params, plateau_update, uniform_tensor, NumericsError, OptimState, ParamSet, SparseRows, Tape,
    Tensor, Var,
};
use crate::simgraph::{batch_subgraph, DistanceMatrix, GraphError, GraphOrder, SimilarityGraph};
use crate::temcl::{LossConvention, PretrainConfig, TemclError};

pub use battery::{
    check_contrastive, check_dpmamba, check_kan, check_kangin, check_scan, run_battery, GradReport, GRAD_TOLERANCE,
};
pub use pipeline::{
    ablate, features_for, label_fraction_sweep, prepare, raw_distance, raw_stat_features, run_mode, Prepared,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("no labeled nodes available for training")]
    NoLabeled,
    #[error("test split has no labels to evaluate against")]
    MissingTestLabels,
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Ssm(#[from] SsmError),
    #[error(transparent)]
    KanGin(#[from] KanGinError),
    #[error(transparent)]
    Temcl(#[from] TemclError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl TrainError {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        // Checkpoint and file problems surface as numerics errors but are input faults.
        let math = |e: &NumericsError| {
            !matches!(e, NumericsError::Checkpoint(_) | NumericsError::Io(_) | NumericsError::Json(_))
        };
        match self {
            TrainError::Diverged { .. } | TrainError::Temcl(TemclError::Diverged { .. }) => true,
            TrainError::Numerics(e)
            | TrainError::Temcl(TemclError::Numerics(e))
            | TrainError::Ssm(SsmError::Numerics(e))
            | TrainError::KanGin(KanGinError::Numerics(e)) => math(e),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Full,
    OnlyDpmamba,
    OnlyKangin,
    OnlyContrastfastdtw,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Full, Mode::OnlyDpmamba, Mode::OnlyKangin, Mode::OnlyContrastfastdtw];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::OnlyDpmamba => "only_dpmamba",
            Mode::OnlyKangin => "only_kangin",
            Mode::OnlyContrastfastdtw => "only_contrastfastdtw",
        }
    }

    /// Whether the mode reads the similarity graph.
    pub fn needs_graph(self) -> bool {
        matches!(self, Mode::Full | Mode::OnlyKangin | Mode::OnlyContrastfastdtw)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?} (expected full, only_dpmamba, only_kangin or only_contrastfastdtw)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// `None` means `min(train count, 64)`, rounded down to even for semi-supervised runs.
    pub batch_size: Option<usize>,
    pub lr: f64,
    pub pretrain_epochs: usize,
    pub margin: f64,
    pub sigma_scale: f64,
    pub alpha: f64,
    pub topk: usize,
    pub radius: usize,
    pub d_target: usize,
    pub ssm_state: usize,
    pub gin_layers: usize,
    pub seed: u64,
    pub label_fraction: f64,
    pub mode: Mode,
    pub zscore: bool,
    pub graph_order: GraphOrder,
    pub fastdtw_variant: FastDtwVariant,
    pub loss_convention: LossConvention,
    pub ssm_dense_a: bool,
    pub split_paths: bool,
    pub gin_unweighted: bool,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: None,
            lr: 1e-3,
            pretrain_epochs: 500,
            margin: 1.0,
            sigma_scale: 0.2,
            alpha: 1.0,
            topk: 5,
            radius: 1,
            d_target: 64,
            ssm_state: 16,
            gin_layers: 2,
            seed: 0,
            label_fraction: 1.0,
            mode: Mode::Full,
            zscore: true,
            graph_order: GraphOrder::Masked,
            fastdtw_variant: FastDtwVariant::Canonical,
            loss_convention: LossConvention::Standard,
            ssm_dense_a: false,
            split_paths: false,
            gin_unweighted: false,
            plateau_factor: 0.5,
            plateau_patience: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.margin > 0.0 && self.sigma_scale > 0.0 && self.alpha > 0.0) {
            return bad("margin, sigma_scale and alpha must be positive".into());
        }
        if self.topk == 0 || self.d_target == 0 || self.ssm_state == 0 {
            return bad("topk, d_target and ssm_state must be positive".into());
        }
        if !(1..=3).contains(&self.gin_layers) {
            return bad(format!("gin_layers must be 1, 2 or 3, got {}", self.gin_layers));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return bad(format!("label_fraction {} outside (0, 1]", self.label_fraction));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!("plateau_factor {} outside (0, 1)", self.plateau_factor));
        }
        match self.batch_size {
            Some(0) => return bad("batch_size must be positive".into()),
            Some(b) if self.semi_supervised() && b % 2 == 1 => {
                return bad(format!("batch_size {b} must be even when label_fraction < 1"))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn semi_supervised(&self) -> bool {
        self.label_fraction < 1.0
    }

    /// Effective batch size for `train_count` train nodes.
    pub fn batch_for(&self, train_count: usize) -> usize {
        match self.batch_size {
            Some(b) => b,
            None => {
                let b = train_count.clamp(1, 64);
                if self.semi_supervised() {
                    (b - b % 2).max(2)
                } else {
                    b
                }
            }
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain_epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            margin: self.margin,
            sigma_scale: self.sigma_scale,
            d_target: self.d_target,
            convention: self.loss_convention,
            checkpoint: None,
        }
    }

    pub fn ssm_config(&self) -> SsmConfig {
        SsmConfig {
            d_model: self.d_target,
            state: self.ssm_state,
            dense_a: self.ssm_dense_a,
            split_paths: self.split_paths,
        }
    }
}

/// Per-node inputs to the trainable model.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    /// `T′×d` sequence per node, read by the state-space encoder.
    Sequences(Vec<Tensor>),
    /// One row of static features per node, linearly embedded.
    Static(Tensor),
}

impl Features {
    pub fn len(&self) -> usize {
        match self {
            Features::Sequences(s) => s.len(),
            Features::Static(t) => t.shape()[0],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn width(&self) -> usize {
        match self {
            Features::Sequences(s) => s.first().map(|t| t.shape()[1]).unwrap_or(0),
            Features::Static(t) => t.shape()[1],
        }
    }

    pub fn permuted(&self, perm: &[usize]) -> Features {
        match self {
            Features::Sequences(s) => Features::Sequences(perm.iter().map(|&i| s[i].clone()).collect()),
            Features::Static(t) => {
                let rows: Vec<Vec<f64>> = perm.iter().map(|&i| t.row(i).to_vec()).collect();
                Features::Static(Tensor::from_rows(&rows).expect("rows of equal width"))
            }
        }
    }
}

/// Linear map from static node features to the model width.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEmbed {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub ssm: Option<SsmParams>,
    pub embed: Option<LinearEmbed>,
    pub gnn: KanGin,
}

impl ModelParams {
    /// Fresh parameters for `mode`; `static_width` is the static feature
    /// width for `only_kangin`.
    pub fn init(cfg: &TrainConfig, classes: usize, static_width: usize) -> Result<Self, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(3);
        let d = cfg.d_target;
        let (ssm, embed) = match cfg.mode {
            Mode::Full | Mode::OnlyDpmamba => (Some(SsmParams::init(&cfg.ssm_config(), &mut rng)?), None),
            Mode::OnlyKangin => {
                if static_width == 0 {
                    return Err(TrainError::InvalidConfig("static feature width must be positive".into()));
                }
                let embed = LinearEmbed {
                    weight: uniform_tensor(&mut rng, &[static_width, d], 1.0 / (static_width as f64).sqrt()),
                    bias: Tensor::zeros(&[d]),
                };
                (None, Some(embed))
            }
            Mode::OnlyContrastfastdtw => {
                return Err(TrainError::InvalidConfig(
                    "only_contrastfastdtw classifies by nearest neighbour and has no trainable model".into(),
                ))
            }
        };
        Ok(Self {
            ssm,
            embed,
            gnn: KanGin::init(d, classes, cfg.gin_layers, &mut rng)?,
        })
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<ModelVars, TrainError> {
        let all: Vec<Var> = if trainable {
            bind_params(tape, self)
        } else {
            self.named_params().into_iter().map(|(_, t)| tape.constant(t.clone())).collect()
        };
        let mut at = 0;
        let ssm = match &self.ssm {
            Some(p) => {
                let k = p.named_params().len();
                let v = SsmVars::from_vars(tape, p, all[..k].to_vec())?;
                at = k;
                Some(v)
            }
            None => None,
        };
        let embed = self.embed.as_ref().map(|_| {
            at += 2;
            (all[at - 2], all[at - 1])
        });
        let gnn = KanGinVars::from_vars(&self.gnn, all[at..].to_vec());
        Ok(ModelVars { all, ssm, embed, gnn })
    }
}

impl ParamSet for ModelParams {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v = self.ssm.as_ref().map(|s| s.named_params()).unwrap_or_default();
        if let Some(e) = &self.embed {
            v.push(("embed.weight".into(), &e.weight));
            v.push(("embed.bias".into(), &e.bias));
        }
        v.extend(self.gnn.named_params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.ssm.as_mut().map(|s| s.params_mut()).unwrap_or_default();
        if let Some(e) = &mut self.embed {
            v.push(&mut e.weight);
            v.push(&mut e.bias);
        }
        v.extend(self.gnn.params_mut());
        v
    }
}

struct ModelVars {
    all: Vec<Var>,
    ssm: Option<SsmVars>,
    embed: Option<(Var, Var)>,
    gnn: KanGinVars,
}

/// Log-probabilities `|nodes|×classes` for `nodes` over neighbour `rows`
/// indexed by position in `nodes`.
fn forward(tape: &mut Tape, vars: &ModelVars, feats: &Features, nodes: &[usize], rows: &SparseRows) -> Result<Var, TrainError> {
    let h = match (feats, &vars.ssm, vars.embed) {
        (Features::Sequences(seqs), Some(sv), _) => {
            let picked: Vec<Tensor> = nodes.iter().map(|&i| seqs[i].clone()).collect();
            encode_nodes_on_tape(tape, sv, &picked)?
        }
        (Features::Static(t), _, Some((w, b))) => {
            let rows: Vec<Vec<f64>> = nodes.iter().map(|&i| t.row(i).to_vec()).collect();
            let x = tape.constant(Tensor::from_rows(&rows)?);
            let z = tape.matmul(x, w)?;
            tape.add_bias(z, b)?
        }
        _ => {
            return Err(TrainError::DimMismatch(
                "node features do not match the model (sequences need the SSM, static rows need the embedding)".into(),
            ))
        }
    };
    Ok(forward_on_tape(tape, &vars.gnn, h, rows)?)
}

fn graph_rows(g: &SimilarityGraph, unweighted: bool) -> SparseRows {
    if unweighted {
        g.unweighted_rows()
    } else {
        g.normalized.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mode: Mode,
    pub seed: u64,
    pub label_fraction: f64,
    pub epochs: Vec<EpochRecord>,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    /// Test accuracy per class; `None` for classes absent from the test split.
    pub per_class_accuracy: Vec<Option<f64>>,
}

impl Metrics {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// One JSON object per epoch.
    pub fn write_epochs_jsonl(&self, path: &Path) -> Result<(), TrainError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for e in &self.epochs {
            writeln!(f, "{}", serde_json::to_string(e)?)?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Predictions of a full-graph pass plus the accuracies they imply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Predicted class per node, in dataset order.
    pub predictions: Vec<usize>,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub per_class_accuracy: Vec<Option<f64>>,
}

fn accuracy(d: &Dataset, pred: &[usize], split: Split) -> Option<f64> {
    let scored: Vec<bool> = (0..d.len())
        .filter(|&i| d.split[i] == split)
        .filter_map(|i| d.labels[i].map(|l| pred[i] == l))
        .collect();
    (!scored.is_empty()).then(|| scored.iter().filter(|&&h| h).count() as f64 / scored.len() as f64)
}

fn per_class(d: &Dataset, pred: &[usize]) -> Vec<Option<f64>> {
    let mut hits = vec![0usize; d.classes];
    let mut total = vec![0usize; d.classes];
    for i in d.test_indices() {
        if let Some(l) = d.labels[i] {
            total[l] += 1;
            hits[l] += usize::from(pred[i] == l);
        }
    }
    hits.iter()
        .zip(&total)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect()
}

fn assess(d: &Dataset, predictions: Vec<usize>) -> Evaluation {
    Evaluation {
        train_accuracy: accuracy(d, &predictions, Split::Train),
        test_accuracy: accuracy(d, &predictions, Split::Test),
        per_class_accuracy: per_class(d, &predictions),
        predictions,
    }
}

/// Node order sorted by series id, or `None` when already canonical.
fn canonical_order(d: &Dataset) -> Option<Vec<usize>> {
    let mut perm: Vec<usize> = (0..d.len()).collect();
    perm.sort_by_key(|&i| d.series[i].series_id);
    perm.iter().enumerate().any(|(k, &i)| k != i).then_some(perm)
}

fn check_inputs(d: &Dataset, g: &SimilarityGraph, feats: &Features) -> Result<(), TrainError> {
    if g.n() != d.len() || feats.len() != d.len() {
        return Err(TrainError::DimMismatch(format!(
            "{} series, graph of {} nodes, {} feature rows",
            d.len(),
            g.n(),
            feats.len()
        )));
    }
    Ok(())
}

fn predict_all(m: &ModelParams, g: &SimilarityGraph, feats: &Features, unweighted: bool) -> Result<Vec<usize>, TrainError> {
    let mut tape = Tape::new();
    let vars = m.bind(&mut tape, false)?;
    let nodes: Vec<usize> = (0..feats.len()).collect();
    let logp = forward(&mut tape, &vars, feats, &nodes, &graph_rows(g, unweighted))?;
    Ok(argmax_rows(tape.value(logp)))
}

/// Trains a fresh model on the visible train labels and scores it with one
/// full-graph pass. Node order is canonicalized by series id first, so the
/// result does not depend on how the dataset was ordered.
pub fn train(d: &Dataset, g: &SimilarityGraph, feats: &Features, cfg: &TrainConfig) -> Result<(ModelParams, Metrics), TrainError> {
    cfg.validate()?;
    check_inputs(d, g, feats)?;
    if let Some(perm) = canonical_order(d) {
        return train(&d.permuted(&perm), &g.permuted(&perm)?, &feats.permuted(&perm), cfg);
    }
    let static_width = match feats {
        Features::Static(_) => feats.width(),
        Features::Sequences(_) => 0,
    };
    let mut model = ModelParams::init(cfg, d.classes, static_width)?;
    if let (Features::Sequences(_), Some(ssm)) = (feats, &model.ssm) {
        if feats.width() != ssm.d_model() {
            return Err(TrainError::DimMismatch(format!(
                "sequence width {} differs from d_target {}",
                feats.width(),
                ssm.d_model()
            )));
        }
    }

    let labeled = d.visible_label_indices();
    if labeled.is_empty() {
        return Err(TrainError::NoLabeled);
    }
    let unlabeled: Vec<usize> = d
        .train_indices()
        .into_iter()
        .filter(|i| labeled.binary_search(i).is_err())
        .collect();
    let train_count = labeled.len() + unlabeled.len();
    let batch = cfg.batch_for(train_count);
    let semi = cfg.semi_supervised();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut state = OptimState::new(&model.named_params().into_iter().map(|(_, t)| t).collect::<Vec<_>>(), cfg.lr);
    let mut lr = cfg.lr;
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let batches: Vec<Vec<usize>> = if semi {
            let half = batch / 2;
            (0..train_count.div_ceil(batch))
                .map(|_| {
                    let mut b = pick(&labeled, half, &mut rng);
                    b.extend(pick(&unlabeled, half, &mut rng));
                    b.sort_unstable();
                    b
                })
                .collect()
        } else {
            let mut order = labeled.clone();
            order.shuffle(&mut rng);
            order
                .chunks(batch)
                .map(|c| {
                    let mut b = c.to_vec();
                    b.sort_unstable();
                    b
                })
                .collect()
        };

        let mut total = 0.0;
        let mut count = 0usize;
        for nodes in &batches {
            let targets: Vec<(usize, usize)> = nodes
                .iter()
                .enumerate()
                .filter(|&(_, &i)| d.label_mask[i])
                .map(|(k, &i)| (k, d.labels[i].expect("visible labels exist")))
                .collect();
            if targets.is_empty() {
                continue;
            }
            let sub = batch_subgraph(g, nodes)?;
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, true)?;
            let step = forward(&mut tape, &vars, feats, nodes, &graph_rows(&sub, cfg.gin_unweighted))
                .and_then(|logp| Ok(tape.nll(logp, &targets)?));
            let loss = match step {
                Ok(l) => l,
                Err(TrainError::Numerics(NumericsError::NonFinite { .. }))
                | Err(TrainError::Ssm(SsmError::Numerics(NumericsError::NonFinite { .. })))
                | Err(TrainError::KanGin(KanGinError::Numerics(NumericsError::NonFinite { .. }))) => {
                    return Err(TrainError::Diverged { epoch })
                }
                Err(e) => return Err(e),
            };
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            total += value * targets.len() as f64;
            count += targets.len();
            let grads = tape.backward(loss)?;
            let g: Vec<Tensor> = vars.all.iter().map(|&v| grads.get_or_zeros(v)).collect();
            adam_step(&mut model.params_mut(), &g, &mut state, lr);
        }
        let mean = total / count as f64;
        epochs.push(EpochRecord { epoch, loss: mean, lr });
        log::debug!("epoch {epoch}: loss {mean:.6} lr {lr:.2e}");
        lr = plateau_update(&mut state, mean, cfg.plateau_factor, cfg.plateau_patience);
    }

    let eval = assess(d, predict_all(&model, g, feats, cfg.gin_unweighted)?);
    let metrics = Metrics {
        mode: cfg.mode,
        seed: cfg.seed,
        label_fraction: cfg.label_fraction,
        epochs,
        train_accuracy: eval.train_accuracy,
        test_accuracy: eval.test_accuracy,
        per_class_accuracy: eval.per_class_accuracy,
    };
    Ok((model, metrics))
}

/// Up to `k` distinct entries of `pool`; the whole pool when it is smaller.
fn pick(pool: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if pool.len() <= k {
        return pool.to_vec();
    }
    sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
}

/// One full-graph pass; accuracy over the labeled test nodes.
pub fn evaluate(m: &ModelParams, d: &Dataset, g: &SimilarityGraph, feats: &Features, unweighted: bool) -> Result<Evaluation, TrainError> {
    check_inputs(d, g, feats)?;
    let test = d.test_indices();
    if test.is_empty() || test.iter().any(|&i| d.labels[i].is_none()) {
        return Err(TrainError::MissingTestLabels);
    }
    match canonical_order(d) {
        Some(perm) => {
            let inner = assess(
                &d.permuted(&perm),
                predict_all(m, &g.permuted(&perm)?, &feats.permuted(&perm), unweighted)?,
            );
            let mut predictions = vec![0; d.len()];
            for (k, &i) in perm.iter().enumerate() {
                predictions[i] = inner.predictions[k];
            }
            Ok(Evaluation { predictions, ..inner })
        }
        None => Ok(assess(d, predict_all(m, g, feats, unweighted)?)),
    }
}

/// Nearest visible-labeled train node under `dist`, skipping sentinel
/// entries; nodes with no such neighbour get the majority visible class.
pub fn knn_predict(d: &Dataset, dist: &DistanceMatrix) -> Result<Vec<usize>, TrainError> {
    if dist.n() != d.len() {
        return Err(TrainError::DimMismatch(format!("{} series, matrix of {}", d.len(), dist.n())));
    }
    let labeled = d.visible_label_indices();
    if labeled.is_empty() {
        return Err(TrainError::NoLabeled);
    }
    let mut counts = vec![0usize; d.classes];
    for &i in &labeled {
        counts[d.labels[i].expect("visible labels exist")] += 1;
    }
    let majority = (0..d.classes).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap_or(0);
    Ok((0..d.len())
        .map(|i| {
            labeled
                .iter()
                .filter(|&&j| j != i && !dist.is_sentinel(i, j))
                .min_by(|&&a, &&b| dist.get(i, a).total_cmp(&dist.get(i, b)).then(a.cmp(&b)))
                .map(|&j| d.labels[j].expect("visible labels exist"))
                .unwrap_or(majority)
        })
        .collect())
}

/// Nearest-neighbour metrics on a distance matrix.
pub fn knn_metrics(d: &Dataset, dist: &DistanceMatrix, cfg: &TrainConfig) -> Result<Metrics, TrainError> {
    let eval = assess(d, knn_predict(d, dist)?);
    Ok(Metrics {
        mode: Mode::OnlyContrastfastdtw,
        seed: cfg.seed,
        label_fraction: cfg.label_fraction,
        epochs: Vec::new(),
        train_accuracy: eval.train_accuracy,
        test_accuracy: eval.test_accuracy,
        per_class_accuracy: eval.per_class_accuracy,
    })
}

#[derive(Debug, Serialize)]
struct TableRow<'a> {
    mode: &'a str,
    seed: u64,
    label_fraction: f64,
    train_accuracy: Option<f64>,
    test_accuracy: Option<f64>,
    final_loss: Option<f64>,
}

/// Comparison table, one row per run.
pub fn write_table(path: &Path, rows: &[Metrics]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path)?;
    for m in rows {
        w.serialize(TableRow {
            mode: m.mode.as_str(),
            seed: m.seed,
            label_fraction: m.label_fraction,
            train_accuracy: m.train_accuracy,
            test_accuracy: m.test_accuracy,
            final_loss: m.final_loss(),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
