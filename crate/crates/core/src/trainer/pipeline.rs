//! Dataset → encoder → similarity graph → classifier, with the harnesses that
//! reuse one prepared pipeline across modes and label fractions.

use std::path::Path;

use crate::data::{split_semisupervised, zscore_normalize, Dataset};
use crate::dtw::Sequence;
use crate::numerics::Tensor;
use crate::simgraph::{
    build_graph, cluster_representations, contrast_fastdtw_matrix_with, fastdtw_matrix, ClusterAssignment,
    DistanceMatrix, SimilarityGraph,
};
use crate::temcl::{encode_dataset, pretrain, EncoderParams, Representation};

use super::{knn_metrics, train, Features, Metrics, Mode, ModelParams, TrainConfig, TrainError};

/// Everything upstream of the classifier, computed once per (dataset, seed).
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Series as fed to the encoder (z-normalized unless disabled).
    pub dataset: Dataset,
    /// Per-channel mean and std of the series before normalization.
    pub raw_stats: Tensor,
    pub encoder: EncoderParams,
    pub pretrain_trace: Vec<f64>,
    pub loaded_encoder: bool,
    pub reps: Vec<Representation>,
    pub clusters: ClusterAssignment,
    pub distance: DistanceMatrix,
    pub graph: SimilarityGraph,
}

/// `N × 2C` rows of per-channel means followed by per-channel standard deviations.
pub fn raw_stat_features(d: &Dataset) -> Tensor {
    let rows: Vec<Vec<f64>> = d
        .series
        .iter()
        .map(|s| {
            let (c, t) = (s.channels(), s.len() as f64);
            let means: Vec<f64> = (0..c).map(|k| s.channel(k).iter().sum::<f64>() / t).collect();
            let stds = (0..c).map(|k| {
                let m = means[k];
                (s.channel(k).iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t).sqrt()
            });
            means.iter().copied().chain(stds).collect()
        })
        .collect();
    Tensor::from_rows(&rows).expect("every series has the same channel count")
}

/// Pretrains (or loads) the encoder, encodes every series, clusters, and
/// builds the ContrastFastDTW matrix and graph.
pub fn prepare(d: &Dataset, cfg: &TrainConfig, encoder_checkpoint: Option<&Path>) -> Result<Prepared, TrainError> {
    cfg.validate()?;
    let dataset = if cfg.zscore { zscore_normalize(d) } else { d.clone() };
    let mut pcfg = cfg.pretrain_config();
    pcfg.checkpoint = encoder_checkpoint.map(Path::to_path_buf);
    let pre = pretrain(&dataset, &pcfg, cfg.seed)?;
    let reps = encode_dataset(&pre.params, &dataset)?;
    let clusters = cluster_representations(&reps, dataset.classes, cfg.seed)?;
    let distance = contrast_fastdtw_matrix_with(&reps, &clusters, cfg.radius, cfg.fastdtw_variant)?;
    let graph = build_graph(&distance, cfg.alpha, cfg.topk, cfg.graph_order)?;
    Ok(Prepared {
        raw_stats: raw_stat_features(d),
        dataset,
        encoder: pre.params,
        pretrain_trace: pre.loss_trace,
        loaded_encoder: pre.loaded_from_checkpoint,
        reps,
        clusters,
        distance,
        graph,
    })
}

/// Plain FastDTW between the (normalized) input series, all pairs.
pub fn raw_distance(d: &Dataset, cfg: &TrainConfig) -> Result<DistanceMatrix, TrainError> {
    let dataset = if cfg.zscore { zscore_normalize(d) } else { d.clone() };
    let seqs = dataset
        .series
        .iter()
        .map(|s| Sequence::from_channel_major(&s.values))
        .collect::<Result<Vec<_>, _>>()
        .map_err(crate::simgraph::GraphError::from)?;
    Ok(fastdtw_matrix(
        &seqs,
        &ClusterAssignment::single(seqs.len()),
        cfg.radius,
        cfg.fastdtw_variant,
    )?)
}

pub fn features_for(mode: Mode, prep: &Prepared) -> Features {
    match mode {
        Mode::OnlyKangin => Features::Static(prep.raw_stats.clone()),
        _ => Features::Sequences(prep.reps.iter().map(|r| r.0.transposed()).collect()),
    }
}

/// Applies the label fraction, then trains and scores `cfg.mode`.
pub fn run_mode(prep: &Prepared, cfg: &TrainConfig) -> Result<(Option<ModelParams>, Metrics), TrainError> {
    cfg.validate()?;
    let mut d = prep.dataset.clone();
    if cfg.semi_supervised() {
        d.apply_split(&split_semisupervised(&d, cfg.label_fraction, cfg.seed)?);
    }
    match cfg.mode {
        Mode::OnlyContrastfastdtw => Ok((None, knn_metrics(&d, &prep.distance, cfg)?)),
        Mode::OnlyDpmamba => {
            let (m, metrics) = train(&d, &SimilarityGraph::empty(d.len()), &features_for(cfg.mode, prep), cfg)?;
            Ok((Some(m), metrics))
        }
        Mode::Full | Mode::OnlyKangin => {
            let (m, metrics) = train(&d, &prep.graph, &features_for(cfg.mode, prep), cfg)?;
            Ok((Some(m), metrics))
        }
    }
}

/// One run per mode, in [`Mode::ALL`] order.
pub fn ablate(prep: &Prepared, cfg: &TrainConfig) -> Result<Vec<Metrics>, TrainError> {
    Mode::ALL
        .into_iter()
        .map(|mode| run_mode(prep, &TrainConfig { mode, ..cfg.clone() }).map(|(_, m)| m))
        .collect()
}

/// One run per label fraction.
pub fn label_fraction_sweep(prep: &Prepared, fractions: &[f64], cfg: &TrainConfig) -> Result<Vec<Metrics>, TrainError> {
    fractions
        .iter()
        .map(|&label_fraction| {
            run_mode(prep, &TrainConfig { label_fraction, ..cfg.clone() }).map(|(_, m)| m)
        })
        .collect()
}
