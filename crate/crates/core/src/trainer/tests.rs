use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::TimeSeries;
use crate::simgraph::build_graph;

/// Small dataset with class-dependent sequence features and a graph built
/// from their Euclidean distances.
fn toy(per_class: usize, test_per_class: usize, seed: u64) -> (Dataset, SimilarityGraph, Features) {
    let classes = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut series = Vec::new();
    let mut labels = Vec::new();
    let mut split = Vec::new();
    let mut seqs = Vec::new();
    for (count, tag) in [(per_class, Split::Train), (test_per_class, Split::Test)] {
        for _ in 0..count {
            for c in 0..classes {
                let id = series.len();
                series.push(TimeSeries::from_channels(vec![vec![c as f64; 4]], id).unwrap());
                labels.push(Some(c));
                split.push(tag);
                let data = (0..5 * 4)
                    .map(|k| if k % 4 == c { 1.5 } else { 0.0 } + rng.random_range(-0.3..0.3))
                    .collect();
                seqs.push(Tensor::new(data, vec![5, 4]).unwrap());
            }
        }
    }
    let n = seqs.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            dist[i * n + j] = seqs[i]
                .data()
                .iter()
                .zip(seqs[j].data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
        }
    }
    let g = build_graph(&DistanceMatrix::new(n, dist).unwrap(), 1.0, 3, GraphOrder::Masked).unwrap();
    let d = Dataset::new(series, labels, classes, split).unwrap();
    (d, g, Features::Sequences(seqs))
}

fn small_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        d_target: 4,
        ssm_state: 3,
        lr: 1e-2,
        ..TrainConfig::default()
    }
}

#[test]
fn defaults_and_validation() {
    let c = TrainConfig::default();
    assert_eq!((c.epochs, c.pretrain_epochs, c.topk, c.radius, c.d_target, c.ssm_state, c.gin_layers), (1000, 500, 5, 1, 64, 16, 2));
    assert_eq!(c.batch_for(60), 60);
    assert_eq!(c.batch_for(200), 64);
    let semi = TrainConfig {
        label_fraction: 0.1,
        ..c.clone()
    };
    assert_eq!(semi.batch_for(15), 14);
    assert!(TrainConfig { batch_size: Some(7), ..semi.clone() }.validate().is_err());
    assert!(TrainConfig { batch_size: Some(7), ..c.clone() }.validate().is_ok());
    assert!(TrainConfig { label_fraction: 0.0, ..c.clone() }.validate().is_err());
    assert!(TrainConfig { gin_layers: 4, ..c.clone() }.validate().is_err());
    let json = serde_json::to_string(&c).unwrap();
    assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), c);
    let partial: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "mode": "only_kangin"}"#).unwrap();
    assert_eq!((partial.epochs, partial.mode, partial.topk), (3, Mode::OnlyKangin, 5));
    assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
}

#[test]
fn mode_names_round_trip() {
    for m in Mode::ALL {
        assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
    }
    assert!("only_dtw".parse::<Mode>().is_err());
}

#[test]
fn learns_separable_toy() {
    let (d, g, f) = toy(4, 2, 0);
    let (_, m) = train(&d, &g, &f, &small_cfg(150)).unwrap();
    assert_eq!(m.train_accuracy, Some(1.0));
    assert_eq!(m.test_accuracy, Some(1.0));
    assert!(m.final_loss().unwrap() < m.epochs[0].loss);
    assert_eq!(m.epochs.len(), 150);
}

#[test]
fn fixed_seed_is_bit_identical() {
    let (d, g, f) = toy(3, 1, 1);
    let cfg = small_cfg(20);
    let (p1, m1) = train(&d, &g, &f, &cfg).unwrap();
    let (p2, m2) = train(&d, &g, &f, &cfg).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(serde_json::to_string(&m1).unwrap(), serde_json::to_string(&m2).unwrap());
}

#[test]
fn hidden_labels_never_reach_the_loss() {
    let (mut d, g, f) = toy(3, 1, 2);
    let cfg = TrainConfig {
        label_fraction: 0.5,
        ..small_cfg(10)
    };
    for i in [1, 4, 6] {
        d.label_mask[i] = false;
    }
    let (_, with_labels) = train(&d, &g, &f, &cfg).unwrap();
    let mut erased = d.clone();
    for i in [1, 4, 6] {
        erased.labels[i] = Some((d.labels[i].unwrap() + 1) % 3);
    }
    let (_, relabeled) = train(&erased, &g, &f, &cfg).unwrap();
    assert_eq!(with_labels.epochs, relabeled.epochs);
}

#[test]
fn node_order_does_not_matter() {
    let (d, g, f) = toy(3, 2, 3);
    let cfg = small_cfg(15);
    let (p1, m1) = train(&d, &g, &f, &cfg).unwrap();
    let mut perm: Vec<usize> = (0..d.len()).collect();
    perm.reverse();
    perm.swap(0, 4);
    let (p2, m2) = train(&d.permuted(&perm), &g.permuted(&perm).unwrap(), &f.permuted(&perm), &cfg).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(m1, m2);
    let e1 = evaluate(&p1, &d, &g, &f, false).unwrap();
    let e2 = evaluate(&p1, &d.permuted(&perm), &g.permuted(&perm).unwrap(), &f.permuted(&perm), false).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(e2.predictions[k], e1.predictions[i]);
    }
}

#[test]
fn single_labeled_class_is_fit_exactly() {
    let (mut d, g, f) = toy(3, 0, 4);
    for l in d.labels.iter_mut() {
        *l = Some(0);
    }
    let (_, m) = train(&d, &g, &f, &small_cfg(200)).unwrap();
    assert_eq!(m.train_accuracy, Some(1.0));
    assert!(m.final_loss().unwrap() < 0.01, "{:?}", m.final_loss());
}

#[test]
fn evaluate_requires_test_labels() {
    let (mut d, g, f) = toy(2, 1, 5);
    let (p, _) = train(&d, &g, &f, &small_cfg(2)).unwrap();
    assert!(evaluate(&p, &d, &g, &f, false).is_ok());
    let last = d.len() - 1;
    d.labels[last] = None;
    assert!(matches!(evaluate(&p, &d, &g, &f, false), Err(TrainError::MissingTestLabels)));
    let (d0, g0, f0) = toy(2, 0, 5);
    assert!(matches!(evaluate(&p, &d0, &g0, &f0, false), Err(TrainError::MissingTestLabels)));
}

#[test]
fn no_visible_labels_is_an_error() {
    let (mut d, g, f) = toy(2, 1, 6);
    d.label_mask.iter_mut().for_each(|m| *m = false);
    assert!(matches!(train(&d, &g, &f, &small_cfg(2)), Err(TrainError::NoLabeled)));
}

#[test]
fn mismatched_inputs_are_rejected() {
    let (d, g, _) = toy(2, 1, 7);
    let short = Features::Sequences(vec![Tensor::zeros(&[5, 4]); 3]);
    assert!(matches!(train(&d, &g, &short, &small_cfg(1)), Err(TrainError::DimMismatch(_))));
    let wide = Features::Sequences(vec![Tensor::zeros(&[5, 6]); d.len()]);
    assert!(matches!(train(&d, &g, &wide, &small_cfg(1)), Err(TrainError::DimMismatch(_))));
}

#[test]
fn static_features_and_unweighted_aggregation() {
    let (d, g, f) = toy(3, 1, 8);
    let rows: Vec<Vec<f64>> = (0..d.len()).map(|i| vec![d.labels[i].unwrap() as f64, 1.0]).collect();
    let stat = Features::Static(Tensor::from_rows(&rows).unwrap());
    let cfg = TrainConfig {
        mode: Mode::OnlyKangin,
        gin_unweighted: true,
        ..small_cfg(100)
    };
    let (p, m) = train(&d, &g, &stat, &cfg).unwrap();
    assert!(p.ssm.is_none() && p.embed.is_some());
    assert!(p.named_params().iter().any(|(n, _)| n == "embed.weight"));
    assert!(m.train_accuracy.unwrap() > 0.5);
    assert!(train(&d, &g, &f, &cfg).is_err());
}

#[test]
fn semi_supervised_batches_mix_pools() {
    let (mut d, g, f) = toy(4, 1, 9);
    let s = crate::data::split_semisupervised(&d, 0.25, 0).unwrap();
    d.apply_split(&s);
    let cfg = TrainConfig {
        label_fraction: 0.25,
        batch_size: Some(6),
        ..small_cfg(5)
    };
    let (_, m) = train(&d, &g, &f, &cfg).unwrap();
    assert_eq!(m.epochs.len(), 5);
    assert!(m.epochs.iter().all(|e| e.loss.is_finite()));
}

#[test]
fn knn_on_duplicates_is_perfect() {
    let (d, _, _) = toy(2, 2, 10);
    let n = d.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (d.labels[i].unwrap(), d.labels[j].unwrap());
            dist[i * n + j] = if i == j {
                0.0
            } else if a == b {
                1e-3
            } else {
                5.0
            };
        }
    }
    let m = knn_metrics(&d, &DistanceMatrix::new(n, dist).unwrap(), &TrainConfig::default()).unwrap();
    assert_eq!(m.test_accuracy, Some(1.0));
    assert_eq!(m.train_accuracy, Some(1.0));
    assert_eq!(m.mode, Mode::OnlyContrastfastdtw);
}

#[test]
fn knn_falls_back_to_majority() {
    let (d, _, _) = toy(2, 1, 11);
    let n = d.len();
    let mut dist = vec![crate::simgraph::SENTINEL; n * n];
    for i in 0..n {
        dist[i * n + i] = 0.0;
    }
    let pred = knn_predict(&d, &DistanceMatrix::new(n, dist).unwrap()).unwrap();
    assert!(pred.iter().all(|&p| p == 0));
}

#[test]
fn tables_and_epoch_logs() {
    let dir = tempfile::tempdir().unwrap();
    let (d, g, f) = toy(2, 1, 12);
    let (_, m) = train(&d, &g, &f, &small_cfg(3)).unwrap();
    write_table(&dir.path().join("t.csv"), &[m.clone(), m.clone()]).unwrap();
    let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert!(text.starts_with("mode,seed,label_fraction,train_accuracy,test_accuracy,final_loss"));
    assert_eq!(text.lines().count(), 3);
    m.write_epochs_jsonl(&dir.path().join("e.jsonl")).unwrap();
    let lines: Vec<String> = std::fs::read_to_string(dir.path().join("e.jsonl")).unwrap().lines().map(String::from).collect();
    assert_eq!(lines.len(), 3);
    let first: EpochRecord = serde_json::from_str(&lines[0]).unwrap();
    assert_eq!(first, m.epochs[0]);
}

#[test]
fn battery_passes_on_fresh_init() {
    for r in run_battery(0) {
        assert!(r.passed, "{} error {}", r.name, r.max_rel_error);
    }
}
