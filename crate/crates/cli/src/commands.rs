use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use csdp_core::data::{split_semisupervised, zscore_normalize, Dataset};
use csdp_core::numerics::Checkpoint;
use csdp_core::simgraph::{
    build_graph, cluster_representations, contrast_fastdtw_matrix_with, export_heatmap, load_matrix, save_matrix,
    DistanceMatrix, SimilarityGraph, StoredMatrix,
};
use csdp_core::temcl::{encode_dataset, pretrain, EncoderParams};
use csdp_core::trainer::{
    ablate, evaluate, knn_metrics, knn_predict, label_fraction_sweep, raw_distance, raw_stat_features, run_battery,
    train, write_table, Features, Metrics, Mode, ModelParams, Prepared, TrainConfig, TrainError,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::Common;
use crate::error::CliError;
use crate::workspace::{load_dataset, KeyBuilder, Workspace};

const ENCODER: &str = "temcl.ckpt";
const DISTANCE: &str = "distance.mat";
const GRAPH: &str = "graph.mat";
const MODEL: &str = "model.ckpt";
const TRAIN_SIDECAR: &str = "train_config.json";

/// What `eval` needs to rebuild the model that `train` saved.
#[derive(Debug, Serialize, Deserialize)]
struct TrainSidecar {
    config: TrainConfig,
    classes: usize,
    static_width: usize,
}

fn normalized(d: &Dataset, cfg: &TrainConfig) -> Dataset {
    if cfg.zscore {
        zscore_normalize(d)
    } else {
        d.clone()
    }
}

fn data_key(stage: &str, files: &[PathBuf]) -> Result<KeyBuilder, CliError> {
    files.iter().try_fold(KeyBuilder::new(stage), |k, f| k.file(f))
}

fn require(ws: &Workspace, name: &str, hint: &str) -> Result<PathBuf, CliError> {
    let p = ws.path(name);
    if p.exists() {
        Ok(p)
    } else {
        Err(CliError::Input(format!("{} not found; run `csdp {hint}` first", p.display())))
    }
}

fn load_encoder(ws: &Workspace, d: &Dataset, cfg: &TrainConfig) -> Result<EncoderParams, CliError> {
    let path = require(ws, ENCODER, "pretrain")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut enc = EncoderParams::init(d.channels(), cfg.d_target, &mut rng).map_err(TrainError::from)?;
    Checkpoint::load(&path)
        .and_then(|c| c.restore_into(&mut enc))
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(enc)
}

fn load_distance(ws: &Workspace) -> Result<DistanceMatrix, CliError> {
    match load_matrix(&require(ws, DISTANCE, "simmatrix")?)?.0 {
        StoredMatrix::Distance(d) => Ok(d),
        StoredMatrix::Graph(_) => Err(CliError::Input(format!("{DISTANCE} holds a graph"))),
    }
}

fn load_graph(ws: &Workspace) -> Result<SimilarityGraph, CliError> {
    match load_matrix(&require(ws, GRAPH, "simmatrix")?)?.0 {
        StoredMatrix::Graph(g) => Ok(g),
        StoredMatrix::Distance(_) => Err(CliError::Input(format!("{GRAPH} holds a distance matrix"))),
    }
}

fn sequences(enc: &EncoderParams, d: &Dataset) -> Result<Features, CliError> {
    let reps = encode_dataset(enc, d).map_err(TrainError::from)?;
    Ok(Features::Sequences(reps.iter().map(|r| r.0.transposed()).collect()))
}

fn print_json(v: &serde_json::Value) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

pub fn pretrain_cmd(common: &Common, cfg: &TrainConfig) -> Result<(), CliError> {
    let mut ws = Workspace::open(common, "pretrain", cfg)?;
    let (d, files) = load_dataset(common)?;
    let key = data_key("pretrain", &files)?
        .value(&json!({
            "seed": cfg.seed, "epochs": cfg.pretrain_epochs, "batch_size": cfg.batch_size, "lr": cfg.lr,
            "margin": cfg.margin, "sigma_scale": cfg.sigma_scale, "d_target": cfg.d_target,
            "loss_convention": cfg.loss_convention, "zscore": cfg.zscore,
        }))
        .finish();
    if ws.up_to_date("pretrain", &key) {
        ws.begin("pretrain", &key, true)?;
        println!("{} is up to date; nothing to do (use --force to retrain)", ws.path(ENCODER).display());
        return Ok(());
    }
    ws.begin("pretrain", &key, false)?;
    let out = pretrain(&normalized(&d, cfg), &cfg.pretrain_config(), cfg.seed).map_err(TrainError::from)?;
    Checkpoint::from_params(&out.params, cfg.seed).save(&ws.path(ENCODER))?;
    let mut w = csv::Writer::from_path(ws.path("temcl_loss.csv")).map_err(TrainError::from)?;
    w.write_record(["epoch", "loss"]).map_err(TrainError::from)?;
    for (e, l) in out.loss_trace.iter().enumerate() {
        w.write_record([e.to_string(), l.to_string()]).map_err(TrainError::from)?;
    }
    w.flush()?;
    ws.finish("pretrain", &key, &[ENCODER, "temcl_loss.csv"])?;
    println!(
        "pretrained {} epochs; final loss {}; wrote {}",
        out.loss_trace.len(),
        out.loss_trace.last().map_or("n/a".into(), |l| format!("{l:.6}")),
        ws.path(ENCODER).display()
    );
    Ok(())
}

pub fn simmatrix_cmd(common: &Common, cfg: &TrainConfig, raw: bool) -> Result<(), CliError> {
    let mut ws = Workspace::open(common, "simmatrix", cfg)?;
    let (d, files) = load_dataset(common)?;
    let mut key = data_key("simmatrix", &files)?.value(&json!({
        "raw": raw, "seed": cfg.seed, "zscore": cfg.zscore, "radius": cfg.radius, "alpha": cfg.alpha,
        "topk": cfg.topk, "graph_order": cfg.graph_order, "fastdtw_variant": cfg.fastdtw_variant,
        "d_target": cfg.d_target,
    }));
    if !raw {
        key = key.file(&require(&ws, ENCODER, "pretrain")?)?;
    }
    let key = key.finish();
    if ws.up_to_date("simmatrix", &key) {
        ws.begin("simmatrix", &key, true)?;
        println!("matrices in {} are up to date; nothing to do", ws.out.display());
        return Ok(());
    }
    ws.begin("simmatrix", &key, false)?;
    let dist = if raw {
        raw_distance(&d, cfg)?
    } else {
        let norm = normalized(&d, cfg);
        let enc = load_encoder(&ws, &d, cfg)?;
        let reps = encode_dataset(&enc, &norm).map_err(TrainError::from)?;
        let clusters = cluster_representations(&reps, d.classes, cfg.seed)?;
        fs::write(ws.path("clusters.json"), serde_json::to_string(&clusters)?)?;
        contrast_fastdtw_matrix_with(&reps, &clusters, cfg.radius, cfg.fastdtw_variant)?
    };
    let graph = build_graph(&dist, cfg.alpha, cfg.topk, cfg.graph_order)?;
    save_matrix(&ws.path(DISTANCE), &StoredMatrix::Distance(dist.clone()), cfg.alpha, cfg.topk, cfg.radius)?;
    save_matrix(&ws.path(GRAPH), &StoredMatrix::Graph(graph.clone()), cfg.alpha, cfg.topk, cfg.radius)?;
    export_heatmap(&dist, &ws.path("heatmap.csv"))?;
    ws.finish("simmatrix", &key, &[DISTANCE, GRAPH, "heatmap.csv"])?;
    println!(
        "{} matrix over {} series; {} graph edges; wrote {}, {} and heatmap.csv",
        if raw { "raw FastDTW" } else { "ContrastFastDTW" },
        dist.n(),
        graph.edge_count(),
        DISTANCE,
        GRAPH
    );
    Ok(())
}

/// Dataset with the configured label fraction applied.
fn training_view(d: &Dataset, cfg: &TrainConfig) -> Result<Dataset, CliError> {
    let mut d = normalized(d, cfg);
    if cfg.semi_supervised() {
        let s = split_semisupervised(&d, cfg.label_fraction, cfg.seed)?;
        d.apply_split(&s);
    }
    Ok(d)
}

/// Artifacts the mode reads, in key order.
fn mode_inputs(mode: Mode) -> &'static [&'static str] {
    match mode {
        Mode::Full => &[ENCODER, GRAPH],
        Mode::OnlyDpmamba => &[ENCODER],
        Mode::OnlyKangin => &[GRAPH],
        Mode::OnlyContrastfastdtw => &[DISTANCE],
    }
}

fn hint(name: &str) -> &'static str {
    if name == ENCODER {
        "pretrain"
    } else {
        "simmatrix"
    }
}

pub fn train_cmd(common: &Common, cfg: &TrainConfig) -> Result<(), CliError> {
    let mut ws = Workspace::open(common, "train", cfg)?;
    let (raw, files) = load_dataset(common)?;
    let mut key = data_key("train", &files)?.value(&serde_json::to_value(cfg)?);
    for name in mode_inputs(cfg.mode) {
        key = key.file(&require(&ws, name, hint(name))?)?;
    }
    let key = key.finish();
    if ws.up_to_date("train", &key) {
        ws.begin("train", &key, true)?;
        println!("{} is up to date; nothing to do", ws.path("metrics.json").display());
        return Ok(());
    }
    ws.begin("train", &key, false)?;
    let started = Instant::now();
    let d = training_view(&raw, cfg)?;
    let static_width = 2 * raw.channels();
    let metrics = match cfg.mode {
        Mode::OnlyContrastfastdtw => knn_metrics(&d, &load_distance(&ws)?, cfg)?,
        mode => {
            let (g, feats) = match mode {
                Mode::OnlyKangin => (load_graph(&ws)?, Features::Static(raw_stat_features(&raw))),
                Mode::OnlyDpmamba => (SimilarityGraph::empty(d.len()), sequences(&load_encoder(&ws, &raw, cfg)?, &d)?),
                _ => (load_graph(&ws)?, sequences(&load_encoder(&ws, &raw, cfg)?, &d)?),
            };
            let (model, metrics) = train(&d, &g, &feats, cfg)?;
            Checkpoint::from_params(&model, cfg.seed).save(&ws.path(MODEL))?;
            metrics
        }
    };
    let sidecar = TrainSidecar {
        config: cfg.clone(),
        classes: raw.classes,
        static_width,
    };
    fs::write(ws.path(TRAIN_SIDECAR), serde_json::to_string_pretty(&sidecar)?)?;
    metrics.write_json(&ws.path("metrics.json"))?;
    metrics.write_epochs_jsonl(&ws.path("epochs.jsonl"))?;
    fs::write(
        ws.path("timing.json"),
        serde_json::to_string_pretty(&json!({ "train_seconds": started.elapsed().as_secs_f64() }))?,
    )?;
    let mut outputs = vec![TRAIN_SIDECAR, "metrics.json", "epochs.jsonl"];
    if cfg.mode != Mode::OnlyContrastfastdtw {
        outputs.push(MODEL);
    }
    ws.finish("train", &key, &outputs)?;
    print_json(&summary(&metrics))
}

fn summary(m: &Metrics) -> serde_json::Value {
    json!({
        "mode": m.mode,
        "seed": m.seed,
        "label_fraction": m.label_fraction,
        "train_accuracy": m.train_accuracy,
        "test_accuracy": m.test_accuracy,
        "per_class_accuracy": m.per_class_accuracy,
        "final_loss": m.final_loss(),
    })
}

pub fn eval_cmd(common: &Common, cfg: &TrainConfig) -> Result<(), CliError> {
    let ws = Workspace::open(common, "eval", cfg)?;
    let sidecar_path = require(&ws, TRAIN_SIDECAR, "train")?;
    let sidecar: TrainSidecar = serde_json::from_str(&fs::read_to_string(&sidecar_path)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", sidecar_path.display())))?;
    let tc = &sidecar.config;
    let (raw, _) = load_dataset(common)?;
    let d = normalized(&raw, tc);
    let test = d.test_indices();
    if test.is_empty() || test.iter().any(|&i| d.labels[i].is_none()) {
        return Err(TrainError::MissingTestLabels.into());
    }
    let result = if tc.mode == Mode::OnlyContrastfastdtw {
        let dist = load_distance(&ws)?;
        let pred = knn_predict(&d, &dist)?;
        let m = knn_metrics(&d, &dist, tc)?;
        json!({ "mode": tc.mode, "test_accuracy": m.test_accuracy, "train_accuracy": m.train_accuracy,
                "per_class_accuracy": m.per_class_accuracy, "predictions": pred })
    } else {
        let mut model = ModelParams::init(tc, sidecar.classes, sidecar.static_width)?;
        let path = require(&ws, MODEL, "train")?;
        Checkpoint::load(&path)
            .and_then(|c| c.restore_into(&mut model))
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let (g, feats) = match tc.mode {
            Mode::OnlyKangin => (load_graph(&ws)?, Features::Static(raw_stat_features(&raw))),
            Mode::OnlyDpmamba => (SimilarityGraph::empty(d.len()), sequences(&load_encoder(&ws, &raw, tc)?, &d)?),
            _ => (load_graph(&ws)?, sequences(&load_encoder(&ws, &raw, tc)?, &d)?),
        };
        let e = evaluate(&model, &d, &g, &feats, tc.gin_unweighted)?;
        json!({ "mode": tc.mode, "test_accuracy": e.test_accuracy, "train_accuracy": e.train_accuracy,
                "per_class_accuracy": e.per_class_accuracy, "predictions": e.predictions })
    };
    fs::write(ws.path("eval.json"), serde_json::to_string_pretty(&result)?)?;
    let mut brief = result;
    if let Some(o) = brief.as_object_mut() {
        o.remove("predictions");
    }
    print_json(&brief)
}

/// Everything `ablate` and `sweep` reuse, rebuilt from saved artifacts.
fn prepared(ws: &Workspace, raw: &Dataset, cfg: &TrainConfig) -> Result<Prepared, CliError> {
    let dataset = normalized(raw, cfg);
    let encoder = load_encoder(ws, raw, cfg)?;
    let reps = encode_dataset(&encoder, &dataset).map_err(TrainError::from)?;
    let clusters = cluster_representations(&reps, dataset.classes, cfg.seed)?;
    Ok(Prepared {
        raw_stats: raw_stat_features(raw),
        dataset,
        encoder,
        pretrain_trace: Vec::new(),
        loaded_encoder: true,
        reps,
        clusters,
        distance: load_distance(ws)?,
        graph: load_graph(ws)?,
    })
}

fn table_cmd(
    common: &Common,
    cfg: &TrainConfig,
    stage: &str,
    table: &str,
    extra: serde_json::Value,
    run: impl FnOnce(&Prepared) -> Result<Vec<Metrics>, TrainError>,
) -> Result<(), CliError> {
    let mut ws = Workspace::open(common, stage, cfg)?;
    let (raw, files) = load_dataset(common)?;
    let mut key = data_key(stage, &files)?.value(&serde_json::to_value(cfg)?).value(&extra);
    for name in [ENCODER, DISTANCE, GRAPH] {
        key = key.file(&require(&ws, name, hint(name))?)?;
    }
    let key = key.finish();
    if ws.up_to_date(stage, &key) {
        ws.begin(stage, &key, true)?;
        println!("{} is up to date; nothing to do", ws.path(table).display());
        return Ok(());
    }
    ws.begin(stage, &key, false)?;
    let prep = prepared(&ws, &raw, cfg)?;
    let rows = run(&prep)?;
    write_table(&ws.path(table), &rows)?;
    ws.finish(stage, &key, &[table])?;
    print!("{}", fs::read_to_string(ws.path(table))?);
    Ok(())
}

pub fn ablate_cmd(common: &Common, cfg: &TrainConfig) -> Result<(), CliError> {
    table_cmd(common, cfg, "ablate", "ablation.csv", json!(null), |p| ablate(p, cfg))
}

pub fn sweep_cmd(common: &Common, cfg: &TrainConfig, fractions: &[f64]) -> Result<(), CliError> {
    if let Some(f) = fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
        return Err(CliError::Input(format!("label fraction {f} outside (0, 1]")));
    }
    table_cmd(common, cfg, "sweep", "sweep.csv", json!(fractions), |p| label_fraction_sweep(p, fractions, cfg))
}

pub fn gradcheck_cmd(common: &Common, cfg: &TrainConfig) -> Result<(), CliError> {
    let ws = Workspace::open(common, "gradcheck", cfg)?;
    let reports = run_battery(cfg.seed);
    for r in &reports {
        println!(
            "{:<18} max rel error {:.3e}  {}",
            r.name,
            r.max_rel_error,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    fs::write(ws.path("gradcheck.json"), serde_json::to_string_pretty(&reports)?)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradCheck(failed.join(", ")))
    }
}
