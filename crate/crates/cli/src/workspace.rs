//! Output directory bookkeeping: the run manifest, content-addressed stage
//! keys, and dataset loading.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use csdp_core::data::{parse_long_csv, parse_ts, Dataset, Split};
use csdp_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Common;
use crate::error::CliError;

pub const MANIFEST: &str = "run_manifest.json";
pub const STAGES: &str = "stages.json";

#[derive(Debug, Serialize)]
pub struct StageTime {
    pub stage: String,
    pub key: String,
    pub started: f64,
    pub finished: Option<f64>,
    pub skipped: bool,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub config_file: Option<PathBuf>,
    pub config: TrainConfig,
    pub stages: Vec<StageTime>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct StageRecord {
    key: String,
    outputs: Vec<String>,
}

pub struct Workspace {
    pub out: PathBuf,
    pub force: bool,
    manifest: RunManifest,
    stages: BTreeMap<String, StageRecord>,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl Workspace {
    /// Creates the output directory and writes the manifest before anything else.
    pub fn open(common: &Common, command: &str, config: &TrainConfig) -> Result<Self, CliError> {
        let out = common.out.clone();
        fs::create_dir_all(&out).map_err(|e| CliError::Input(format!("output dir {}: {e}", out.display())))?;
        let stages = match fs::read_to_string(out.join(STAGES)) {
            Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
            Err(_) => BTreeMap::new(),
        };
        let ws = Self {
            manifest: RunManifest {
                command: command.into(),
                version: env!("CARGO_PKG_VERSION"),
                seed: config.seed,
                out_dir: out.clone(),
                data: common.data.clone(),
                test_data: common.test_data.clone(),
                config_file: common.config.clone(),
                config: config.clone(),
                stages: Vec::new(),
            },
            out,
            force: common.force,
            stages,
        };
        ws.write_manifest()?;
        Ok(ws)
    }

    fn write_manifest(&self) -> Result<(), CliError> {
        fs::write(self.out.join(MANIFEST), serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// True when `stage` last ran with `key` and all its outputs still exist.
    pub fn up_to_date(&self, stage: &str, key: &str) -> bool {
        !self.force
            && self
                .stages
                .get(stage)
                .is_some_and(|r| r.key == key && r.outputs.iter().all(|o| self.out.join(o).exists()))
    }

    pub fn begin(&mut self, stage: &str, key: &str, skipped: bool) -> Result<(), CliError> {
        let t = now();
        self.manifest.stages.push(StageTime {
            stage: stage.into(),
            key: key.into(),
            started: t,
            finished: skipped.then_some(t),
            skipped,
        });
        self.write_manifest()
    }

    pub fn finish(&mut self, stage: &str, key: &str, outputs: &[&str]) -> Result<(), CliError> {
        if let Some(s) = self.manifest.stages.iter_mut().rev().find(|s| s.stage == stage) {
            s.finished = Some(now());
        }
        self.stages.insert(
            stage.into(),
            StageRecord {
                key: key.into(),
                outputs: outputs.iter().map(|s| s.to_string()).collect(),
            },
        );
        fs::write(self.out.join(STAGES), serde_json::to_string_pretty(&self.stages)?)?;
        self.write_manifest()
    }
}

/// Incremental stage key over files and JSON values.
pub struct KeyBuilder(Sha256);

impl KeyBuilder {
    pub fn new(stage: &str) -> Self {
        let mut h = Sha256::new();
        h.update(stage.as_bytes());
        Self(h)
    }

    pub fn file(mut self, path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
        Ok(self)
    }

    pub fn value(mut self, v: &serde_json::Value) -> Self {
        let s = v.to_string();
        self.0.update((s.len() as u64).to_le_bytes());
        self.0.update(s);
        self
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

fn load_one(path: &Path, split: Split) -> Result<Dataset, CliError> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let loaded = match ext.as_deref() {
        Some("ts") => parse_ts(path, split),
        Some("csv") => parse_long_csv(path),
        _ => return Err(CliError::Input(format!("{}: expected a .ts or .csv file", path.display()))),
    };
    loaded.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// `--data` plus the optional `--test-data`, and the files they came from.
pub fn load_dataset(common: &Common) -> Result<(Dataset, Vec<PathBuf>), CliError> {
    let data = common
        .data
        .as_ref()
        .ok_or_else(|| CliError::Input("--data is required".into()))?;
    let mut d = load_one(data, Split::Train)?;
    let mut files = vec![data.clone()];
    if let Some(test) = &common.test_data {
        d = d
            .concat(load_one(test, Split::Test)?)
            .map_err(|e| CliError::Input(format!("{}: {e}", test.display())))?;
        files.push(test.clone());
    }
    Ok((d, files))
}
