use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use csdp_core::dtw::FastDtwVariant;
use csdp_core::simgraph::GraphOrder;
use csdp_core::temcl::LossConvention;
use csdp_core::trainer::{Mode, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "csdp", version, about = "Contrastive FastDTW graphs + dual-pathway SSM + KAN-GIN for multivariate time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Contrastive encoder pretraining; writes temcl.ckpt and temcl_loss.csv.
    Pretrain {
        /// Pretraining epochs (0 writes the initial weights).
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Distance matrix, similarity graph and heatmap.
    Simmatrix {
        /// FastDTW over the raw (normalized) series instead of learned representations.
        #[arg(long)]
        raw: bool,
    },
    /// Train one model mode; writes model.ckpt and metrics.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a trained model on the test split and print summary JSON.
    Eval,
    /// Train every mode and write ablation.csv.
    Ablate {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train over several label fractions and write sweep.csv.
    Sweep {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,1.0")]
        fractions: Vec<f64>,
    },
    /// Finite-difference check of every gradient; exits 4 on failure.
    Gradcheck,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Training data: a `.ts` file or a long-form `.csv`.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Test data appended to `--data` (a `.ts` file is read as the test split).
    #[arg(long, global = true)]
    pub test_data: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "CSDP_OUT_DIR", default_value = "out")]
    pub out: PathBuf,
    /// JSON config file; explicit flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Recompute stages whose outputs are already up to date.
    #[arg(long, global = true)]
    pub force: bool,
    /// Worker threads for matrix construction and encoding.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub overrides: Overrides,
}

/// Flags that override individual [`TrainConfig`] fields.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub mode: Option<Mode>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long, global = true)]
    pub margin: Option<f64>,
    #[arg(long, global = true)]
    pub sigma_scale: Option<f64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub topk: Option<usize>,
    #[arg(long, global = true)]
    pub radius: Option<usize>,
    #[arg(long, global = true)]
    pub d_target: Option<usize>,
    #[arg(long, global = true)]
    pub ssm_state: Option<usize>,
    #[arg(long, global = true)]
    pub gin_layers: Option<usize>,
    #[arg(long, global = true)]
    pub label_fraction: Option<f64>,
    #[arg(long, global = true)]
    pub plateau_factor: Option<f64>,
    #[arg(long, global = true)]
    pub plateau_patience: Option<usize>,
    /// masked, raw or similarity.
    #[arg(long, global = true)]
    pub graph_order: Option<GraphOrder>,
    /// canonical or truncated.
    #[arg(long, global = true)]
    pub fastdtw_variant: Option<FastDtwVariant>,
    /// standard or swapped (alias alg2).
    #[arg(long, global = true)]
    pub loss_convention: Option<LossConvention>,
    #[arg(long, global = true)]
    pub ssm_dense_a: bool,
    #[arg(long, global = true)]
    pub split_paths: bool,
    #[arg(long, global = true)]
    pub gin_unweighted: bool,
    #[arg(long, global = true)]
    pub no_zscore: bool,
}

macro_rules! set {
    ($cfg:ident, $o:ident: $($field:ident),*) => {
        $(if let Some(v) = $o.$field { $cfg.$field = v; })*
    };
}

impl Overrides {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        set!(cfg, self: seed, mode, lr, pretrain_epochs, margin, sigma_scale, alpha, topk, radius, d_target,
            ssm_state, gin_layers, label_fraction, plateau_factor, plateau_patience, graph_order,
            fastdtw_variant, loss_convention);
        if self.batch_size.is_some() {
            cfg.batch_size = self.batch_size;
        }
        cfg.ssm_dense_a |= self.ssm_dense_a;
        cfg.split_paths |= self.split_paths;
        cfg.gin_unweighted |= self.gin_unweighted;
        if self.no_zscore {
            cfg.zscore = false;
        }
    }
}

/// Defaults, then the config file, then flags, then the subcommand's own `--epochs`.
pub fn resolve_config(common: &Common, command: &Command) -> Result<TrainConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => read_config(path)?,
        None => TrainConfig::default(),
    };
    common.overrides.apply(&mut cfg);
    match command {
        Command::Pretrain { epochs: Some(e) } => cfg.pretrain_epochs = *e,
        Command::Train { epochs: Some(e) } | Command::Ablate { epochs: Some(e) } | Command::Sweep { epochs: Some(e), .. } => {
            cfg.epochs = *e
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_config(path: &Path) -> Result<TrainConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))
}
