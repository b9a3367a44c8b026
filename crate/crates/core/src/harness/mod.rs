//! Training runs, grid search, summaries and embedding export.

pub mod adam;
pub mod grid;
pub mod store;
pub mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classifiers::ClassifierKind;
use crate::data::{self, DataError, TuDataset};
use crate::gnn::{Arch, Graph};
use crate::manifolds::{GeometryContext, Nonlinearity};

pub use adam::Adam;
pub use grid::{grid_search, grid_space, rank, GridResult, LeaderEntry};
pub use store::{
    checkpoint_accuracy, checkpoint_path, evaluate, export_embeddings, load_checkpoint, mean_std, read_records, run_config, write_summary_row, Checkpoint,
    SummaryRow,
};
pub use train::{train_graphs, train_nodes, EarlyStopping, EpochRecord, RunRecord, StopDecision};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(#[from] DataError),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("model error: {0}")]
    Model(String),
}

impl HarnessError {
    /// Process exit status for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Dataset(_) => 3,
            HarnessError::Diverged { .. } | HarnessError::NonFiniteGradient { .. } => 4,
            HarnessError::Io { .. } | HarnessError::Model(_) => 1,
        }
    }

    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io { path: path.display().to_string(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Node,
    Graph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonlinearityKind {
    ReEig,
    TgReEig,
}

impl NonlinearityKind {
    pub fn name(&self) -> &'static str {
        match self {
            NonlinearityKind::ReEig => "reeig",
            NonlinearityKind::TgReEig => "tgreeig",
        }
    }
}

/// One training setup. `dim` is always the ambient dimension, so SPD_3
/// is `geometry = "spd", dim = 6`. Unset epoch limits follow the task:
/// 500 epochs with patience 200 for nodes, 200 with patience 100 for graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: String,
    pub task: Option<Task>,
    pub arch: Arch,
    pub geometry: String,
    pub dim: usize,
    pub classifier: ClassifierKind,
    pub lr: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub nonlinearity: NonlinearityKind,
    /// Floor of the ReEig nonlinearity.
    pub reeig_eps: f64,
    /// Regularization weight of the margin heads.
    #[serde(alias = "C")]
    pub c: f64,
    pub num_layers: usize,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    /// Graphs per batch for graph classification.
    pub batch_size: usize,
    /// Seed of the graph-classification fold assignment.
    pub split_seed: u64,
    /// Standardize continuous node attributes of graph datasets.
    pub zscore: bool,
    pub seeds: Vec<u64>,
    pub out: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: String::new(),
            task: None,
            arch: Arch::Gcn,
            geometry: "spd".into(),
            dim: 6,
            classifier: ClassifierKind::LinearXe,
            lr: 0.01,
            dropout: 0.0,
            weight_decay: 0.0,
            nonlinearity: NonlinearityKind::TgReEig,
            reeig_eps: 1e-4,
            c: 0.005,
            num_layers: 2,
            max_epochs: None,
            patience: None,
            batch_size: 32,
            split_seed: 0,
            zscore: false,
            seeds: vec![0],
            out: "out".into(),
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn geometry_context(&self) -> Result<GeometryContext, HarnessError> {
        GeometryContext::from_name(&self.geometry, self.dim)
            .and_then(|g| g.new())
            .map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn model_nonlinearity(&self) -> Nonlinearity {
        match self.nonlinearity {
            NonlinearityKind::TgReEig => Nonlinearity::TgReEig,
            NonlinearityKind::ReEig => Nonlinearity::ReEig(self.reeig_eps),
        }
    }

    pub fn max_epochs(&self, task: Task) -> usize {
        self.max_epochs.unwrap_or(match task {
            Task::Node => 500,
            Task::Graph => 200,
        })
    }

    pub fn patience(&self, task: Task) -> usize {
        self.patience.unwrap_or(match task {
            Task::Node => 200,
            Task::Graph => 100,
        })
    }

    pub fn validate(&self, task: Task) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let geo = self.geometry_context()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.weight_decay >= 0.0 && self.c >= 0.0 && self.reeig_eps > 0.0) {
            return bad("weight_decay and c must be non-negative, reeig_eps positive".into());
        }
        if self.patience(task) > self.max_epochs(task) {
            return bad(format!("patience {} exceeds max_epochs {}", self.patience(task), self.max_epochs(task)));
        }
        if self.max_epochs(task) == 0 || self.num_layers == 0 || self.batch_size == 0 {
            return bad("max_epochs, num_layers and batch_size must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("no seeds given".into());
        }
        if self.classifier == ClassifierKind::SvmMm && !geo.is_spd() {
            return bad("svm-mm requires the spd geometry".into());
        }
        Ok(())
    }

    /// Stable identifier of everything that affects a run except the seed
    /// list and output location: the first 16 hex digits of a SHA-256 over
    /// the canonical JSON form.
    pub fn hash(&self) -> String {
        let mut key = self.clone();
        key.seeds.clear();
        key.out.clear();
        let json = serde_json::to_string(&key).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }
}

/// Seed of the random stream for one run of a configuration.
pub fn derive_seed(config_hash: &str, seed: u64) -> u64 {
    let digest = Sha256::digest(format!("{config_hash}:{seed}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// A loaded dataset of either task.
#[derive(Debug, Clone)]
pub enum Dataset {
    Node(Graph),
    Graphs(TuDataset),
}

impl Dataset {
    pub fn task(&self) -> Task {
        match self {
            Dataset::Node(_) => Task::Node,
            Dataset::Graphs(_) => Task::Graph,
        }
    }
}

/// Loads `config.dataset`, detecting the task from the directory layout
/// unless it is set.
pub fn load_dataset(config: &TrainConfig) -> Result<Dataset, HarnessError> {
    let dir = Path::new(&config.dataset);
    if config.dataset.is_empty() {
        return Err(HarnessError::Config("no dataset directory given".into()));
    }
    let task = match config.task {
        Some(t) => t,
        None if dir.join("graph.edges").exists() => Task::Node,
        None => Task::Graph,
    };
    Ok(match task {
        Task::Node => Dataset::Node(data::load_node_dataset(dir)?),
        Task::Graph => Dataset::Graphs(data::load_tudataset(dir, config.zscore)?),
    })
}
