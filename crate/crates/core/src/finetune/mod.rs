//! Downstream adaptation: a pre-trained (or freshly initialised) encoder is
//! trained on a later graph segment for link prediction or node
//! classification, optionally with pre-training memory snapshots fused into
//! the embeddings.

mod eie;
mod metrics;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::dgnn::DgnnError;
use crate::graph::GraphError;
use crate::pretrain::PretrainError;
use crate::tensor::{OptimizerKind, TensorError};

pub use eie::{EieFuser, EieMode};
pub use metrics::{auc, average_precision, micro_f1};
pub use trainer::{evaluate, finetune, test_metrics, DownstreamModel, FinetuneOutput, Init, MetricsReport, Scores};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    #[default]
    LinkPrediction,
    NodeClassification,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub task: Task,
    pub mode: EieMode,
    /// Hidden width of the transform applied to fused snapshots; defaults
    /// to the memory width.
    pub mlp_hidden: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Chronological train/validation/test proportions.
    pub split: [f64; 3],
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            task: Task::LinkPrediction,
            mode: EieMode::Full,
            mlp_hidden: None,
            epochs: 10,
            batch_size: 200,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            patience: 3,
            split: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<(), FinetuneError> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(FinetuneError::Config("epochs, batch_size and patience must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(FinetuneError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.mlp_hidden == Some(0) {
            return Err(FinetuneError::Config("mlp_hidden must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FinetuneError {
    #[error("ground truth has a single class")]
    SingleClass,
    #[error("metric: {0}")]
    Metric(String),
    #[error("evolution fusion needs at least one memory snapshot")]
    NoCheckpoints,
    #[error("attention fusion needs downstream embeddings")]
    MissingEmbeddings,
    #[error("node classification needs a labelled graph")]
    NoLabels,
    #[error("pre-trained parameters do not match the backbone ({0})")]
    ParamMismatch(String),
    #[error("finetune config: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch} batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error(transparent)]
    Pretrain(#[from] PretrainError),
    #[error(transparent)]
    Dgnn(#[from] DgnnError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
