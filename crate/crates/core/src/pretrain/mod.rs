//! Contrastive pre-training: temporal and structural triplet losses on
//! memory readouts plus an auxiliary link-prediction loss, trained over the
//! event log in chronological mini-batches with periodic memory snapshots.

mod checkpoint;
mod loss;
mod model;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::dgnn::DgnnError;
use crate::graph::GraphError;
use crate::sampler::SamplerError;
use crate::tensor::{OptimizerKind, TensorError};

pub use checkpoint::{capture_steps, CapturePoint, CheckpointSequence, MANIFEST_FILE};
pub use loss::{check_beta, combined_loss, contrast_loss_sum, readout, tlp_loss, triplet_value};
pub use model::{sample_negatives, BatchLoss, LinkHead, PretrainModel};
pub use trainer::{pretrain, read_log, write_log, BatchRecord, PretrainOutput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Triplet margin.
    pub alpha: f64,
    /// Weight of the structural term; the temporal term gets `1 - beta`.
    pub beta: f64,
    /// Corrupted destinations per event for link prediction.
    pub negatives_per_edge: usize,
    /// Permits `beta` of exactly 0 or 1.
    pub ablation: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            negatives_per_edge: 1,
            ablation: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), PretrainError> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(PretrainError::Config(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        if self.negatives_per_edge == 0 {
            return Err(PretrainError::Config("negatives_per_edge must be at least 1".into()));
        }
        check_beta(self.beta, self.ablation)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// Number of memory snapshots taken over the whole run.
    pub checkpoints: usize,
    pub seed: u64,
    /// Carry memory states into the next epoch instead of zeroing them.
    pub memory_persist_across_epochs: bool,
    /// Also anchor contrast losses at each event's destination.
    pub anchor_both_endpoints: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 256,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            checkpoints: 10,
            seed: 0,
            memory_persist_across_epochs: false,
            anchor_both_endpoints: false,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), PretrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(PretrainError::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(PretrainError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PretrainError {
    #[error("readout of an empty member set")]
    EmptyReadout,
    #[error("beta {0} outside (0, 1); 0 and 1 need the ablation flag")]
    InvalidBeta(f64),
    #[error("no eligible negative destination for event {ordinal}")]
    NoNegative { ordinal: usize },
    #[error("pretrain config: {0}")]
    Config(String),
    #[error("{checkpoints} checkpoints requested but only {steps} batches run")]
    TooManyCheckpoints { checkpoints: usize, steps: usize },
    #[error("non-finite loss at epoch {epoch} batch {batch}: l_eta {l_eta} l_eps {l_eps} l_tlp {l_tlp}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        l_eta: f64,
        l_eps: f64,
        l_tlp: f64,
    },
    #[error("checkpoint manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Dgnn(#[from] DgnnError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
