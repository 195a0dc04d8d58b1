//! Memory-based dynamic graph encoders.
//!
//! Each backbone is a choice of embedding function, message function,
//! message aggregator and memory updater over a shared per-node memory.

mod encoder;
mod memory;
mod time;

use serde::{Deserialize, Serialize};

use crate::graph::{NodeId, Time};
use crate::tensor::TensorError;

pub use encoder::{Encoder, Interaction, MemoryView};
pub use memory::{MemoryStore, MEMORY_MAGIC, MEMORY_VERSION};
pub use time::TimeEncoder;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Jodie,
    Dyrep,
    #[default]
    Tgn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedKind {
    /// Learned projection of the node's own state.
    Identity,
    /// Own state scaled by `1 + Δt w`, then projected.
    TimeProjection,
    /// Attention over the most recent neighbors' states.
    Attention,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    /// `[s_i ‖ s_j ‖ φ(Δt)]`.
    Identity,
    /// `[s_i ‖ attention over j and j's recent neighbors ‖ φ(Δt)]`.
    Attention,
    /// Two-layer MLP of the identity message.
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregateKind {
    /// Every message is applied in time order.
    None,
    Mean,
    LastTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdaterKind {
    Rnn,
    Gru,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub embed: EmbedKind,
    pub message: MessageKind,
    pub aggregate: AggregateKind,
    pub updater: UpdaterKind,
    pub memory_dim: usize,
    pub embed_dim: usize,
    pub time_dim: usize,
    /// Neighbors used by attention embeddings and attention messages.
    pub embed_degree: usize,
    /// Elapsed times are divided by this before encoding.
    pub time_scale: f64,
}

impl BackboneConfig {
    pub fn preset(backbone: Backbone) -> Self {
        let (embed, message, aggregate, updater) = match backbone {
            Backbone::Jodie => (
                EmbedKind::TimeProjection,
                MessageKind::Identity,
                AggregateKind::None,
                UpdaterKind::Rnn,
            ),
            Backbone::Dyrep => (
                EmbedKind::Identity,
                MessageKind::Attention,
                AggregateKind::None,
                UpdaterKind::Rnn,
            ),
            Backbone::Tgn => (
                EmbedKind::Attention,
                MessageKind::Identity,
                AggregateKind::LastTime,
                UpdaterKind::Gru,
            ),
        };
        Self {
            embed,
            message,
            aggregate,
            updater,
            memory_dim: 100,
            embed_dim: 100,
            time_dim: 100,
            embed_degree: 10,
            time_scale: 1.0,
        }
    }

    pub fn with_dims(mut self, memory_dim: usize, embed_dim: usize, time_dim: usize) -> Self {
        self.memory_dim = memory_dim;
        self.embed_dim = embed_dim;
        self.time_dim = time_dim;
        self
    }

    pub fn validate(&self) -> Result<(), DgnnError> {
        if self.memory_dim == 0 || self.embed_dim == 0 || self.time_dim == 0 {
            return Err(DgnnError::Config("dimensions must be positive".into()));
        }
        if self.embed_degree == 0 {
            return Err(DgnnError::Config("embed_degree must be positive".into()));
        }
        if !(self.time_scale > 0.0) || !self.time_scale.is_finite() {
            return Err(DgnnError::Config("time_scale must be positive".into()));
        }
        Ok(())
    }
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::preset(Backbone::Tgn)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DgnnError {
    #[error("negative or non-finite elapsed time {0}")]
    NegativeTimeDelta(f64),
    #[error("node {node}: time {time} precedes last update {last_update}")]
    OutOfOrder { node: NodeId, time: Time, last_update: Time },
    #[error("no messages to aggregate")]
    EmptyMessages,
    #[error("node {node} outside memory of {num_nodes} nodes")]
    UnknownNode { node: NodeId, num_nodes: usize },
    #[error("backbone config: {0}")]
    Config(String),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
