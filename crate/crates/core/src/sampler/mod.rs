//! Contrastive subgraph sampling around an anchor event.
//!
//! Temporal pairs come from a weighted breadth-first walk (recent-biased for
//! positives, old-biased for negatives); structural pairs come from a
//! deterministic most-recent walk around the anchor and around a random other
//! node. Every random draw uses an RNG derived from
//! `(seed, event ordinal, kind, hop, parent)` so results do not depend on
//! evaluation order or threading.

mod plan;
mod probs;
mod walk;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{NodeId, Time};

pub use plan::{destination_key, sample_anchor, sample_event, SamplePlan, SubgraphSet, PLAN_MAGIC, PLAN_VERSION};
pub use probs::{chrono_probs, reverse_chrono_probs};
pub use walk::{sample_eps_dfs, sample_eta_bfs, sample_structural_negative_root};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Neighbors drawn per frontier node in the temporal walk.
    pub eta: usize,
    /// Most-recent neighbors kept per frontier node in the structural walk.
    pub epsilon: usize,
    /// Number of hops.
    pub depth: usize,
    /// Softmax temperature of the temporal sampling probabilities.
    pub tau: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            eta: 20,
            epsilon: 20,
            depth: 2,
            tau: 1.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.eta == 0 || self.epsilon == 0 || self.depth == 0 {
            return Err(SamplerError::InvalidConfig("eta, epsilon and depth must be at least 1".into()));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(SamplerError::InvalidConfig(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Which temporal probability function drives the breadth-first walk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemporalMode {
    Chronological,
    Reverse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubgraphKind {
    TemporalPositive,
    TemporalNegative,
    StructuralPositive,
    StructuralNegative,
}

impl SubgraphKind {
    pub const ALL: [SubgraphKind; 4] = [
        Self::TemporalPositive,
        Self::TemporalNegative,
        Self::StructuralPositive,
        Self::StructuralNegative,
    ];

    fn code(self) -> u64 {
        self as u64
    }
}

/// Parent index of the root member.
pub const NO_PARENT: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Member {
    pub node: NodeId,
    pub hop: u32,
    /// Index of the parent in the member list, [`NO_PARENT`] for the root.
    pub parent: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledSubgraph {
    pub kind: SubgraphKind,
    pub root: NodeId,
    pub anchor_time: Time,
    /// Root first, then sampled occurrences; a node reached through two
    /// parents appears twice.
    pub members: Vec<Member>,
    /// Root had no usable history (or, for structural negatives, no other
    /// node had any).
    pub empty_neighborhood: bool,
}

impl SampledSubgraph {
    pub fn root_only(kind: SubgraphKind, root: NodeId, anchor_time: Time) -> Self {
        Self {
            kind,
            root,
            anchor_time,
            members: vec![Member {
                node: root,
                hop: 0,
                parent: NO_PARENT,
            }],
            empty_neighborhood: true,
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.members.iter().map(|m| m.node)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SamplerError {
    #[error("no neighbors")]
    NoNeighbors,
    #[error("neighbor time {time} is not before cutoff {cutoff}")]
    NotBefore { time: Time, cutoff: Time },
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("no node other than {anchor} has history before {time}")]
    NoEligibleNode { anchor: NodeId, time: Time },
    #[error("sample plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent RNG stream for one `(seed, ordinal, kind, hop, parent)` key.
pub fn keyed_rng(seed: u64, ordinal: u64, kind: SubgraphKind, hop: u32, parent: u32) -> ChaCha8Rng {
    let key = [ordinal, kind.code(), u64::from(hop), u64::from(parent)]
        .into_iter()
        .fold(splitmix(seed), |h, part| splitmix(h ^ part));
    ChaCha8Rng::seed_from_u64(key)
}
