//! Precomputed contrastive subgraphs for a range of events.
//!
//! File layout, little-endian:
//!
//! ```text
//! magic "CPLN" | version u32
//! eta u32 | epsilon u32 | depth u32 | tau f64 | seed u64
//! count u64
//! count x { ordinal u64 | 4 x subgraph }          (TP, TN, SP, SN)
//! subgraph = root u64 | anchor_time f64 | empty u8 | len u32 | len x { node u64 | hop u32 | parent u32 }
//! ```

use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;

use crate::graph::{NodeId, TemporalGraph, Time};

use super::walk::{sample_eps_dfs, sample_eta_bfs, sample_structural_negative_root};
use super::{keyed_rng, Member, SampledSubgraph, SamplerConfig, SamplerError, SubgraphKind, TemporalMode, NO_PARENT};

pub const PLAN_MAGIC: &[u8; 4] = b"CPLN";
pub const PLAN_VERSION: u32 = 1;

/// The four contrastive subgraphs for the source node of one event.
#[derive(Clone, Debug, PartialEq)]
pub struct SubgraphSet {
    pub ordinal: u64,
    pub temporal_positive: SampledSubgraph,
    pub temporal_negative: SampledSubgraph,
    pub structural_positive: SampledSubgraph,
    pub structural_negative: SampledSubgraph,
}

impl SubgraphSet {
    pub fn as_array(&self) -> [&SampledSubgraph; 4] {
        [
            &self.temporal_positive,
            &self.temporal_negative,
            &self.structural_positive,
            &self.structural_negative,
        ]
    }
}

/// Samples all four subgraphs for event `ordinal` of `g`, anchored at its
/// source node and timestamp.
///
/// When no other node has history yet, the structural negative is the
/// root-only subgraph of the anchor, flagged empty.
pub fn sample_event(g: &TemporalGraph, cfg: &SamplerConfig, ordinal: usize) -> SubgraphSet {
    let e = g.event(ordinal);
    sample_anchor(g, cfg, e.src, e.timestamp, ordinal as u64)
}

/// Key of the destination-anchored set of event `ordinal`.
pub fn destination_key(ordinal: usize) -> u64 {
    ordinal as u64 | 1 << 63
}

/// As [`sample_event`] for an arbitrary anchor; `key` selects the RNG
/// streams and is stored as the set's ordinal.
pub fn sample_anchor(g: &TemporalGraph, cfg: &SamplerConfig, anchor: NodeId, t: Time, key: u64) -> SubgraphSet {
    let mut rng = keyed_rng(cfg.seed, key, SubgraphKind::StructuralNegative, 0, NO_PARENT);
    let structural_negative = match sample_structural_negative_root(g, anchor, t, &mut rng) {
        Ok(other) => sample_eps_dfs(g, other, t, cfg, SubgraphKind::StructuralNegative),
        Err(_) => SampledSubgraph::root_only(SubgraphKind::StructuralNegative, anchor, t),
    };
    SubgraphSet {
        ordinal: key,
        temporal_positive: sample_eta_bfs(g, anchor, t, cfg, TemporalMode::Chronological, key),
        temporal_negative: sample_eta_bfs(g, anchor, t, cfg, TemporalMode::Reverse, key),
        structural_positive: sample_eps_dfs(g, anchor, t, cfg, SubgraphKind::StructuralPositive),
        structural_negative,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePlan {
    pub config: SamplerConfig,
    /// Sorted by ordinal, contiguous.
    pub sets: Vec<SubgraphSet>,
}

impl SamplePlan {
    pub fn build(g: &TemporalGraph, cfg: &SamplerConfig, events: Range<usize>) -> Result<Self, SamplerError> {
        cfg.validate()?;
        if events.is_empty() {
            return Err(SamplerError::Plan("empty event range".into()));
        }
        if events.end > g.num_events() {
            return Err(SamplerError::Plan(format!(
                "range {events:?} exceeds {} events",
                g.num_events()
            )));
        }
        let sets = events.into_par_iter().map(|k| sample_event(g, cfg, k)).collect();
        Ok(Self {
            config: cfg.clone(),
            sets,
        })
    }

    pub fn get(&self, ordinal: usize) -> Option<&SubgraphSet> {
        let first = self.sets.first()?.ordinal as usize;
        self.sets.get(ordinal.checked_sub(first)?)
    }

    pub fn num_subgraphs(&self) -> usize {
        4 * self.sets.len()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), SamplerError> {
        let c = &self.config;
        w.write_all(PLAN_MAGIC)?;
        w.write_all(&PLAN_VERSION.to_le_bytes())?;
        for v in [c.eta, c.epsilon, c.depth] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&c.tau.to_le_bytes())?;
        w.write_all(&c.seed.to_le_bytes())?;
        w.write_all(&(self.sets.len() as u64).to_le_bytes())?;
        for set in &self.sets {
            w.write_all(&set.ordinal.to_le_bytes())?;
            for sub in set.as_array() {
                w.write_all(&u64::from(sub.root).to_le_bytes())?;
                w.write_all(&sub.anchor_time.to_le_bytes())?;
                w.write_all(&[sub.empty_neighborhood as u8])?;
                w.write_all(&(sub.members.len() as u32).to_le_bytes())?;
                for m in &sub.members {
                    w.write_all(&u64::from(m.node).to_le_bytes())?;
                    w.write_all(&m.hop.to_le_bytes())?;
                    w.write_all(&m.parent.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, SamplerError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != PLAN_MAGIC {
            return Err(SamplerError::Plan("bad magic".into()));
        }
        let version = u32::from_le_bytes(read(r)?);
        if version != PLAN_VERSION {
            return Err(SamplerError::Plan(format!("unsupported version {version}")));
        }
        let mut u32_field = || -> Result<usize, SamplerError> { Ok(u32::from_le_bytes(read(r)?) as usize) };
        let (eta, epsilon, depth) = (u32_field()?, u32_field()?, u32_field()?);
        let config = SamplerConfig {
            eta,
            epsilon,
            depth,
            tau: f64::from_le_bytes(read(r)?),
            seed: u64::from_le_bytes(read(r)?),
        };
        let count = u64::from_le_bytes(read(r)?) as usize;
        let mut sets = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let ordinal = u64::from_le_bytes(read(r)?);
            let mut subs = SubgraphKind::ALL.into_iter().map(|kind| read_subgraph(r, kind));
            let mut next = || subs.next().expect("four kinds");
            sets.push(SubgraphSet {
                ordinal,
                temporal_positive: next()?,
                temporal_negative: next()?,
                structural_positive: next()?,
                structural_negative: next()?,
            });
        }
        Ok(Self { config, sets })
    }

    pub fn save(&self, path: &Path) -> Result<(), SamplerError> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SamplerError> {
        Self::read_from(&mut BufReader::new(std::fs::File::open(path)?))
    }
}

fn read<const N: usize>(r: &mut impl Read) -> Result<[u8; N], SamplerError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_subgraph(r: &mut impl Read, kind: SubgraphKind) -> Result<SampledSubgraph, SamplerError> {
    let root = u64::from_le_bytes(read(r)?) as u32;
    let anchor_time = f64::from_le_bytes(read(r)?);
    let [flag] = read::<1>(r)?;
    let len = u32::from_le_bytes(read(r)?) as usize;
    let mut members = Vec::with_capacity(len.min(1 << 16));
    for _ in 0..len {
        members.push(Member {
            node: u64::from_le_bytes(read(r)?) as u32,
            hop: u32::from_le_bytes(read(r)?),
            parent: u32::from_le_bytes(read(r)?),
        });
    }
    if members.first().is_none_or(|m| m.node != root || m.parent != NO_PARENT) {
        return Err(SamplerError::Plan("subgraph does not start at its root".into()));
    }
    Ok(SampledSubgraph {
        kind,
        root,
        anchor_time,
        members,
        empty_neighborhood: flag != 0,
    })
}
