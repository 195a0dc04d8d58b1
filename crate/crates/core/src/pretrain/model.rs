use std::ops::Range;

use rand::Rng;

use crate::dgnn::{BackboneConfig, DgnnError, Encoder, Interaction, MemoryStore, MemoryView};
use crate::graph::{NodeId, TemporalGraph, Time};
use crate::sampler::{SampledSubgraph, SubgraphSet};
use crate::tensor::{BoundParams, Linear, Mlp, ParamStore, Tape, Tensor, Var};

use super::loss::{combined_loss_var, contrast_loss_sum, tlp_loss};
use super::{LossConfig, PretrainError};

/// Affinity MLP on `[z_i ‖ z_j]`, one logit per pair.
#[derive(Clone, Debug)]
pub struct LinkHead {
    pub mlp: Mlp,
    /// Width of one side of the input.
    pub side_dim: usize,
}

impl LinkHead {
    pub fn new(store: &mut ParamStore, name: &str, side_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            mlp: Mlp::new(store, name, 2 * side_dim, hidden, 1, rng),
            side_dim,
        }
    }

    pub fn logits(&self, tape: &mut Tape, p: &BoundParams, zi: Var, zj: Var) -> Result<Var, PretrainError> {
        let pair = tape.concat_cols(&[zi, zj])?;
        Ok(self.mlp.forward(tape, p, pair)?)
    }
}

/// Encoder plus the pre-training heads. Parameter names: `encoder.*`,
/// `head.link.*` and, when embedding and memory widths differ,
/// `head.contrast.*` mapping embeddings into memory space.
#[derive(Clone, Debug)]
pub struct PretrainModel {
    pub encoder: Encoder,
    pub link: LinkHead,
    pub contrast: Option<Linear>,
}

/// One batch's losses on the tape, plus the memory view they were computed
/// from (to be committed after the optimizer step).
#[derive(Debug)]
pub struct BatchLoss {
    pub view: MemoryView,
    pub l_eta: Var,
    pub l_eps: Var,
    pub l_tlp: Var,
    pub total: Var,
    pub anchors: usize,
    pub skipped_temporal: usize,
    pub skipped_structural: usize,
}

impl BatchLoss {
    /// `[l_eta, l_eps, l_tlp, total]`.
    pub fn values(&self, tape: &Tape) -> [f64; 4] {
        [self.l_eta, self.l_eps, self.l_tlp, self.total].map(|v| tape.value(v).item())
    }
}

impl PretrainModel {
    pub fn new(config: &BackboneConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self, DgnnError> {
        let encoder = Encoder::new(config, store, rng)?;
        let dz = config.embed_dim;
        let link = LinkHead::new(store, "head.link", dz, dz, rng);
        let contrast =
            (dz != config.memory_dim).then(|| Linear::new(store, "head.contrast", dz, config.memory_dim, rng));
        Ok(Self {
            encoder,
            link,
            contrast,
        })
    }

    /// Applies `pending` to `memory` on the tape, then computes the losses of
    /// the events in `batch`. `sets` holds one subgraph set per contrast
    /// anchor; `negatives` holds `negatives_per_edge` corrupted destinations
    /// per event, event-major.
    #[allow(clippy::too_many_arguments)]
    pub fn step_loss(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        g: &TemporalGraph,
        memory: &MemoryStore,
        pending: &[Interaction],
        batch: Range<usize>,
        sets: &[&SubgraphSet],
        negatives: &[NodeId],
        cfg: &LossConfig,
    ) -> Result<BatchLoss, PretrainError> {
        let k = cfg.negatives_per_edge;
        let events = &g.events()[batch.clone()];
        if negatives.len() != k * events.len() {
            return Err(PretrainError::Config(format!(
                "{} negatives for {} events at {k} per edge",
                negatives.len(),
                events.len()
            )));
        }
        let view = self.encoder.apply_interactions(tape, p, g, memory, pending)?;

        // one embedding call: sources, destinations, negatives, anchors
        let n = events.len();
        let mut nodes: Vec<NodeId> = Vec::with_capacity(2 * n + k * n + sets.len());
        let mut times: Vec<Time> = Vec::with_capacity(nodes.capacity());
        nodes.extend(events.iter().map(|e| e.src));
        nodes.extend(events.iter().map(|e| e.dst));
        nodes.extend_from_slice(negatives);
        times.extend(events.iter().map(|e| e.timestamp));
        times.extend(events.iter().map(|e| e.timestamp));
        times.extend(events.iter().flat_map(|e| std::iter::repeat_n(e.timestamp, k)));
        for s in sets {
            nodes.push(s.temporal_positive.root);
            times.push(s.temporal_positive.anchor_time);
        }
        let z = self.encoder.embed(tape, p, g, memory, &view, &nodes, &times)?;

        let src_rows: Vec<usize> = (0..n).collect();
        let dst_rows: Vec<usize> = (n..2 * n).collect();
        let neg_src_rows: Vec<usize> = (0..n).flat_map(|e| std::iter::repeat_n(e, k)).collect();
        let neg_rows: Vec<usize> = (2 * n..2 * n + k * n).collect();
        let z_src = tape.gather_rows(z, &src_rows)?;
        let z_dst = tape.gather_rows(z, &dst_rows)?;
        let z_neg_src = tape.gather_rows(z, &neg_src_rows)?;
        let z_neg = tape.gather_rows(z, &neg_rows)?;
        let pos = self.link.logits(tape, p, z_src, z_dst)?;
        let neg = self.link.logits(tape, p, z_neg_src, z_neg)?;
        let l_tlp = tlp_loss(tape, pos, neg)?;

        let anchor_base = 2 * n + k * n;
        let usable = |a: &SampledSubgraph, b: &SampledSubgraph| !a.empty_neighborhood && !b.empty_neighborhood;
        let temporal: Vec<usize> = (0..sets.len())
            .filter(|&a| usable(&sets[a].temporal_positive, &sets[a].temporal_negative))
            .collect();
        let structural: Vec<usize> = (0..sets.len())
            .filter(|&a| usable(&sets[a].structural_positive, &sets[a].structural_negative))
            .collect();

        // readouts of every needed subgraph from one gather
        let mut members = Vec::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut push_group = |s: &SampledSubgraph| {
            let start = members.len();
            members.extend(s.nodes());
            groups.push((start..members.len()).collect());
        };
        for &a in &temporal {
            push_group(&sets[a].temporal_positive);
            push_group(&sets[a].temporal_negative);
        }
        for &a in &structural {
            push_group(&sets[a].structural_positive);
            push_group(&sets[a].structural_negative);
        }
        let readouts = if groups.is_empty() {
            None
        } else {
            let states = view.states(tape, memory, &members)?;
            Some(tape.segment_mean(states, &groups)?)
        };

        let anchors = sets.len().max(1) as f64;
        let contrast_term = |tape: &mut Tape, chosen: &[usize], offset: usize| -> Result<Var, PretrainError> {
            let Some(h) = readouts else {
                return Ok(tape.constant(Tensor::scalar(0.0)));
            };
            if chosen.is_empty() {
                return Ok(tape.constant(Tensor::scalar(0.0)));
            }
            let rows: Vec<usize> = chosen.iter().map(|&a| anchor_base + a).collect();
            let za = tape.gather_rows(z, &rows)?;
            let za = match &self.contrast {
                Some(proj) => proj.forward(tape, p, za)?,
                None => za,
            };
            let pos_rows: Vec<usize> = (0..chosen.len()).map(|r| offset + 2 * r).collect();
            let neg_rows: Vec<usize> = (0..chosen.len()).map(|r| offset + 2 * r + 1).collect();
            let h_pos = tape.gather_rows(h, &pos_rows)?;
            let h_neg = tape.gather_rows(h, &neg_rows)?;
            let sum = contrast_loss_sum(tape, za, h_pos, h_neg, cfg.alpha)?;
            Ok(tape.scale(sum, 1.0 / anchors)?)
        };
        let l_eta = contrast_term(tape, &temporal, 0)?;
        let l_eps = contrast_term(tape, &structural, 2 * temporal.len())?;
        let total = combined_loss_var(tape, l_eta, l_eps, l_tlp, cfg.beta)?;
        Ok(BatchLoss {
            view,
            l_eta,
            l_eps,
            l_tlp,
            total,
            anchors: sets.len(),
            skipped_temporal: sets.len() - temporal.len(),
            skipped_structural: sets.len() - structural.len(),
        })
    }
}

/// `per_edge` destinations per event of `batch`, uniform over the graph's
/// destination set and never equal to the true destination.
pub fn sample_negatives(
    g: &TemporalGraph,
    batch: Range<usize>,
    per_edge: usize,
    rng: &mut impl Rng,
) -> Result<Vec<NodeId>, PretrainError> {
    let pool = g.destinations();
    let mut out = Vec::with_capacity(per_edge * batch.len());
    for ordinal in batch {
        let dst = g.event(ordinal).dst;
        if pool.iter().all(|&d| d == dst) {
            return Err(PretrainError::NoNegative { ordinal });
        }
        for _ in 0..per_edge {
            loop {
                let cand = pool[rng.random_range(0..pool.len())];
                if cand != dst {
                    out.push(cand);
                    break;
                }
            }
        }
    }
    Ok(out)
}
