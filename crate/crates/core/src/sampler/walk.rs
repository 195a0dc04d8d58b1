use rand::Rng;

use crate::graph::{NeighborEntry, NodeId, TemporalGraph, Time};

use super::probs::scaled_logits;
use super::{keyed_rng, Member, SampledSubgraph, SamplerConfig, SamplerError, SubgraphKind, TemporalMode, NO_PARENT};

/// Weighted walk of `cfg.depth` hops from `root`, drawing up to `cfg.eta`
/// distinct neighbors per frontier node without replacement.
///
/// Every hop only looks at interactions strictly before `t`. `ordinal`
/// selects the RNG stream (normally the anchor event's position in the log).
pub fn sample_eta_bfs(
    g: &TemporalGraph,
    root: NodeId,
    t: Time,
    cfg: &SamplerConfig,
    mode: TemporalMode,
    ordinal: u64,
) -> SampledSubgraph {
    let kind = match mode {
        TemporalMode::Chronological => SubgraphKind::TemporalPositive,
        TemporalMode::Reverse => SubgraphKind::TemporalNegative,
    };
    let mut sub = SampledSubgraph::root_only(kind, root, t);
    sub.empty_neighborhood = g.history_before(root, t).is_empty();
    let mut frontier = 0..1;
    for hop in 1..=cfg.depth as u32 {
        for parent in frontier.clone() {
            let hist = g.history_before(sub.members[parent].node, t);
            if hist.is_empty() {
                continue;
            }
            let times: Vec<Time> = hist.iter().map(|e| e.time).collect();
            let logits = scaled_logits(&times, t, cfg.tau, mode).expect("history precedes cutoff");
            let mut rng = keyed_rng(cfg.seed, ordinal, kind, hop, parent as u32);
            for node in draw_distinct(hist, logits, cfg.eta, &mut rng) {
                sub.members.push(Member {
                    node,
                    hop,
                    parent: parent as u32,
                });
            }
        }
        frontier = frontier.end..sub.members.len();
    }
    sub
}

/// Successive weighted draws with renormalization over the entries not yet
/// excluded. Drawing a node excludes all of its entries, so repeated
/// interactions add weight but never yield duplicates.
fn draw_distinct(hist: &[NeighborEntry], mut logits: Vec<f64>, count: usize, rng: &mut impl Rng) -> Vec<NodeId> {
    let mut picked = Vec::new();
    while picked.len() < count {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            break;
        }
        // exp relative to the current max: renormalized without underflowing
        let weights: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut choice = None;
        for (k, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                choice = Some(k);
                if u < w {
                    break;
                }
                u -= w;
            }
        }
        let node = hist[choice.expect("a live entry remains")].node;
        picked.push(node);
        for (l, e) in logits.iter_mut().zip(hist) {
            if e.node == node {
                *l = f64::NEG_INFINITY;
            }
        }
    }
    picked
}

/// Up to `k` distinct neighbors of `node` before `t`, most recent first
/// (ties broken by later log position).
fn most_recent(g: &TemporalGraph, node: NodeId, t: Time, k: usize) -> Vec<NodeId> {
    let mut out: Vec<NodeId> = Vec::with_capacity(k);
    for e in g.history_before(node, t).iter().rev() {
        if out.len() == k {
            break;
        }
        if !out.contains(&e.node) {
            out.push(e.node);
        }
    }
    out
}

/// Deterministic walk keeping the `cfg.epsilon` most recent distinct
/// neighbors per node, `cfg.depth` hops deep, members in depth-first order.
pub fn sample_eps_dfs(g: &TemporalGraph, root: NodeId, t: Time, cfg: &SamplerConfig, kind: SubgraphKind) -> SampledSubgraph {
    let mut sub = SampledSubgraph::root_only(kind, root, t);
    sub.members.clear();
    sub.empty_neighborhood = g.history_before(root, t).is_empty();
    // (node, hop, parent) stack; children pushed in reverse so the most
    // recent is expanded first
    let mut stack = vec![(root, 0u32, NO_PARENT)];
    while let Some((node, hop, parent)) = stack.pop() {
        let index = sub.members.len() as u32;
        sub.members.push(Member { node, hop, parent });
        if (hop as usize) < cfg.depth {
            for child in most_recent(g, node, t, cfg.epsilon).into_iter().rev() {
                stack.push((child, hop + 1, index));
            }
        }
    }
    sub
}

/// Uniform draw among nodes with history before `t`, excluding `anchor`.
pub fn sample_structural_negative_root(
    g: &TemporalGraph,
    anchor: NodeId,
    t: Time,
    rng: &mut impl Rng,
) -> Result<NodeId, SamplerError> {
    let active = g.active_nodes_before(t);
    let anchor_rank = g.activation_rank(anchor).filter(|&r| r < active.len());
    let eligible = active.len() - usize::from(anchor_rank.is_some());
    if eligible == 0 {
        return Err(SamplerError::NoEligibleNode { anchor, time: t });
    }
    let mut r = rng.random_range(0..eligible);
    if anchor_rank.is_some_and(|a| r >= a) {
        r += 1;
    }
    Ok(active[r])
}
