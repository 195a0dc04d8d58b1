use std::collections::HashMap;
use std::ops::Range;

use rand::Rng;

use crate::graph::{Event, NodeId, TemporalGraph, Time};
use crate::tensor::{BoundParams, GruCell, Linear, Mlp, ParamId, ParamStore, RnnCell, Tape, Tensor, Var};

use super::{AggregateKind, BackboneConfig, DgnnError, EmbedKind, MemoryStore, MessageKind, TimeEncoder, UpdaterKind};

/// An interaction as seen by the memory: both endpoints receive a message.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interaction {
    pub src: NodeId,
    pub dst: NodeId,
    pub time: Time,
}

impl From<&Event> for Interaction {
    fn from(e: &Event) -> Self {
        Self {
            src: e.src,
            dst: e.dst,
            time: e.timestamp,
        }
    }
}

#[derive(Clone, Debug)]
enum MessageFn {
    Identity,
    Mlp(Mlp),
    Attention { query: Linear, key: Linear, value: Linear },
}

#[derive(Clone, Debug)]
enum Updater {
    Rnn(RnnCell),
    Gru(GruCell),
}

#[derive(Clone, Debug)]
enum EmbedFn {
    Identity(Linear),
    TimeProjection { drift: ParamId, proj: Linear },
    Attention { query: Linear, key: Linear, value: Linear, merge: Mlp },
}

/// Encoder parameters live in a [`ParamStore`] under the `encoder.` prefix;
/// this struct only holds their ids.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: BackboneConfig,
    pub time: TimeEncoder,
    message: MessageFn,
    updater: Updater,
    embed: EmbedFn,
}

impl Encoder {
    pub fn new(config: &BackboneConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self, DgnnError> {
        config.validate()?;
        let (d, dz, dt) = (config.memory_dim, config.embed_dim, config.time_dim);
        let time = TimeEncoder::new(store, "encoder.time", dt, config.time_scale);
        let message = match config.message {
            MessageKind::Identity => MessageFn::Identity,
            MessageKind::Mlp => MessageFn::Mlp(Mlp::new(store, "encoder.message", 2 * d + dt, d, d, rng)),
            MessageKind::Attention => MessageFn::Attention {
                query: Linear::new(store, "encoder.message.query", d, d, rng),
                key: Linear::new(store, "encoder.message.key", d, d, rng),
                value: Linear::new(store, "encoder.message.value", d, d, rng),
            },
        };
        let msg_dim = match config.message {
            MessageKind::Mlp => d,
            _ => 2 * d + dt,
        };
        let updater = match config.updater {
            UpdaterKind::Rnn => Updater::Rnn(RnnCell::new(store, "encoder.memory", msg_dim, d, rng)),
            UpdaterKind::Gru => Updater::Gru(GruCell::new(store, "encoder.memory", msg_dim, d, rng)),
        };
        let embed = match config.embed {
            EmbedKind::Identity => EmbedFn::Identity(Linear::new(store, "encoder.embed", d, dz, rng)),
            EmbedKind::TimeProjection => EmbedFn::TimeProjection {
                drift: store.add_zeros("encoder.embed.drift", 1, d),
                proj: Linear::new(store, "encoder.embed", d, dz, rng),
            },
            EmbedKind::Attention => EmbedFn::Attention {
                query: Linear::new(store, "encoder.embed.query", d + dt, d, rng),
                key: Linear::new(store, "encoder.embed.key", d + dt, d, rng),
                value: Linear::new(store, "encoder.embed.value", d + dt, d, rng),
                merge: Mlp::new(store, "encoder.embed.merge", 2 * d, dz, dz, rng),
            },
        };
        Ok(Self {
            config: config.clone(),
            time,
            message,
            updater,
            embed,
        })
    }

    pub fn memory_dim(&self) -> usize {
        self.config.memory_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn message_dim(&self) -> usize {
        match self.message {
            MessageFn::Mlp(_) => self.config.memory_dim,
            _ => 2 * self.config.memory_dim + self.config.time_dim,
        }
    }

    /// The last `embed_degree` interactions of `node` before `t`, most recent last.
    fn recent<'g>(&self, g: &'g TemporalGraph, node: NodeId, t: Time) -> &'g [crate::graph::NeighborEntry] {
        let hist = g.history_before(node, t);
        &hist[hist.len().saturating_sub(self.config.embed_degree)..]
    }

    /// One message row per `(receiver, counterpart, time)`, read from the
    /// committed memory; elapsed time is measured from the receiver's last
    /// update.
    pub fn compute_messages(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        g: &TemporalGraph,
        memory: &MemoryStore,
        triples: &[(NodeId, NodeId, Time)],
    ) -> Result<Var, DgnnError> {
        for &(i, j, t) in triples {
            for n in [i, j] {
                if n as usize >= memory.num_nodes() {
                    return Err(DgnnError::UnknownNode {
                        node: n,
                        num_nodes: memory.num_nodes(),
                    });
                }
            }
            let last = memory.last_update(i);
            if t < last {
                return Err(DgnnError::OutOfOrder {
                    node: i,
                    time: t,
                    last_update: last,
                });
            }
        }
        let receivers: Vec<NodeId> = triples.iter().map(|x| x.0).collect();
        let others: Vec<NodeId> = triples.iter().map(|x| x.1).collect();
        let dts: Vec<f64> = triples.iter().map(|&(i, _, t)| t - memory.last_update(i)).collect();
        let own = tape.constant(memory.gather(&receivers));
        let phi = self.time.encode(tape, p, &dts)?;
        let other = match &self.message {
            MessageFn::Identity | MessageFn::Mlp(_) => tape.constant(memory.gather(&others)),
            MessageFn::Attention { query, key, value } => {
                // counterpart attends over itself and its recent neighbors
                let mut pool = Vec::new();
                let mut segments = Vec::with_capacity(triples.len());
                for &(_, j, t) in triples {
                    let start = pool.len();
                    pool.push(j);
                    pool.extend(self.recent(g, j, t).iter().map(|e| e.node));
                    segments.push(start..pool.len());
                }
                let q_in = tape.constant(memory.gather(&others));
                let kv_in = tape.constant(memory.gather(&pool));
                let q = query.forward(tape, p, q_in)?;
                let k = key.forward(tape, p, kv_in)?;
                let v = value.forward(tape, p, kv_in)?;
                tape.scaled_dot_attention(q, k, v, &segments)?.0
            }
        };
        let raw = tape.concat_cols(&[own, other, phi])?;
        Ok(match &self.message {
            MessageFn::Mlp(mlp) => mlp.forward(tape, p, raw)?,
            _ => raw,
        })
    }

    /// Recurrent step `state' = Mem(state, message)` on stacked rows.
    pub fn update(&self, tape: &mut Tape, p: &BoundParams, message: Var, state: Var) -> Result<Var, DgnnError> {
        Ok(match &self.updater {
            Updater::Rnn(cell) => cell.forward(tape, p, message, state)?,
            Updater::Gru(cell) => cell.forward(tape, p, message, state)?,
        })
    }

    /// Messages of `events` (time-ordered) applied to the committed memory on
    /// the tape. Nothing is written back until [`MemoryView::commit`].
    pub fn apply_interactions(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        g: &TemporalGraph,
        memory: &MemoryStore,
        events: &[Interaction],
    ) -> Result<MemoryView, DgnnError> {
        if events.is_empty() {
            return Ok(MemoryView::default());
        }
        let mut triples = Vec::with_capacity(2 * events.len());
        for e in events {
            triples.push((e.src, e.dst, e.time));
            triples.push((e.dst, e.src, e.time));
        }
        let msgs = self.compute_messages(tape, p, g, memory, &triples)?;

        let mut view = MemoryView::default();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (k, &(i, _, t)) in triples.iter().enumerate() {
            let u = *view.index.entry(i).or_insert_with(|| {
                view.nodes.push(i);
                view.last_update.push(t);
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[u].push(k);
            view.last_update[u] = view.last_update[u].max(t);
        }
        let prev = tape.constant(memory.gather(&view.nodes));
        let states = match self.config.aggregate {
            AggregateKind::None => self.sequential_update(tape, p, msgs, prev, &groups)?,
            kind => {
                let times: Vec<Time> = triples.iter().map(|x| x.2).collect();
                let agg = aggregate_messages(tape, kind, msgs, &times, &groups)?;
                self.update(tape, p, agg, prev)?
            }
        };
        view.states = Some(states);
        Ok(view)
    }

    /// Applies each node's messages one after another in time order.
    fn sequential_update(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        msgs: Var,
        prev: Var,
        groups: &[Vec<usize>],
    ) -> Result<Var, DgnnError> {
        let n = groups.len();
        let rounds = groups.iter().map(Vec::len).max().unwrap_or(0);
        let mut current = prev;
        for r in 0..rounds {
            let active: Vec<usize> = (0..n).filter(|&u| groups[u].len() > r).collect();
            let msg_rows: Vec<usize> = active.iter().map(|&u| groups[u][r]).collect();
            let m = tape.gather_rows(msgs, &msg_rows)?;
            let h = if active.len() == n { current } else { tape.gather_rows(current, &active)? };
            let next = self.update(tape, p, m, h)?;
            current = if active.len() == n {
                next
            } else {
                let both = tape.concat_rows(&[current, next])?;
                let mut pick: Vec<usize> = (0..n).collect();
                for (pos, &u) in active.iter().enumerate() {
                    pick[u] = n + pos;
                }
                tape.gather_rows(both, &pick)?
            };
        }
        Ok(current)
    }

    /// Embeddings `z` for `(nodes[k], times[k])` from the memory view.
    pub fn embed(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        g: &TemporalGraph,
        memory: &MemoryStore,
        view: &MemoryView,
        nodes: &[NodeId],
        times: &[Time],
    ) -> Result<Var, DgnnError> {
        Ok(self.embed_with_attention(tape, p, g, memory, view, nodes, times)?.0)
    }

    /// As [`embed`](Self::embed), also returning per-query attention weights
    /// for the attention embedding.
    #[allow(clippy::too_many_arguments)]
    pub fn embed_with_attention(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        g: &TemporalGraph,
        memory: &MemoryStore,
        view: &MemoryView,
        nodes: &[NodeId],
        times: &[Time],
    ) -> Result<(Var, Option<Vec<Vec<f64>>>), DgnnError> {
        let own = view.states(tape, memory, nodes)?;
        match &self.embed {
            EmbedFn::Identity(proj) => Ok((proj.forward(tape, p, own)?, None)),
            EmbedFn::TimeProjection { drift, proj } => {
                let mut dts = Vec::with_capacity(nodes.len());
                for (&n, &t) in nodes.iter().zip(times) {
                    let dt = t - view.last_update(memory, n);
                    if !(dt >= 0.0) {
                        return Err(DgnnError::NegativeTimeDelta(dt));
                    }
                    dts.push(dt / self.config.time_scale);
                }
                let column = tape.constant(Tensor::column(dts));
                let factor = tape.matmul(column, p[*drift])?;
                let factor = tape.add_scalar(factor, 1.0)?;
                let scaled = tape.mul(factor, own)?;
                Ok((proj.forward(tape, p, scaled)?, None))
            }
            EmbedFn::Attention {
                query,
                key,
                value,
                merge,
            } => {
                let mut pool = Vec::new();
                let mut pool_dts = Vec::new();
                let mut segments: Vec<Range<usize>> = Vec::with_capacity(nodes.len());
                for (&n, &t) in nodes.iter().zip(times) {
                    let start = pool.len();
                    for e in self.recent(g, n, t) {
                        pool.push(e.node);
                        pool_dts.push(t - e.time);
                    }
                    segments.push(start..pool.len());
                }
                let zero_dt = vec![0.0; nodes.len()];
                let phi0 = self.time.encode(tape, p, &zero_dt)?;
                let q_in = tape.concat_cols(&[own, phi0])?;
                let q = query.forward(tape, p, q_in)?;
                let (attended, weights) = if pool.is_empty() {
                    let zeros = tape.constant(Tensor::zeros(nodes.len(), self.config.memory_dim));
                    (zeros, vec![Vec::new(); nodes.len()])
                } else {
                    let neigh = view.states(tape, memory, &pool)?;
                    let phi = self.time.encode(tape, p, &pool_dts)?;
                    let kv_in = tape.concat_cols(&[neigh, phi])?;
                    let k = key.forward(tape, p, kv_in)?;
                    let v = value.forward(tape, p, kv_in)?;
                    tape.scaled_dot_attention(q, k, v, &segments)?
                };
                let merged_in = tape.concat_cols(&[attended, own])?;
                Ok((merge.forward(tape, p, merged_in)?, Some(weights)))
            }
        }
    }

    /// Inference helper: applies `events` with frozen parameters and commits.
    pub fn process(
        &self,
        store: &ParamStore,
        g: &TemporalGraph,
        memory: &mut MemoryStore,
        events: &[Interaction],
    ) -> Result<(), DgnnError> {
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let view = self.apply_interactions(&mut tape, &p, g, memory, events)?;
        view.commit(&tape, memory)
    }
}

/// Combines each group's messages into one row: elementwise mean, or the
/// message with the latest time (ties go to the later position).
pub fn aggregate_messages(
    tape: &mut Tape,
    kind: AggregateKind,
    msgs: Var,
    times: &[Time],
    groups: &[Vec<usize>],
) -> Result<Var, DgnnError> {
    if groups.iter().any(Vec::is_empty) {
        return Err(DgnnError::EmptyMessages);
    }
    match kind {
        AggregateKind::Mean => Ok(tape.segment_mean(msgs, groups)?),
        AggregateKind::LastTime => {
            let pick: Vec<usize> = groups
                .iter()
                .map(|g| {
                    g.iter()
                        .copied()
                        .reduce(|best, k| if times[k] >= times[best] { k } else { best })
                        .expect("nonempty")
                })
                .collect();
            Ok(tape.gather_rows(msgs, &pick)?)
        }
        AggregateKind::None => Err(DgnnError::Config("sequential updates are not an aggregation".into())),
    }
}

/// Memory as seen after applying a batch of interactions on the tape:
/// updated rows are tape variables, all other rows come from the committed
/// store.
#[derive(Clone, Debug, Default)]
pub struct MemoryView {
    nodes: Vec<NodeId>,
    index: HashMap<NodeId, usize>,
    states: Option<Var>,
    last_update: Vec<Time>,
}

impl MemoryView {
    /// Nodes whose state differs from the committed store, in first-seen order.
    pub fn updated_nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn updated_states(&self) -> Option<Var> {
        self.states
    }

    pub fn last_update(&self, memory: &MemoryStore, node: NodeId) -> Time {
        match self.index.get(&node) {
            Some(&u) => self.last_update[u],
            None => memory.last_update(node),
        }
    }

    /// Stacked states of `nodes` (repeats allowed).
    pub fn states(&self, tape: &mut Tape, memory: &MemoryStore, nodes: &[NodeId]) -> Result<Var, DgnnError> {
        if let Some(&bad) = nodes.iter().find(|&&n| n as usize >= memory.num_nodes()) {
            return Err(DgnnError::UnknownNode {
                node: bad,
                num_nodes: memory.num_nodes(),
            });
        }
        let Some(updated) = self.states else {
            return Ok(tape.constant(memory.gather(nodes)));
        };
        let n = self.nodes.len();
        let mut rest = Vec::new();
        let mut pick = Vec::with_capacity(nodes.len());
        for &node in nodes {
            match self.index.get(&node) {
                Some(&u) => pick.push(u),
                None => {
                    pick.push(n + rest.len());
                    rest.push(node);
                }
            }
        }
        let source = if rest.is_empty() {
            updated
        } else {
            let fixed = tape.constant(memory.gather(&rest));
            tape.concat_rows(&[updated, fixed])?
        };
        Ok(tape.gather_rows(source, &pick)?)
    }

    /// Writes updated rows (their current tape values) into `memory`.
    pub fn commit(&self, tape: &Tape, memory: &mut MemoryStore) -> Result<(), DgnnError> {
        if let Some(var) = self.states {
            let values = tape.value(var);
            for (u, &node) in self.nodes.iter().enumerate() {
                memory.set(node, values.row_slice(u), self.last_update[u])?;
            }
        }
        Ok(())
    }
}
