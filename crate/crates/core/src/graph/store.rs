use std::ops::Range;

use super::{Event, GraphError, NodeId, Time};

/// One entry of a node's interaction history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborEntry {
    pub node: NodeId,
    pub time: Time,
    /// Position of the originating event in the log.
    pub ordinal: u32,
}

/// Append-only continuous-time dynamic graph.
///
/// Interactions are undirected for neighborhood purposes: an event
/// `(i, j, t)` appears in the history of both `i` and `j`. Histories are
/// sorted by time, ties kept in log order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TemporalGraph {
    events: Vec<Event>,
    adjacency: Vec<Vec<NeighborEntry>>,
    is_destination: Vec<bool>,
    destinations: Vec<NodeId>,
    // nodes in order of their first interaction, with that interaction's time
    activation_nodes: Vec<NodeId>,
    activation_times: Vec<Time>,
    activation_rank: Vec<Option<u32>>,
    feature_width: usize,
}

impl TemporalGraph {
    pub fn with_nodes(num_nodes: usize) -> Self {
        Self {
            adjacency: vec![Vec::new(); num_nodes],
            is_destination: vec![false; num_nodes],
            activation_rank: vec![None; num_nodes],
            ..Self::default()
        }
    }

    /// Builds a graph from unordered events; sorting is stable on timestamp.
    pub fn from_events(num_nodes: usize, mut events: Vec<Event>) -> Result<Self, GraphError> {
        events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        let mut g = Self::with_nodes(num_nodes);
        for e in events {
            g.push(e)?;
        }
        Ok(g)
    }

    /// Appends an event no earlier than the last one.
    pub fn push(&mut self, event: Event) -> Result<(), GraphError> {
        let ordinal = self.events.len();
        if !event.timestamp.is_finite() || event.timestamp < 0.0 {
            return Err(GraphError::InvalidTimestamp {
                ordinal,
                timestamp: event.timestamp,
            });
        }
        if event.src == event.dst {
            return Err(GraphError::SelfLoop { ordinal, node: event.src });
        }
        if let Some(last) = self.events.last() {
            if event.timestamp < last.timestamp {
                return Err(GraphError::OutOfOrder {
                    ordinal,
                    timestamp: event.timestamp,
                    previous: last.timestamp,
                });
            }
        }
        if ordinal == 0 {
            self.feature_width = event.features.len();
        } else if event.features.len() != self.feature_width {
            return Err(GraphError::FeatureWidth {
                ordinal,
                expected: self.feature_width,
                found: event.features.len(),
            });
        }
        let needed = event.src.max(event.dst) as usize + 1;
        if needed > self.adjacency.len() {
            self.adjacency.resize(needed, Vec::new());
            self.is_destination.resize(needed, false);
            self.activation_rank.resize(needed, None);
        }
        for node in [event.src, event.dst] {
            if self.activation_rank[node as usize].is_none() {
                self.activation_rank[node as usize] = Some(self.activation_nodes.len() as u32);
                self.activation_nodes.push(node);
                self.activation_times.push(event.timestamp);
            }
        }
        let ord = ordinal as u32;
        self.adjacency[event.src as usize].push(NeighborEntry {
            node: event.dst,
            time: event.timestamp,
            ordinal: ord,
        });
        self.adjacency[event.dst as usize].push(NeighborEntry {
            node: event.src,
            time: event.timestamp,
            ordinal: ord,
        });
        if !self.is_destination[event.dst as usize] {
            self.is_destination[event.dst as usize] = true;
            let pos = self.destinations.partition_point(|&d| d < event.dst);
            self.destinations.insert(pos, event.dst);
        }
        self.events.push(event);
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn num_events(&self) -> usize {
        self.events.len()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn event(&self, ordinal: usize) -> &Event {
        &self.events[ordinal]
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    /// Sorted distinct nodes that occur as a destination.
    pub fn destinations(&self) -> &[NodeId] {
        &self.destinations
    }

    pub fn has_labels(&self) -> bool {
        self.events.iter().any(|e| e.label.is_some())
    }

    /// Timestamp just past the last event; every event lies strictly before it.
    pub fn end_time(&self) -> Time {
        self.events.last().map_or(1.0, |e| e.timestamp + 1.0)
    }

    /// Full interaction history of `node` (empty for unknown nodes).
    pub fn history(&self, node: NodeId) -> &[NeighborEntry] {
        self.adjacency.get(node as usize).map_or(&[], Vec::as_slice)
    }

    /// History of `node` strictly before `t`, sorted by time.
    pub fn history_before(&self, node: NodeId, t: Time) -> &[NeighborEntry] {
        let mut probes = 0;
        self.history_before_counted(node, t, &mut probes)
    }

    /// [`history_before`](Self::history_before) that also counts binary-search probes.
    pub fn history_before_counted(&self, node: NodeId, t: Time, probes: &mut usize) -> &[NeighborEntry] {
        let entries = self.history(node);
        &entries[..lower_bound(entries, t, probes)]
    }

    /// `(neighbor, time)` pairs of `node` with time strictly before `t`.
    pub fn neighbors_before(&self, node: NodeId, t: Time) -> Vec<(NodeId, Time)> {
        self.history_before(node, t)
            .iter()
            .map(|e| (e.node, e.time))
            .collect()
    }

    /// Nodes with at least one interaction strictly before `t`, in order of
    /// first interaction.
    pub fn active_nodes_before(&self, t: Time) -> &[NodeId] {
        let n = self.activation_times.partition_point(|&a| a < t);
        &self.activation_nodes[..n]
    }

    /// Position of `node` in the first-interaction order.
    pub fn activation_rank(&self, node: NodeId) -> Option<usize> {
        self.activation_rank.get(node as usize).copied().flatten().map(|r| r as usize)
    }

    /// A graph over the same node space holding only events in `range`.
    pub fn slice(&self, range: Range<usize>) -> Self {
        let mut g = Self::with_nodes(self.num_nodes());
        for e in &self.events[range] {
            g.push(e.clone()).expect("events of a valid graph stay valid");
        }
        g
    }
}

/// Index of the first entry with `time >= t`.
fn lower_bound(entries: &[NeighborEntry], t: Time, probes: &mut usize) -> usize {
    let (mut lo, mut hi) = (0, entries.len());
    while lo < hi {
        *probes += 1;
        let mid = lo + (hi - lo) / 2;
        if entries[mid].time < t {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}
