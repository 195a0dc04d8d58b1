use serde::{Deserialize, Serialize};

/// Dense node identifier, `0..num_nodes`.
pub type NodeId = u32;

/// Event time in abstract units.
pub type Time = f64;

/// One timestamped interaction `(src, dst, t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub src: NodeId,
    pub dst: NodeId,
    pub timestamp: Time,
    /// Dynamic state label of `src` at this time, for node classification.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub features: Vec<f64>,
}

impl Event {
    pub fn new(src: NodeId, dst: NodeId, timestamp: Time) -> Self {
        Self {
            src,
            dst,
            timestamp,
            label: None,
            features: Vec::new(),
        }
    }

    pub fn with_label(mut self, label: bool) -> Self {
        self.label = Some(label);
        self
    }

    /// The endpoint opposite `node`, if `node` takes part in this event.
    pub fn other(&self, node: NodeId) -> Option<NodeId> {
        if self.src == node {
            Some(self.dst)
        } else if self.dst == node {
            Some(self.src)
        } else {
            None
        }
    }
}
