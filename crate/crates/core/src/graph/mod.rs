//! Continuous-time dynamic graph storage, ingest and splitting.

mod cache;
mod csv_io;
mod event;
mod split;
mod store;
mod synthetic;

pub use cache::{id_map_path, load_cache, read_graph, save_cache, write_graph, GRAPH_MAGIC, GRAPH_VERSION};
pub use csv_io::{ingest_csv, read_csv, write_csv, ColumnMap, IdMap, Ingested};
pub use event::{Event, NodeId, Time};
pub use split::{chrono_split, ChronoSplit};
pub use store::{NeighborEntry, TemporalGraph};
pub use synthetic::{generate_synthetic, GeneratorConfig};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("event {ordinal}: invalid timestamp {timestamp}")]
    InvalidTimestamp { ordinal: usize, timestamp: f64 },
    #[error("event {ordinal}: self-loop on node {node}")]
    SelfLoop { ordinal: usize, node: NodeId },
    #[error("event {ordinal}: timestamp {timestamp} precedes {previous}")]
    OutOfOrder { ordinal: usize, timestamp: f64, previous: f64 },
    #[error("event {ordinal}: {found} features, expected {expected}")]
    FeatureWidth { ordinal: usize, expected: usize, found: usize },
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("line {line}: negative timestamp {timestamp}")]
    NegativeTimestamp { line: u64, timestamp: f64 },
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("split ratios {0:?} must be positive and sum to 1")]
    InvalidRatios(Vec<f64>),
    #[error("{events} events cannot fill {segments} non-empty segments")]
    TooFewEvents { events: usize, segments: usize },
    #[error("generator: {0}")]
    Generator(String),
    #[error("graph cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
