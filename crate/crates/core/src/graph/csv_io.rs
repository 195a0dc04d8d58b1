//! CSV ingest and export of event logs.
//!
//! Expected header: `src,dst,timestamp[,label][,f0..fk]`. Node ids are
//! arbitrary strings, densified in order of first appearance in the
//! time-sorted log so that export followed by ingest is the identity.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Event, GraphError, NodeId, TemporalGraph};

/// Column names for the required and optional fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub src: String,
    pub dst: String,
    pub timestamp: String,
    pub label: String,
    /// Feature columns are `<prefix>0`, `<prefix>1`, ...
    pub feature_prefix: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            src: "src".into(),
            dst: "dst".into(),
            timestamp: "timestamp".into(),
            label: "label".into(),
            feature_prefix: "f".into(),
        }
    }
}

/// Dense id -> original id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IdMap(pub Vec<String>);

impl IdMap {
    /// Identity map `"0", "1", ...` for generated graphs.
    pub fn identity(num_nodes: usize) -> Self {
        Self((0..num_nodes).map(|i| i.to_string()).collect())
    }

    pub fn original(&self, node: NodeId) -> Option<&str> {
        self.0.get(node as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ingested {
    pub graph: TemporalGraph,
    pub ids: IdMap,
    /// Rows dropped because `src == dst`.
    pub skipped_self_loops: usize,
}

pub fn ingest_csv(path: &Path, columns: &ColumnMap) -> Result<Ingested, GraphError> {
    let file = std::fs::File::open(path)?;
    read_csv(file, columns)
}

pub fn read_csv(reader: impl Read, columns: &ColumnMap) -> Result<Ingested, GraphError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Ok(Ingested {
            graph: TemporalGraph::default(),
            ids: IdMap::default(),
            skipped_self_loops: 0,
        });
    }
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let required = |name: &str| find(name).ok_or_else(|| GraphError::MissingColumn(name.to_string()));
    let (src_col, dst_col, ts_col) = (
        required(&columns.src)?,
        required(&columns.dst)?,
        required(&columns.timestamp)?,
    );
    let label_col = find(&columns.label);
    let mut feature_cols = Vec::new();
    while let Some(c) = find(&format!("{}{}", columns.feature_prefix, feature_cols.len())) {
        feature_cols.push(c);
    }

    // (src, dst, timestamp, label, features) with string ids
    let mut rows: Vec<(String, String, f64, Option<bool>, Vec<f64>)> = Vec::new();
    let mut skipped_self_loops = 0;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |c: usize| {
            record
                .get(c)
                .map(str::trim)
                .ok_or_else(|| GraphError::Malformed {
                    line,
                    reason: format!("missing column {c}"),
                })
        };
        let src = field(src_col)?.to_string();
        let dst = field(dst_col)?.to_string();
        let ts_raw = field(ts_col)?;
        let timestamp: f64 = ts_raw.parse().map_err(|_| GraphError::Malformed {
            line,
            reason: format!("timestamp {ts_raw:?} is not a number"),
        })?;
        if !timestamp.is_finite() {
            return Err(GraphError::Malformed {
                line,
                reason: format!("timestamp {ts_raw:?} is not finite"),
            });
        }
        if timestamp < 0.0 {
            return Err(GraphError::NegativeTimestamp { line, timestamp });
        }
        if src.is_empty() || dst.is_empty() {
            return Err(GraphError::Malformed {
                line,
                reason: "empty node id".into(),
            });
        }
        let label = match label_col {
            None => None,
            Some(c) => parse_label(field(c)?).map_err(|reason| GraphError::Malformed { line, reason })?,
        };
        let mut features = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let raw = field(c)?;
            features.push(raw.parse().map_err(|_| GraphError::Malformed {
                line,
                reason: format!("feature {raw:?} is not a number"),
            })?);
        }
        if src == dst {
            skipped_self_loops += 1;
            log::warn!("line {line}: self-loop on {src:?} skipped");
            continue;
        }
        rows.push((src, dst, timestamp, label, features));
    }

    rows.sort_by(|a, b| a.2.total_cmp(&b.2));
    let mut dense: HashMap<String, NodeId> = HashMap::new();
    let mut ids = Vec::new();
    let mut intern = |s: String| -> NodeId {
        *dense.entry(s).or_insert_with_key(|k| {
            ids.push(k.clone());
            (ids.len() - 1) as NodeId
        })
    };
    let mut events = Vec::with_capacity(rows.len());
    for (src, dst, timestamp, label, features) in rows {
        let src = intern(src);
        let dst = intern(dst);
        events.push(Event {
            src,
            dst,
            timestamp,
            label,
            features,
        });
    }
    let mut graph = TemporalGraph::with_nodes(ids.len());
    for e in events {
        graph.push(e)?;
    }
    Ok(Ingested {
        graph,
        ids: IdMap(ids),
        skipped_self_loops,
    })
}

fn parse_label(raw: &str) -> Result<Option<bool>, String> {
    match raw {
        "" => Ok(None),
        "0" | "false" => Ok(Some(false)),
        "1" | "true" => Ok(Some(true)),
        other => Err(format!("label {other:?} is not binary")),
    }
}

/// Writes the log with original ids, in the layout [`read_csv`] accepts.
pub fn write_csv(graph: &TemporalGraph, ids: &IdMap, writer: impl Write) -> Result<(), GraphError> {
    let mut w = csv::Writer::from_writer(writer);
    let labelled = graph.has_labels();
    let mut header = vec!["src".to_string(), "dst".into(), "timestamp".into()];
    if labelled {
        header.push("label".into());
    }
    header.extend((0..graph.feature_width()).map(|k| format!("f{k}")));
    w.write_record(&header)?;
    let name = |n: NodeId| ids.original(n).map_or_else(|| n.to_string(), str::to_string);
    for e in graph.events() {
        let mut rec = vec![name(e.src), name(e.dst), e.timestamp.to_string()];
        if labelled {
            rec.push(match e.label {
                None => String::new(),
                Some(true) => "1".into(),
                Some(false) => "0".into(),
            });
        }
        rec.extend(e.features.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
