//! Binary graph cache.
//!
//! ```text
//! magic "CTDG" | version u32 | num_nodes u64 | num_events u64 | feature_width u32
//! num_events x { src u64 | dst u64 | timestamp f64 | label u8 (0, 1, 0xFF = none) | feature_width x f64 }
//! ```
//!
//! All integers and floats are little-endian. The id map lives next to the
//! cache as `<cache>.ids.json`.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{Event, GraphError, IdMap, TemporalGraph};

pub const GRAPH_MAGIC: &[u8; 4] = b"CTDG";
pub const GRAPH_VERSION: u32 = 1;
const NO_LABEL: u8 = 0xFF;

pub fn write_graph(graph: &TemporalGraph, w: &mut impl Write) -> Result<(), GraphError> {
    w.write_all(GRAPH_MAGIC)?;
    w.write_all(&GRAPH_VERSION.to_le_bytes())?;
    w.write_all(&(graph.num_nodes() as u64).to_le_bytes())?;
    w.write_all(&(graph.num_events() as u64).to_le_bytes())?;
    w.write_all(&(graph.feature_width() as u32).to_le_bytes())?;
    for e in graph.events() {
        w.write_all(&u64::from(e.src).to_le_bytes())?;
        w.write_all(&u64::from(e.dst).to_le_bytes())?;
        w.write_all(&e.timestamp.to_le_bytes())?;
        let label = match e.label {
            None => NO_LABEL,
            Some(l) => l as u8,
        };
        w.write_all(&[label])?;
        for f in &e.features {
            w.write_all(&f.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_graph(r: &mut impl Read) -> Result<TemporalGraph, GraphError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != GRAPH_MAGIC {
        return Err(GraphError::Cache("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != GRAPH_VERSION {
        return Err(GraphError::Cache(format!("unsupported version {version}")));
    }
    let num_nodes = read_u64(r)? as usize;
    let num_events = read_u64(r)? as usize;
    let width = read_u32(r)? as usize;
    let mut graph = TemporalGraph::with_nodes(num_nodes);
    for _ in 0..num_events {
        let src = read_u64(r)?;
        let dst = read_u64(r)?;
        if src >= num_nodes as u64 || dst >= num_nodes as u64 {
            return Err(GraphError::Cache(format!("node id out of range ({src}, {dst})")));
        }
        let timestamp = f64::from_le_bytes(read_array(r)?);
        let [label] = read_array::<1>(r)?;
        let label = match label {
            NO_LABEL => None,
            0 => Some(false),
            1 => Some(true),
            other => return Err(GraphError::Cache(format!("bad label byte {other}"))),
        };
        let features = (0..width)
            .map(|_| read_array(r).map(f64::from_le_bytes))
            .collect::<Result<_, _>>()?;
        graph.push(Event {
            src: src as u32,
            dst: dst as u32,
            timestamp,
            label,
            features,
        })?;
    }
    Ok(graph)
}

/// Sidecar path holding the id map for `cache`.
pub fn id_map_path(cache: &Path) -> PathBuf {
    let mut name = cache.as_os_str().to_owned();
    name.push(".ids.json");
    PathBuf::from(name)
}

pub fn save_cache(graph: &TemporalGraph, ids: &IdMap, path: &Path) -> Result<(), GraphError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_graph(graph, &mut w)?;
    w.flush()?;
    let json = serde_json::to_vec_pretty(ids).map_err(|e| GraphError::Cache(e.to_string()))?;
    std::fs::write(id_map_path(path), json)?;
    Ok(())
}

/// Loads a cache; a missing id map sidecar yields the identity map.
pub fn load_cache(path: &Path) -> Result<(TemporalGraph, IdMap), GraphError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let graph = read_graph(&mut r)?;
    let ids = match std::fs::read(id_map_path(path)) {
        Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| GraphError::Cache(e.to_string()))?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => IdMap::identity(graph.num_nodes()),
        Err(e) => return Err(e.into()),
    };
    Ok((graph, ids))
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N], GraphError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32(r: &mut impl Read) -> Result<u32, GraphError> {
    read_array(r).map(u32::from_le_bytes)
}

fn read_u64(r: &mut impl Read) -> Result<u64, GraphError> {
    read_array(r).map(u64::from_le_bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_fixed() {
        let g = TemporalGraph::from_events(3, vec![Event::new(0, 2, 1.5).with_label(true)]).unwrap();
        let mut buf = Vec::new();
        write_graph(&g, &mut buf).unwrap();
        assert_eq!(&buf[0..4], b"CTDG");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(buf[16..24].try_into().unwrap()), 1);
        assert_eq!(buf.len(), 4 + 4 + 8 + 8 + 4 + 8 + 8 + 8 + 1);
        assert_eq!(read_graph(&mut buf.as_slice()).unwrap(), g);
    }

    #[test]
    fn file_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ctdg");
        let g = TemporalGraph::from_events(2, vec![Event::new(1, 0, 0.0), Event::new(0, 1, 3.0)]).unwrap();
        let ids = IdMap(vec!["alice".into(), "bob".into()]);
        save_cache(&g, &ids, &path).unwrap();
        assert!(id_map_path(&path).exists());
        assert_eq!(load_cache(&path).unwrap(), (g, ids));
    }

    #[test]
    fn truncated_cache_is_an_error() {
        let g = TemporalGraph::from_events(2, vec![Event::new(1, 0, 0.0)]).unwrap();
        let mut buf = Vec::new();
        write_graph(&g, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_graph(&mut buf.as_slice()).is_err());
    }
}
