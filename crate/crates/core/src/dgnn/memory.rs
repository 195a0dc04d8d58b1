//! Per-node memory states.
//!
//! Checkpoint layout, little-endian:
//!
//! ```text
//! magic "CMEM" | version u32 | num_nodes u64 | dim u64 | timestamp f64
//! num_nodes x dim f64 (row-major states) | num_nodes x f64 (last update times)
//! ```

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::graph::{NodeId, Time};
use crate::tensor::Tensor;

use super::DgnnError;

pub const MEMORY_MAGIC: &[u8; 4] = b"CMEM";
pub const MEMORY_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryStore {
    states: Tensor,
    last_update: Vec<Time>,
}

impl MemoryStore {
    /// All-zero states, last updated at time 0.
    pub fn new(num_nodes: usize, dim: usize) -> Self {
        Self {
            states: Tensor::zeros(num_nodes, dim),
            last_update: vec![0.0; num_nodes],
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.states.rows()
    }

    pub fn dim(&self) -> usize {
        self.states.cols()
    }

    pub fn states(&self) -> &Tensor {
        &self.states
    }

    pub fn state(&self, node: NodeId) -> &[f64] {
        self.states.row_slice(node as usize)
    }

    pub fn last_update(&self, node: NodeId) -> Time {
        self.last_update[node as usize]
    }

    /// Rows of `nodes` stacked into a matrix.
    pub fn gather(&self, nodes: &[NodeId]) -> Tensor {
        let d = self.dim();
        let mut data = Vec::with_capacity(nodes.len() * d);
        for &n in nodes {
            data.extend_from_slice(self.state(n));
        }
        Tensor::new(nodes.len(), d, data).expect("rows of width dim")
    }

    /// Overwrites one row; `t` must not precede the node's last update.
    pub fn set(&mut self, node: NodeId, state: &[f64], t: Time) -> Result<(), DgnnError> {
        let last = self.last_update(node);
        if t < last {
            return Err(DgnnError::OutOfOrder { node, time: t, last_update: last });
        }
        self.states.row_slice_mut(node as usize).copy_from_slice(state);
        self.last_update[node as usize] = t;
        Ok(())
    }

    /// Keeps the states but sets every last-update time back to 0, for a
    /// new chronological pass over the same events.
    pub fn reset_last_update(&mut self) {
        self.last_update.iter_mut().for_each(|t| *t = 0.0);
    }

    /// Grows the node space with zero rows.
    pub fn ensure_nodes(&mut self, num_nodes: usize) {
        if num_nodes > self.num_nodes() {
            let d = self.dim();
            let mut data = std::mem::replace(&mut self.states, Tensor::zeros(0, 0)).into_data();
            data.resize(num_nodes * d, 0.0);
            self.states = Tensor::new(num_nodes, d, data).expect("resized");
            self.last_update.resize(num_nodes, 0.0);
        }
    }

    pub fn write_to(&self, w: &mut impl Write, timestamp: Time) -> Result<(), DgnnError> {
        w.write_all(MEMORY_MAGIC)?;
        w.write_all(&MEMORY_VERSION.to_le_bytes())?;
        w.write_all(&(self.num_nodes() as u64).to_le_bytes())?;
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        w.write_all(&timestamp.to_le_bytes())?;
        for x in self.states.data().iter().chain(&self.last_update) {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    /// Returns the memory and the checkpoint timestamp.
    pub fn read_from(r: &mut impl Read) -> Result<(Self, Time), DgnnError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MEMORY_MAGIC {
            return Err(DgnnError::Format("bad memory checkpoint magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != MEMORY_VERSION {
            return Err(DgnnError::Format(format!("unsupported memory checkpoint version {version}")));
        }
        let mut b8 = [0u8; 8];
        let mut next = |r: &mut dyn Read| -> Result<[u8; 8], DgnnError> {
            r.read_exact(&mut b8)?;
            Ok(b8)
        };
        let n = u64::from_le_bytes(next(r)?) as usize;
        let d = u64::from_le_bytes(next(r)?) as usize;
        let timestamp = f64::from_le_bytes(next(r)?);
        let mut states = Vec::with_capacity((n * d).min(1 << 24));
        for _ in 0..n * d {
            states.push(f64::from_le_bytes(next(r)?));
        }
        let mut last_update = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            last_update.push(f64::from_le_bytes(next(r)?));
        }
        let states = Tensor::new(n, d, states)?;
        Ok((Self { states, last_update }, timestamp))
    }

    pub fn save(&self, path: &Path, timestamp: Time) -> Result<(), DgnnError> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w, timestamp)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Time), DgnnError> {
        Self::read_from(&mut BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_at_zero() {
        let m = MemoryStore::new(3, 4);
        assert!(m.states().data().iter().all(|&x| x == 0.0));
        assert_eq!(m.last_update(2), 0.0);
    }

    #[test]
    fn set_touches_one_row_and_rejects_going_back() {
        let mut m = MemoryStore::new(3, 2);
        m.set(1, &[1.0, 2.0], 5.0).unwrap();
        assert_eq!(m.state(0), &[0.0, 0.0]);
        assert_eq!(m.state(1), &[1.0, 2.0]);
        assert_eq!(m.state(2), &[0.0, 0.0]);
        assert!(matches!(m.set(1, &[0.0, 0.0], 4.0), Err(DgnnError::OutOfOrder { .. })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = MemoryStore::new(2, 3);
        m.set(0, &[0.5, -1.0, 2.0], 3.0).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf, 7.5).unwrap();
        assert_eq!(&buf[..4], b"CMEM");
        assert_eq!(buf.len(), 4 + 4 + 8 + 8 + 8 + 8 * 6 + 8 * 2);
        let (back, ts) = MemoryStore::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(ts, 7.5);
    }

    #[test]
    fn grows_with_zero_rows() {
        let mut m = MemoryStore::new(1, 2);
        m.set(0, &[1.0, 1.0], 1.0).unwrap();
        m.ensure_nodes(3);
        assert_eq!(m.num_nodes(), 3);
        assert_eq!(m.state(0), &[1.0, 1.0]);
        assert_eq!(m.state(2), &[0.0, 0.0]);
    }
}
