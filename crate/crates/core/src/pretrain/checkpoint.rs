use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dgnn::MemoryStore;
use crate::graph::Time;

use super::PretrainError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Where a snapshot was taken. `step` counts batches over all epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapturePoint {
    pub epoch: usize,
    pub batch: usize,
    pub step: usize,
    /// Timestamp of the last event folded into the snapshot.
    pub time: Time,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckpointSequence {
    pub snapshots: Vec<MemoryStore>,
    pub schedule: Vec<CapturePoint>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    #[serde(flatten)]
    point: CapturePoint,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    count: usize,
    checkpoints: Vec<ManifestEntry>,
}

/// Steps (0-based, over all epochs) after which the `count` snapshots are
/// taken: `round((k + 1) * total / count) - 1`, so the last one closes the run.
pub fn capture_steps(total_steps: usize, count: usize) -> Result<Vec<usize>, PretrainError> {
    if count > total_steps {
        return Err(PretrainError::TooManyCheckpoints {
            checkpoints: count,
            steps: total_steps,
        });
    }
    Ok((0..count)
        .map(|k| (((k + 1) * total_steps) as f64 / count as f64).round() as usize - 1)
        .collect())
}

impl CheckpointSequence {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn push(&mut self, snapshot: MemoryStore, point: CapturePoint) {
        self.snapshots.push(snapshot);
        self.schedule.push(point);
    }

    fn file_name(k: usize) -> String {
        format!("checkpoint_{k:03}.cmem")
    }

    /// Writes one `CMEM` file per snapshot plus [`MANIFEST_FILE`] into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), PretrainError> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.len());
        for (k, (snap, point)) in self.snapshots.iter().zip(&self.schedule).enumerate() {
            let file = Self::file_name(k);
            snap.save(&dir.join(&file), point.time)?;
            entries.push(ManifestEntry {
                file,
                point: point.clone(),
            });
        }
        let manifest = Manifest {
            count: entries.len(),
            checkpoints: entries,
        };
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, PretrainError> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
        if manifest.count != manifest.checkpoints.len() {
            return Err(PretrainError::Manifest(format!(
                "count {} but {} entries",
                manifest.count,
                manifest.checkpoints.len()
            )));
        }
        let mut seq = Self::default();
        for entry in manifest.checkpoints {
            let (snap, _) = MemoryStore::load(&dir.join(&entry.file))?;
            if let Some(first) = seq.snapshots.first() {
                if first.num_nodes() != snap.num_nodes() || first.dim() != snap.dim() {
                    return Err(PretrainError::Manifest(format!("{} has a different shape", entry.file)));
                }
            }
            seq.push(snap, entry.point);
        }
        Ok(seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_uniform() {
        for total in [10, 11, 37, 100, 257] {
            for count in 1..=10.min(total) {
                let steps = capture_steps(total, count).unwrap();
                assert_eq!(steps.len(), count);
                assert_eq!(*steps.last().unwrap(), total - 1);
                let ideal = total as f64 / count as f64;
                for (k, &s) in steps.iter().enumerate() {
                    let exact = (k + 1) as f64 * ideal - 1.0;
                    assert!((s as f64 - exact).abs() <= 0.5 + 1e-9);
                }
                assert!(steps.windows(2).all(|w| w[0] < w[1]));
            }
        }
        assert!(capture_steps(5, 0).unwrap().is_empty());
        assert!(matches!(
            capture_steps(5, 6),
            Err(PretrainError::TooManyCheckpoints { .. })
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut seq = CheckpointSequence::default();
        for k in 0..3 {
            let mut m = MemoryStore::new(4, 2);
            m.set(1, &[k as f64, -0.5], 2.0 + k as f64).unwrap();
            seq.push(
                m,
                CapturePoint {
                    epoch: 0,
                    batch: k,
                    step: k,
                    time: 2.0 + k as f64,
                },
            );
        }
        seq.save(dir.path()).unwrap();
        let back = CheckpointSequence::load(dir.path()).unwrap();
        assert_eq!(back, seq);
    }
}
