//! Fusion of pre-training memory snapshots into one evolution vector per node.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::NodeId;
use crate::pretrain::CheckpointSequence;
use crate::tensor::{BoundParams, GruCell, Mlp, ParamStore, Tape, Tensor, Var};

use super::FinetuneError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EieMode {
    /// Downstream embeddings only; snapshots are ignored.
    #[default]
    Full,
    EieMean,
    EieAttn,
    EieGru,
}

impl EieMode {
    pub const ALL: [EieMode; 4] = [Self::Full, Self::EieMean, Self::EieAttn, Self::EieGru];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::EieMean => "eie-mean",
            Self::EieAttn => "eie-attn",
            Self::EieGru => "eie-gru",
        }
    }
}

#[derive(Clone, Debug)]
enum Fuse {
    Mean,
    /// Scores `[S^l ‖ z]` to one logit per snapshot.
    Attn(Mlp),
    Gru(GruCell),
}

/// Fusion plus the two-layer transform applied to the fused vector.
/// Parameter names: `eie.attn.*`, `eie.gru.*`, `eie.mlp.*`.
#[derive(Clone, Debug)]
pub struct EieFuser {
    pub mode: EieMode,
    fuse: Fuse,
    mlp: Mlp,
    memory_dim: usize,
}

impl EieFuser {
    /// `None` for [`EieMode::Full`].
    pub fn new(
        mode: EieMode,
        memory_dim: usize,
        embed_dim: usize,
        hidden: usize,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Option<Self> {
        let d = memory_dim;
        let fuse = match mode {
            EieMode::Full => return None,
            EieMode::EieMean => Fuse::Mean,
            EieMode::EieAttn => Fuse::Attn(Mlp::new(store, "eie.attn", d + embed_dim, d, 1, rng)),
            EieMode::EieGru => Fuse::Gru(GruCell::new(store, "eie.gru", d, d, rng)),
        };
        Some(Self {
            mode,
            fuse,
            mlp: Mlp::new(store, "eie.mlp", d, hidden, d, rng),
            memory_dim: d,
        })
    }

    /// Width of `MLP(EI)`.
    pub fn output_dim(&self) -> usize {
        self.memory_dim
    }

    /// Fused evolution vectors of `nodes`, one row each. Attention needs
    /// the downstream embeddings `z_down` (rows aligned with `nodes`) and
    /// also returns the per-node snapshot weights. Nodes outside the
    /// snapshots get zero rows.
    pub fn fuse(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        seq: &CheckpointSequence,
        nodes: &[NodeId],
        z_down: Option<Var>,
    ) -> Result<(Var, Option<Tensor>), FinetuneError> {
        let Some(first) = seq.snapshots.first() else {
            return Err(FinetuneError::NoCheckpoints);
        };
        let d = self.memory_dim;
        if first.dim() != d {
            return Err(FinetuneError::Config(format!(
                "snapshot width {} but memory width {d}",
                first.dim()
            )));
        }
        let known = first.num_nodes();
        let present: Vec<usize> = (0..nodes.len()).filter(|&k| (nodes[k] as usize) < known).collect();
        let present_nodes: Vec<NodeId> = present.iter().map(|&k| nodes[k]).collect();
        let n = present.len();
        let mut weights = None;

        let fused = if n == 0 {
            None
        } else {
            let snaps: Vec<Var> = seq
                .snapshots
                .iter()
                .map(|s| tape.constant(s.gather(&present_nodes)))
                .collect();
            Some(match &self.fuse {
                Fuse::Mean => {
                    let l = seq.snapshots.len() as f64;
                    let mut acc = Tensor::zeros(n, d);
                    for s in &seq.snapshots {
                        acc.add_assign(&s.gather(&present_nodes));
                    }
                    tape.constant(acc.map(|x| x / l))
                }
                Fuse::Attn(score) => {
                    let z = z_down.ok_or(FinetuneError::MissingEmbeddings)?;
                    let z = tape.gather_rows(z, &present)?;
                    let mut logits = Vec::with_capacity(snaps.len());
                    for &s in &snaps {
                        let input = tape.concat_cols(&[s, z])?;
                        logits.push(score.forward(tape, p, input)?);
                    }
                    let logits = tape.concat_cols(&logits)?;
                    let w = tape.softmax(logits)?;
                    weights = Some(tape.value(w).clone());
                    let ones = tape.constant(Tensor::filled(1, d, 1.0));
                    let mut acc: Option<Var> = None;
                    for (l, &s) in snaps.iter().enumerate() {
                        let col = tape.slice_cols(w, l..l + 1)?;
                        let spread = tape.matmul(col, ones)?;
                        let term = tape.mul(spread, s)?;
                        acc = Some(match acc {
                            Some(a) => tape.add(a, term)?,
                            None => term,
                        });
                    }
                    acc.expect("at least one snapshot")
                }
                Fuse::Gru(cell) => {
                    let mut h = tape.constant(Tensor::zeros(n, d));
                    for &s in &snaps {
                        h = cell.forward(tape, p, s, h)?;
                    }
                    h
                }
            })
        };
        if n == nodes.len() {
            return Ok((fused.expect("nonempty"), weights));
        }
        let zero = tape.constant(Tensor::zeros(1, d));
        let source = match fused {
            Some(f) => tape.concat_rows(&[f, zero])?,
            None => zero,
        };
        let mut pick = vec![n; nodes.len()];
        for (r, &k) in present.iter().enumerate() {
            pick[k] = r;
        }
        Ok((tape.gather_rows(source, &pick)?, weights))
    }

    /// `MLP(EI)`.
    pub fn transform(&self, tape: &mut Tape, p: &BoundParams, ei: Var) -> Result<Var, FinetuneError> {
        Ok(self.mlp.forward(tape, p, ei)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgnn::MemoryStore;
    use crate::pretrain::CapturePoint;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_memory(n: usize, d: usize, rng: &mut ChaCha8Rng) -> MemoryStore {
        let mut m = MemoryStore::new(n, d);
        for k in 0..n {
            let row: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            m.set(k as NodeId, &row, 1.0).unwrap();
        }
        m
    }

    fn sequence(snaps: Vec<MemoryStore>) -> CheckpointSequence {
        let mut seq = CheckpointSequence::default();
        for (k, s) in snaps.into_iter().enumerate() {
            let point = CapturePoint {
                epoch: 0,
                batch: k,
                step: k,
                time: k as f64,
            };
            seq.push(s, point);
        }
        seq
    }

    fn fuser(mode: EieMode, d: usize, dz: usize) -> (EieFuser, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = EieFuser::new(mode, d, dz, d, &mut store, &mut rng).unwrap();
        (f, store)
    }

    fn run(
        f: &EieFuser,
        store: &ParamStore,
        seq: &CheckpointSequence,
        nodes: &[NodeId],
        z: Option<&Tensor>,
    ) -> (Tensor, Option<Tensor>) {
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let z = z.map(|z| tape.constant(z.clone()));
        let (ei, w) = f.fuse(&mut tape, &p, seq, nodes, z).unwrap();
        (tape.value(ei).clone(), w)
    }

    #[test]
    fn full_mode_has_no_fuser() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(EieFuser::new(EieMode::Full, 4, 4, 4, &mut store, &mut rng).is_none());
        assert!(store.is_empty());
    }

    #[test]
    fn single_snapshot_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_memory(5, 3, &mut rng);
        let seq = sequence(vec![s.clone()]);
        let nodes = [4, 0, 2];
        let z = Tensor::filled(3, 2, 0.3);
        for mode in [EieMode::EieMean, EieMode::EieAttn] {
            let (f, store) = fuser(mode, 3, 2);
            let (ei, _) = run(&f, &store, &seq, &nodes, Some(&z));
            assert!(ei.max_abs_diff(&s.gather(&nodes)) < 1e-15, "{mode:?}");
        }
    }

    #[test]
    fn identical_snapshots_mean_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_memory(4, 3, &mut rng);
        let seq = sequence(vec![s.clone(), s.clone(), s.clone()]);
        let (f, store) = fuser(EieMode::EieMean, 3, 2);
        let (ei, _) = run(&f, &store, &seq, &[0, 1, 2, 3], None);
        assert!(ei.max_abs_diff(s.states()) < 1e-15);
    }

    #[test]
    fn mean_matches_naive_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let snaps: Vec<MemoryStore> = (0..4).map(|_| random_memory(3, 2, &mut rng)).collect();
        let seq = sequence(snaps.clone());
        let (f, store) = fuser(EieMode::EieMean, 2, 2);
        let (ei, _) = run(&f, &store, &seq, &[2, 1], None);
        for (r, &node) in [2u32, 1].iter().enumerate() {
            for c in 0..2 {
                let naive: f64 = snaps.iter().map(|s| s.state(node)[c]).sum::<f64>() / 4.0;
                assert!((ei.get(r, c) - naive).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn attention_weights_normalised_and_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let snaps: Vec<MemoryStore> = (0..5).map(|_| random_memory(6, 3, &mut rng)).collect();
        let nodes = [0, 3, 5, 1];
        let z = Tensor::from_rows(&(0..4).map(|k| vec![k as f64 * 0.2, -0.4]).collect::<Vec<_>>()).unwrap();
        let (f, store) = fuser(EieMode::EieAttn, 3, 2);
        let (ei, w) = run(&f, &store, &sequence(snaps.clone()), &nodes, Some(&z));
        let w = w.unwrap();
        assert_eq!(w.shape(), [4, 5]);
        for r in 0..4 {
            assert!((w.row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let mut shuffled = snaps.clone();
        shuffled.rotate_left(2);
        shuffled.swap(0, 3);
        let (ei2, _) = run(&f, &store, &sequence(shuffled), &nodes, Some(&z));
        assert!(ei.max_abs_diff(&ei2) < 1e-12);

        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let err = f.fuse(&mut tape, &p, &sequence(snaps), &nodes, None).unwrap_err();
        assert!(matches!(err, FinetuneError::MissingEmbeddings));
    }

    #[test]
    fn gru_is_order_sensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let snaps: Vec<MemoryStore> = (0..3).map(|_| random_memory(4, 3, &mut rng)).collect();
        let (f, store) = fuser(EieMode::EieGru, 3, 2);
        let (a, _) = run(&f, &store, &sequence(snaps.clone()), &[0, 1, 2, 3], None);
        let mut reversed = snaps;
        reversed.reverse();
        let (b, _) = run(&f, &store, &sequence(reversed), &[0, 1, 2, 3], None);
        assert!(a.max_abs_diff(&b) > 1e-6);
    }

    #[test]
    fn single_snapshot_gru_depends_on_snapshot_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = random_memory(3, 3, &mut rng);
        let (f, store) = fuser(EieMode::EieGru, 3, 2);
        let seq = sequence(vec![s.clone()]);
        let (a, _) = run(&f, &store, &seq, &[0, 1, 2], None);
        let (b, _) = run(&f, &store, &seq, &[0, 1, 2], None);
        assert_eq!(a, b);
        // same snapshot row gives the same fused row, whatever the node
        let mut twin = s.clone();
        twin.set(2, s.state(0), 1.0).unwrap();
        let (c, _) = run(&f, &store, &sequence(vec![twin]), &[0, 2], None);
        assert_eq!(c.row_slice(0), c.row_slice(1));
    }

    #[test]
    fn unseen_nodes_get_zero_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let snaps: Vec<MemoryStore> = (0..2).map(|_| random_memory(3, 2, &mut rng)).collect();
        let seq = sequence(snaps);
        let z = Tensor::filled(3, 2, 0.1);
        for mode in [EieMode::EieMean, EieMode::EieAttn, EieMode::EieGru] {
            let (f, store) = fuser(mode, 2, 2);
            let (ei, _) = run(&f, &store, &seq, &[7, 1, 3], Some(&z));
            assert_eq!(ei.row_slice(0), &[0.0, 0.0]);
            assert_eq!(ei.row_slice(2), &[0.0, 0.0]);
            assert!(ei.row_slice(1).iter().any(|&x| x != 0.0));
            let (all_new, _) = run(&f, &store, &seq, &[5, 9, 4], Some(&z));
            assert!(all_new.data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn empty_sequence_rejected() {
        let (f, store) = fuser(EieMode::EieMean, 2, 2);
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let err = f.fuse(&mut tape, &p, &CheckpointSequence::default(), &[0], None).unwrap_err();
        assert!(matches!(err, FinetuneError::NoCheckpoints));
    }
}
