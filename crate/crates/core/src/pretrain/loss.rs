use crate::dgnn::MemoryStore;
use crate::graph::NodeId;
use crate::tensor::{triplet_margin, Tape, TensorError, Var};

use super::PretrainError;

/// Mean of the members' memory rows.
pub fn readout(members: &[NodeId], memory: &MemoryStore) -> Result<Vec<f64>, PretrainError> {
    if members.is_empty() {
        return Err(PretrainError::EmptyReadout);
    }
    let mut out = vec![0.0; memory.dim()];
    for &m in members {
        for (o, x) in out.iter_mut().zip(memory.state(m)) {
            *o += x;
        }
    }
    let n = members.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

/// `max(d_pos - d_neg + alpha, 0)` on scalars.
pub fn triplet_value(d_pos: f64, d_neg: f64, alpha: f64) -> f64 {
    (d_pos - d_neg + alpha).max(0.0)
}

/// Triplet margin loss with Euclidean distance between anchors `z` and the
/// positive/negative readouts, row by row. Returns the sum over rows; the
/// caller divides by the anchor count so skipped anchors weigh zero.
pub fn contrast_loss_sum(tape: &mut Tape, z: Var, h_pos: Var, h_neg: Var, alpha: f64) -> Result<Var, TensorError> {
    let d_pos = tape.euclidean_distance(z, h_pos)?;
    let d_neg = tape.euclidean_distance(z, h_neg)?;
    let per_anchor = triplet_margin(tape, d_pos, d_neg, alpha)?;
    tape.sum(per_anchor)
}

/// Negative-sampling binary cross-entropy in logit form:
/// mean over positives of `-log σ(pos)` plus mean over negatives of
/// `-log(1 - σ(neg))`.
pub fn tlp_loss(tape: &mut Tape, pos_logits: Var, neg_logits: Var) -> Result<Var, TensorError> {
    let pos_targets = vec![1.0; tape.value(pos_logits).len()];
    let neg_targets = vec![0.0; tape.value(neg_logits).len()];
    let pos = tape.bce_with_logits(pos_logits, &pos_targets)?;
    let pos = tape.mean(pos)?;
    let neg = tape.bce_with_logits(neg_logits, &neg_targets)?;
    let neg = tape.mean(neg)?;
    tape.add(pos, neg)
}

/// Checks `beta` against `[0, 1]`; the endpoints need `allow_endpoints`.
pub fn check_beta(beta: f64, allow_endpoints: bool) -> Result<(), PretrainError> {
    let interior = beta > 0.0 && beta < 1.0;
    let endpoint = beta == 0.0 || beta == 1.0;
    if interior || (endpoint && allow_endpoints) {
        Ok(())
    } else {
        Err(PretrainError::InvalidBeta(beta))
    }
}

/// `(1 - beta) l_eta + beta l_eps + l_tlp`.
pub fn combined_loss(l_eta: f64, l_eps: f64, l_tlp: f64, beta: f64) -> f64 {
    (1.0 - beta) * l_eta + beta * l_eps + l_tlp
}

pub(crate) fn combined_loss_var(tape: &mut Tape, l_eta: Var, l_eps: Var, l_tlp: Var, beta: f64) -> Result<Var, TensorError> {
    let a = tape.scale(l_eta, 1.0 - beta)?;
    let b = tape.scale(l_eps, beta)?;
    let ab = tape.add(a, b)?;
    tape.add(ab, l_tlp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn memory_with(rows: &[&[f64]]) -> MemoryStore {
        let mut m = MemoryStore::new(rows.len(), rows[0].len());
        for (k, r) in rows.iter().enumerate() {
            m.set(k as NodeId, r, 0.0).unwrap();
        }
        m
    }

    #[test]
    fn readout_cases() {
        let m = memory_with(&[&[1.0, -2.0], &[-1.0, 2.0], &[4.0, 0.5]]);
        assert_eq!(readout(&[2], &m).unwrap(), vec![4.0, 0.5]);
        assert_eq!(readout(&[0, 1], &m).unwrap(), vec![0.0, 0.0]);
        let mean = readout(&[0, 1, 2], &m).unwrap();
        let mut naive = [0.0; 2];
        for k in 0..3 {
            for (x, v) in naive.iter_mut().zip(m.state(k)) {
                *x += v / 3.0;
            }
        }
        assert!((mean[0] - naive[0]).abs() < 1e-15 && (mean[1] - naive[1]).abs() < 1e-15);
        assert!(matches!(readout(&[], &m), Err(PretrainError::EmptyReadout)));
    }

    #[test]
    fn triplet_values() {
        assert_eq!(triplet_value(1.0, 2.0, 0.5), 0.0);
        assert_eq!(triplet_value(2.0, 1.0, 0.5), 1.5);
        assert_eq!(triplet_value(0.7, 0.7, 0.5), 0.5);
    }

    #[test]
    fn contrast_loss_on_tape() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap());
        let pos = tape.constant(Tensor::from_rows(&[vec![2.0, 0.0], vec![1.0, 2.0]]).unwrap());
        let neg = tape.constant(Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 3.0]]).unwrap());
        // row 0: d_pos 2, d_neg 1 -> 1.5; row 1: d_pos 1, d_neg 2 -> 0
        let l = contrast_loss_sum(&mut tape, z, pos, neg, 0.5).unwrap();
        assert!((tape.value(l).item() - 1.5).abs() < 1e-15);
        let same = contrast_loss_sum(&mut tape, z, pos, pos, 0.5).unwrap();
        assert!((tape.value(same).item() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tlp_cases() {
        let mut tape = Tape::new();
        let zero = tape.constant(Tensor::zeros(3, 1));
        let l = tlp_loss(&mut tape, zero, zero).unwrap();
        assert!((tape.value(l).item() - 2.0 * 2f64.ln()).abs() < 1e-15);
        let pos = tape.constant(Tensor::filled(2, 1, 20.0));
        let neg = tape.constant(Tensor::filled(2, 1, -20.0));
        let l = tlp_loss(&mut tape, pos, neg).unwrap();
        assert!(tape.value(l).item() < 1e-8);
    }

    #[test]
    fn tlp_matches_scalar_bce() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.random_range(1..6);
            let pos: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
            let neg: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
            let sigma = |x: f64| 1.0 / (1.0 + (-x).exp());
            let expected: f64 = pos.iter().zip(&neg).map(|(&p, &q)| -sigma(p).ln() - (1.0 - sigma(q)).ln()).sum::<f64>() / n as f64;
            let mut tape = Tape::new();
            let pv = tape.constant(Tensor::column(pos));
            let nv = tape.constant(Tensor::column(neg));
            let l = tlp_loss(&mut tape, pv, nv).unwrap();
            assert!((tape.value(l).item() - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn combined_arithmetic() {
        assert_eq!(combined_loss(2.0, 4.0, 1.0, 0.5), 4.0);
        assert_eq!(combined_loss(2.0, 4.0, 1.0, 0.0), 3.0);
        assert_eq!(combined_loss(2.0, 4.0, 1.0, 1.0), 5.0);
        assert!(check_beta(0.5, false).is_ok());
        assert!(check_beta(0.0, false).is_err());
        assert!(check_beta(1.0, true).is_ok());
        assert!(check_beta(1.5, true).is_err());
        assert!(check_beta(f64::NAN, true).is_err());
    }
}
