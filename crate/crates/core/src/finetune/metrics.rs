//! Ranking and classification metrics for binary ground truth.

use super::FinetuneError;

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), FinetuneError> {
    if scores.len() != labels.len() {
        return Err(FinetuneError::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(FinetuneError::Metric("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(FinetuneError::SingleClass);
    }
    Ok((pos, neg))
}

/// Indices sorted by descending score, split into runs of equal score.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for k in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[k] => g.push(k),
            _ => groups.push(vec![k]),
        }
    }
    groups
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, FinetuneError> {
    let (pos, neg) = check(scores, labels)?;
    let mut negatives_below = neg as f64;
    let mut wins = 0.0;
    for group in tie_groups(scores) {
        let p = group.iter().filter(|&&k| labels[k]).count() as f64;
        let n = group.len() as f64 - p;
        negatives_below -= n;
        wins += p * (negatives_below + 0.5 * n);
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// Sum over distinct score thresholds, high to low, of the recall increment
/// times the precision at that threshold.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64, FinetuneError> {
    let (pos, _) = check(scores, labels)?;
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    for group in tie_groups(scores) {
        let p = group.iter().filter(|&&k| labels[k]).count();
        tp += p;
        seen += group.len();
        ap += (p as f64 / pos as f64) * (tp as f64 / seen as f64);
    }
    Ok(ap)
}

/// Micro-averaged F1 over both classes at threshold 0.5 on probabilities.
/// With one label per example this equals accuracy.
pub fn micro_f1(probs: &[f64], labels: &[bool]) -> Result<f64, FinetuneError> {
    check(probs, labels)?;
    let correct = probs.iter().zip(labels).filter(|(&p, &l)| (p >= 0.5) == l).count();
    Ok(correct as f64 / labels.len() as f64)
}
