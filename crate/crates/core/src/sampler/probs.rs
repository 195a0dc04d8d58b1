use crate::graph::Time;

use super::{SamplerError, TemporalMode};

/// Normalized recency `(t_u - min) / (t - min)` of each neighbor time.
fn recency(times: &[Time], t: Time) -> Result<Vec<f64>, SamplerError> {
    if times.is_empty() {
        return Err(SamplerError::NoNeighbors);
    }
    if let Some(&bad) = times.iter().find(|&&u| !(u < t)) {
        return Err(SamplerError::NotBefore { time: bad, cutoff: t });
    }
    let min = times.iter().copied().fold(f64::INFINITY, f64::min);
    let span = t - min;
    Ok(times
        .iter()
        .map(|&u| if times.len() == 1 { 0.0 } else { (u - min) / span })
        .collect())
}

/// Temperature-scaled logits whose softmax gives the mode's probabilities.
pub(crate) fn scaled_logits(times: &[Time], t: Time, tau: f64, mode: TemporalMode) -> Result<Vec<f64>, SamplerError> {
    let r = recency(times, t)?;
    Ok(match mode {
        TemporalMode::Chronological => r.into_iter().map(|x| x / tau).collect(),
        TemporalMode::Reverse => r.into_iter().map(|x| (1.0 - x) / tau).collect(),
    })
}

pub(crate) fn softmax(mut p: Vec<f64>) -> Vec<f64> {
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in p.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in p.iter_mut() {
        *x /= sum;
    }
    p
}

/// Sampling probabilities favoring recent neighbors.
pub fn chrono_probs(times: &[Time], t: Time, tau: f64) -> Result<Vec<f64>, SamplerError> {
    Ok(softmax(scaled_logits(times, t, tau, TemporalMode::Chronological)?))
}

/// Sampling probabilities favoring old neighbors.
pub fn reverse_chrono_probs(times: &[Time], t: Time, tau: f64) -> Result<Vec<f64>, SamplerError> {
    Ok(softmax(scaled_logits(times, t, tau, TemporalMode::Reverse)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct softmax of the normalized recencies, written out by hand.
    fn oracle(recencies: &[f64], tau: f64) -> Vec<f64> {
        let e: Vec<f64> = recencies.iter().map(|r| (r / tau).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| x / s).collect()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn three_neighbors_match_oracle() {
        let p = chrono_probs(&[1.0, 3.0, 5.0], 9.0, 1.0).unwrap();
        assert!(close(&p, &oracle(&[0.0, 0.25, 0.5], 1.0), 1e-12), "{p:?}");
        // e^0, e^0.25, e^0.5 normalized
        assert!(close(&p, &[0.254_275_6, 0.326_496_2, 0.419_228_2], 1e-6), "{p:?}");
        let r = reverse_chrono_probs(&[1.0, 3.0, 5.0], 9.0, 1.0).unwrap();
        assert!(close(&r, &oracle(&[1.0, 0.75, 0.5], 1.0), 1e-12));
        let mirrored: Vec<f64> = p.iter().rev().copied().collect();
        assert!(close(&r, &mirrored, 1e-12));
    }

    #[test]
    fn singleton_and_ties() {
        assert_eq!(chrono_probs(&[4.0], 4.5, 1.0).unwrap(), vec![1.0]);
        assert_eq!(reverse_chrono_probs(&[4.0], 100.0, 0.1).unwrap(), vec![1.0]);
        let p = chrono_probs(&[2.0; 4], 3.0, 1.0).unwrap();
        assert!(close(&p, &[0.25; 4], 1e-15));
        assert_eq!(p, reverse_chrono_probs(&[2.0; 4], 3.0, 1.0).unwrap());
    }

    #[test]
    fn errors() {
        assert!(matches!(chrono_probs(&[], 1.0, 1.0), Err(SamplerError::NoNeighbors)));
        assert!(matches!(chrono_probs(&[1.0, 2.0], 2.0, 1.0), Err(SamplerError::NotBefore { .. })));
    }

    #[test]
    fn temperature_limits() {
        let times = [0.5, 1.0, 4.0, 7.5];
        let hot = chrono_probs(&times, 8.0, 1e6).unwrap();
        assert!(hot.iter().all(|p| (p - 0.25).abs() < 1e-4));
        let cold = chrono_probs(&times, 8.0, 1e-4).unwrap();
        assert!(cold[3] >= 1.0 - 1e-6);
        let cold = reverse_chrono_probs(&times, 8.0, 1e-4).unwrap();
        assert!(cold[0] >= 1.0 - 1e-6);
    }

    proptest! {
        #[test]
        fn normalized_and_monotone(
            mut times in proptest::collection::vec(0.0f64..100.0, 1..30),
            gap in 0.001f64..50.0,
            tau in 0.05f64..10.0,
        ) {
            times.sort_by(f64::total_cmp);
            let t = times.last().unwrap() + gap;
            let p = chrono_probs(&times, t, tau).unwrap();
            let r = reverse_chrono_probs(&times, t, tau).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for w in p.windows(2) {
                prop_assert!(w[0] <= w[1] + 1e-15);
            }
            for w in r.windows(2) {
                prop_assert!(w[0] + 1e-15 >= w[1]);
            }
            let all_equal = times.iter().all(|&x| x == times[0]);
            prop_assert_eq!(all_equal, close(&p, &r, 1e-15));
        }
    }
}
