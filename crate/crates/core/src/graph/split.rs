use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{GraphError, TemporalGraph, Time};

/// Chronological partition of an event log into contiguous segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChronoSplit {
    /// Event-ordinal range of each segment, in time order.
    pub segments: Vec<Range<usize>>,
    /// Timestamp of the first event of every segment after the first.
    pub boundaries: Vec<Time>,
}

impl ChronoSplit {
    pub fn segment(&self, k: usize) -> Range<usize> {
        self.segments[k].clone()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.segments.iter().map(|r| r.len()).collect()
    }
}

/// Splits by event-count quantiles: segment `k` ends at
/// `round(E * (r_0 + ... + r_k))`.
pub fn chrono_split(graph: &TemporalGraph, ratios: &[f64]) -> Result<ChronoSplit, GraphError> {
    let total: f64 = ratios.iter().sum();
    if ratios.is_empty() || ratios.iter().any(|r| !(*r > 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(GraphError::InvalidRatios(ratios.to_vec()));
    }
    let n = graph.num_events();
    if n < ratios.len() {
        return Err(GraphError::TooFewEvents {
            events: n,
            segments: ratios.len(),
        });
    }
    let mut segments = Vec::with_capacity(ratios.len());
    let mut cumulative = 0.0;
    let mut start = 0;
    for (k, r) in ratios.iter().enumerate() {
        cumulative += r;
        let end = if k + 1 == ratios.len() {
            n
        } else {
            ((cumulative * n as f64).round() as usize).min(n)
        };
        if end <= start {
            return Err(GraphError::TooFewEvents {
                events: n,
                segments: ratios.len(),
            });
        }
        segments.push(start..end);
        start = end;
    }
    let boundaries = segments[1..]
        .iter()
        .map(|s| graph.event(s.start).timestamp)
        .collect();
    Ok(ChronoSplit { segments, boundaries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Event;

    fn line(n: usize) -> TemporalGraph {
        TemporalGraph::from_events(2, (0..n).map(|k| Event::new(0, 1, k as f64)).collect()).unwrap()
    }

    #[test]
    fn sixty_forty() {
        assert_eq!(chrono_split(&line(10), &[0.6, 0.4]).unwrap().sizes(), vec![6, 4]);
    }

    #[test]
    fn eight_one_one() {
        assert_eq!(chrono_split(&line(100), &[0.8, 0.1, 0.1]).unwrap().sizes(), vec![80, 10, 10]);
    }

    #[test]
    fn six_two_one_one() {
        let s = chrono_split(&line(20), &[0.6, 0.2, 0.1, 0.1]).unwrap();
        assert_eq!(s.sizes(), vec![12, 4, 2, 2]);
        assert_eq!(s.boundaries, vec![12.0, 16.0, 18.0]);
    }

    #[test]
    fn segments_cover_log_in_order() {
        let s = chrono_split(&line(37), &[0.3, 0.3, 0.4]).unwrap();
        assert_eq!(s.segments.first().unwrap().start, 0);
        assert_eq!(s.segments.last().unwrap().end, 37);
        for w in s.segments.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(chrono_split(&line(1), &[0.5, 0.5]), Err(GraphError::TooFewEvents { .. })));
        assert!(matches!(chrono_split(&line(10), &[0.5, 0.6]), Err(GraphError::InvalidRatios(_))));
        assert!(matches!(chrono_split(&line(10), &[1.0, 0.0]), Err(GraphError::InvalidRatios(_))));
    }
}
