//! Synthetic user-item interaction logs with planted community preference
//! and a preference flip at a fixed time.
//!
//! Users are nodes `0..num_users`, items `num_users..num_users + num_items`.
//! User `u` and item `v` belong to community `index % num_communities`. Each
//! event picks a uniform user and, with probability `preference`, an item from
//! the user's currently preferred community, else an item from one of the
//! other communities, optionally with Zipf-skewed item popularity within the
//! community. Flipping users switch their preferred community to the
//! next one at `flip_time`; their events from then on carry label `1`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Event, GraphError, NodeId, TemporalGraph, Time};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub num_events: usize,
    pub num_communities: usize,
    /// Probability that an event lands in the preferred community.
    pub preference: f64,
    /// Events are spread uniformly over `[0, horizon]`.
    pub horizon: Time,
    /// Absolute time of the preference flip.
    pub flip_time: Time,
    /// Share of users whose preference flips.
    pub flip_fraction: f64,
    /// Probability of repeating the user's previous item instead of drawing.
    pub repeat_probability: f64,
    /// Zipf exponent of item popularity within a community; 0 is uniform.
    pub item_popularity: f64,
    /// Attach dynamic labels (flipped state of the source user).
    pub labels: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_users: 100,
            num_items: 100,
            num_events: 7000,
            num_communities: 2,
            preference: 0.9,
            horizon: 1000.0,
            flip_time: 500.0,
            flip_fraction: 0.5,
            repeat_probability: 0.0,
            item_popularity: 0.0,
            labels: true,
        }
    }
}

impl GeneratorConfig {
    pub fn community(&self, node: NodeId) -> usize {
        let n = node as usize;
        let idx = if n < self.num_users { n } else { n - self.num_users };
        idx % self.num_communities
    }

    /// The first `round(flip_fraction * num_users)` users flip. Communities
    /// interleave by index, so flippers are spread over all of them.
    pub fn is_flipper(&self, user: NodeId) -> bool {
        let quota = (self.flip_fraction * self.num_users as f64).round() as usize;
        (user as usize) < quota
    }

    /// Preferred community of `user` at time `t`.
    pub fn preferred(&self, user: NodeId, t: Time) -> usize {
        let base = self.community(user);
        if self.is_flipper(user) && t >= self.flip_time {
            (base + 1) % self.num_communities
        } else {
            base
        }
    }

    /// Drop in the rate of events going to a flipper's original community
    /// after the flip.
    pub fn expected_flip_margin(&self) -> f64 {
        let c = self.num_communities as f64;
        self.preference - (1.0 - self.preference) / (c - 1.0)
    }

    fn validate(&self) -> Result<(), GraphError> {
        let bad = |msg: &str| Err(GraphError::Generator(msg.to_string()));
        if self.num_users == 0 || self.num_items == 0 {
            return bad("user and item counts must be positive");
        }
        if self.num_events == 0 {
            return bad("event count must be positive");
        }
        if self.num_communities < 2 || self.num_communities > self.num_items {
            return bad("need at least 2 communities and one item per community");
        }
        if !(0.0..=1.0).contains(&self.preference)
            || !(0.0..=1.0).contains(&self.flip_fraction)
            || !(0.0..=1.0).contains(&self.repeat_probability)
        {
            return bad("probabilities must lie in [0, 1]");
        }
        if !(self.item_popularity >= 0.0) || !self.item_popularity.is_finite() {
            return bad("item_popularity must be nonnegative");
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return bad("horizon must be positive");
        }
        Ok(())
    }
}

pub fn generate_synthetic(cfg: &GeneratorConfig, seed: u64) -> Result<TemporalGraph, GraphError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times: Vec<Time> = (0..cfg.num_events).map(|_| rng.random::<f64>() * cfg.horizon).collect();
    times.sort_by(f64::total_cmp);

    let c = cfg.num_communities;
    // items of community k are num_users + k, num_users + k + c, ...
    let per_community: Vec<usize> = (0..c).map(|k| (cfg.num_items - k).div_ceil(c)).collect();
    let item_in = |k: usize, j: usize| (cfg.num_users + k + j * c) as NodeId;
    // the j-th item of a community has weight (j + 1)^-s
    let popularity: Vec<Option<WeightedIndex<f64>>> = per_community
        .iter()
        .map(|&n| {
            (cfg.item_popularity > 0.0).then(|| {
                WeightedIndex::new((0..n).map(|j| ((j + 1) as f64).powf(-cfg.item_popularity))).expect("positive weights")
            })
        })
        .collect();

    let mut last_item: Vec<Option<NodeId>> = vec![None; cfg.num_users];
    let mut events = Vec::with_capacity(cfg.num_events);
    for t in times {
        let user = rng.random_range(0..cfg.num_users) as NodeId;
        let item = match last_item[user as usize] {
            Some(prev) if cfg.repeat_probability > 0.0 && rng.random_bool(cfg.repeat_probability) => prev,
            _ => {
                let pref = cfg.preferred(user, t);
                let k = if rng.random_bool(cfg.preference) {
                    pref
                } else {
                    (pref + 1 + rng.random_range(0..c - 1)) % c
                };
                let j = match &popularity[k] {
                    Some(w) => w.sample(&mut rng),
                    None => rng.random_range(0..per_community[k]),
                };
                item_in(k, j)
            }
        };
        last_item[user as usize] = Some(item);
        let mut e = Event::new(user, item, t);
        if cfg.labels {
            e.label = Some(cfg.is_flipper(user) && t >= cfg.flip_time);
        }
        events.push(e);
    }
    TemporalGraph::from_events(cfg.num_users + cfg.num_items, events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::write_graph;

    #[test]
    fn same_seed_same_bytes() {
        let cfg = GeneratorConfig::default();
        let bytes = |seed| {
            let mut buf = Vec::new();
            write_graph(&generate_synthetic(&cfg, seed).unwrap(), &mut buf).unwrap();
            buf
        };
        assert_eq!(bytes(7), bytes(7));
        assert_ne!(bytes(7), bytes(8));
    }

    #[test]
    fn rejects_empty_configs() {
        let none = GeneratorConfig { num_events: 0, ..GeneratorConfig::default() };
        assert!(generate_synthetic(&none, 0).is_err());
        let none = GeneratorConfig { num_users: 0, ..GeneratorConfig::default() };
        assert!(generate_synthetic(&none, 0).is_err());
    }

    #[test]
    fn bipartite_roles() {
        let cfg = GeneratorConfig::default();
        let g = generate_synthetic(&cfg, 1).unwrap();
        assert_eq!(g.num_nodes(), cfg.num_users + cfg.num_items);
        for e in g.events() {
            assert!((e.src as usize) < cfg.num_users);
            assert!((e.dst as usize) >= cfg.num_users);
        }
        assert!(g.destinations().iter().all(|&d| d as usize >= cfg.num_users));
    }

    #[test]
    fn intra_preference_rate_with_strong_preference() {
        let cfg = GeneratorConfig {
            num_events: 10_000,
            preference: 0.9,
            flip_fraction: 0.0,
            ..GeneratorConfig::default()
        };
        let g = generate_synthetic(&cfg, 3).unwrap();
        let hits = g
            .events()
            .iter()
            .filter(|e| cfg.community(e.dst) == cfg.preferred(e.src, e.timestamp))
            .count();
        assert!(hits as f64 / 10_000.0 >= 0.85, "rate {}", hits as f64 / 10_000.0);
    }

    #[test]
    fn flip_shifts_original_community_rate_by_margin() {
        let cfg = GeneratorConfig {
            num_events: 20_000,
            num_communities: 3,
            preference: 0.8,
            flip_fraction: 1.0,
            ..GeneratorConfig::default()
        };
        let g = generate_synthetic(&cfg, 11).unwrap();
        let (mut before, mut n_before, mut after, mut n_after) = (0usize, 0usize, 0usize, 0usize);
        for e in g.events() {
            let original = cfg.community(e.dst) == cfg.community(e.src);
            if e.timestamp < cfg.flip_time {
                n_before += 1;
                before += original as usize;
            } else {
                n_after += 1;
                after += original as usize;
            }
        }
        let (p1, p2) = (before as f64 / n_before as f64, after as f64 / n_after as f64);
        let sigma = (p1 * (1.0 - p1) / n_before as f64 + p2 * (1.0 - p2) / n_after as f64).sqrt();
        let margin = cfg.expected_flip_margin();
        assert!(((p1 - p2) - margin).abs() <= 3.0 * sigma, "diff {} vs {margin} (sigma {sigma})", p1 - p2);
    }

    #[test]
    fn labels_mark_flipped_users() {
        let cfg = GeneratorConfig::default();
        let g = generate_synthetic(&cfg, 5).unwrap();
        for e in g.events() {
            assert_eq!(e.label, Some(cfg.is_flipper(e.src) && e.timestamp >= cfg.flip_time));
        }
        assert!(g.events().iter().any(|e| e.label == Some(true)));
    }

    #[test]
    fn zipf_popularity_within_community() {
        let cfg = GeneratorConfig {
            num_items: 8,
            num_events: 40_000,
            item_popularity: 1.0,
            ..GeneratorConfig::default()
        };
        let g = generate_synthetic(&cfg, 4).unwrap();
        // community 0 holds items 0, 2, 4, 6 (offset by the user count)
        let mut counts = [0usize; 4];
        for e in g.events() {
            let idx = e.dst as usize - cfg.num_users;
            if idx.is_multiple_of(2) {
                counts[idx / 2] += 1;
            }
        }
        let n: usize = counts.iter().sum();
        let harmonic: f64 = (1..=4).map(|j| 1.0 / j as f64).sum();
        let stat: f64 = counts
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let e = n as f64 / (j + 1) as f64 / harmonic;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        let critical = statrs::distribution::ChiSquared::new(3.0).unwrap();
        assert!(stat < statrs::distribution::ContinuousCDF::inverse_cdf(&critical, 0.999), "chi2 {stat}, counts {counts:?}");
    }
}
