//! Shared fixtures for the benchmarks.

use cpdg::dgnn::{Backbone, BackboneConfig};
use cpdg::graph::{generate_synthetic, GeneratorConfig, TemporalGraph};
use cpdg::sampler::SamplerConfig;

/// Planted-community interaction graph with `events` events.
pub fn graph(events: usize) -> TemporalGraph {
    let cfg = GeneratorConfig {
        num_users: 500,
        num_items: 500,
        num_events: events,
        repeat_probability: 0.3,
        item_popularity: 1.0,
        ..GeneratorConfig::default()
    };
    generate_synthetic(&cfg, 0).expect("valid generator config")
}

pub fn backbone(preset: Backbone) -> BackboneConfig {
    let mut b = BackboneConfig::preset(preset).with_dims(32, 32, 16);
    b.embed_degree = 5;
    b
}

pub fn sampler() -> SamplerConfig {
    SamplerConfig {
        eta: 5,
        epsilon: 5,
        depth: 2,
        ..SamplerConfig::default()
    }
}
