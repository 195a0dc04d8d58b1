use super::*;
use crate::dgnn::Backbone;
use crate::graph::{generate_synthetic, Event, GeneratorConfig};
use crate::pretrain::combined_loss;
use crate::tensor::{grad_check, OptimizerKind};

fn toy_graph(events: usize, seed: u64) -> TemporalGraph {
    let cfg = GeneratorConfig {
        num_users: 12,
        num_items: 12,
        num_events: events,
        horizon: 100.0,
        flip_time: 50.0,
        ..GeneratorConfig::default()
    };
    generate_synthetic(&cfg, seed).unwrap()
}

fn small_backbone(b: Backbone) -> BackboneConfig {
    let mut cfg = BackboneConfig::preset(b).with_dims(6, 5, 4);
    cfg.embed_degree = 3;
    cfg
}

fn small_sampler() -> SamplerConfig {
    SamplerConfig {
        eta: 3,
        epsilon: 2,
        depth: 2,
        tau: 1.0,
        seed: 9,
    }
}

fn small_run(epochs: usize, checkpoints: usize) -> PretrainConfig {
    PretrainConfig {
        epochs,
        batch_size: 32,
        lr: 1e-2,
        checkpoints,
        seed: 4,
        ..PretrainConfig::default()
    }
}

#[test]
fn runs_are_bit_identical() {
    let g = toy_graph(200, 1);
    let b = small_backbone(Backbone::Tgn);
    let run = || pretrain(&g, &b, &small_sampler(), &LossConfig::default(), &small_run(3, 4), None).unwrap();
    let (a, c) = (run(), run());
    assert_eq!(a.params.to_bytes(), c.params.to_bytes());
    assert_eq!(a.memory, c.memory);
    assert_eq!(a.checkpoints, c.checkpoints);
    let strip = |log: &[BatchRecord]| log.iter().map(|r| (r.l_pre.to_bits(), r.skipped_structural)).collect::<Vec<_>>();
    assert_eq!(strip(&a.log), strip(&c.log));
}

#[test]
fn plan_replay_matches_online_sampling() {
    let g = toy_graph(120, 2);
    let b = small_backbone(Backbone::Jodie);
    let s = small_sampler();
    let plan = SamplePlan::build(&g, &s, 0..g.num_events()).unwrap();
    for both in [false, true] {
        let cfg = PretrainConfig {
            anchor_both_endpoints: both,
            ..small_run(2, 2)
        };
        let online = pretrain(&g, &b, &s, &LossConfig::default(), &cfg, None).unwrap();
        let replay = pretrain(&g, &b, &s, &LossConfig::default(), &cfg, Some(&plan)).unwrap();
        assert_eq!(online.params.to_bytes(), replay.params.to_bytes());
        assert_eq!(online.memory, replay.memory);
    }
    let other = SamplerConfig { seed: 10, ..s.clone() };
    assert!(pretrain(&g, &b, &other, &LossConfig::default(), &small_run(1, 0), Some(&plan)).is_err());
    let partial = SamplePlan::build(&g, &s, 0..50).unwrap();
    assert!(pretrain(&g, &b, &s, &LossConfig::default(), &small_run(1, 0), Some(&partial)).is_err());
}

#[test]
fn ten_checkpoints_uniformly_spaced() {
    let g = toy_graph(200, 3);
    let out = pretrain(
        &g,
        &small_backbone(Backbone::Dyrep),
        &small_sampler(),
        &LossConfig::default(),
        &small_run(3, 10),
        None,
    )
    .unwrap();
    let total = out.log.len();
    assert_eq!(total, 3 * 200usize.div_ceil(32));
    assert_eq!(out.checkpoints.len(), 10);
    let steps: Vec<usize> = out.checkpoints.schedule.iter().map(|c| c.step).collect();
    assert_eq!(steps, capture_steps(total, 10).unwrap());
    assert_eq!(*steps.last().unwrap(), total - 1);
    // the last snapshot is the final memory
    assert_eq!(out.checkpoints.snapshots.last().unwrap(), &out.memory);
    for c in &out.checkpoints.schedule {
        assert_eq!(c.step, c.epoch * total / 3 + c.batch);
    }
}

#[test]
fn too_many_checkpoints_rejected() {
    let g = toy_graph(40, 3);
    let err = pretrain(
        &g,
        &small_backbone(Backbone::Tgn),
        &small_sampler(),
        &LossConfig::default(),
        &small_run(1, 3),
        None,
    )
    .unwrap_err();
    assert!(matches!(err, PretrainError::TooManyCheckpoints { checkpoints: 3, steps: 2 }));
}

#[test]
fn loss_decreases_on_planted_graph() {
    let g = toy_graph(400, 5);
    let cfg = PretrainConfig {
        epochs: 6,
        batch_size: 50,
        lr: 1e-2,
        checkpoints: 0,
        ..PretrainConfig::default()
    };
    let out = pretrain(&g, &small_backbone(Backbone::Tgn), &small_sampler(), &LossConfig::default(), &cfg, None).unwrap();
    let per_epoch = out.log.len() / cfg.epochs;
    let mean = |e: usize| out.log[e * per_epoch..(e + 1) * per_epoch].iter().map(|r| r.l_pre).sum::<f64>() / per_epoch as f64;
    assert!(mean(cfg.epochs - 1) < mean(0), "{} vs {}", mean(cfg.epochs - 1), mean(0));
}

#[test]
fn ablation_endpoints_keep_unweighted_terms() {
    let g = toy_graph(150, 6);
    for beta in [0.0, 1.0] {
        let loss = LossConfig {
            beta,
            ablation: true,
            ..LossConfig::default()
        };
        let out = pretrain(&g, &small_backbone(Backbone::Tgn), &small_sampler(), &loss, &small_run(1, 0), None).unwrap();
        let unweighted: f64 = out.log.iter().map(|r| if beta == 0.0 { r.l_eps } else { r.l_eta }).sum();
        assert!(unweighted > 0.0);
        for r in &out.log {
            let expected = if beta == 0.0 { r.l_eta + r.l_tlp } else { r.l_eps + r.l_tlp };
            assert!((r.l_pre - expected).abs() < 1e-12);
            assert!((r.l_pre - combined_loss(r.l_eta, r.l_eps, r.l_tlp, beta)).abs() < 1e-12);
        }
    }
    let refused = LossConfig {
        beta: 0.0,
        ..LossConfig::default()
    };
    assert!(matches!(
        pretrain(&g, &small_backbone(Backbone::Tgn), &small_sampler(), &refused, &small_run(1, 0), None),
        Err(PretrainError::InvalidBeta(_))
    ));
}

#[test]
fn skipped_anchors_counted() {
    let g = toy_graph(64, 7);
    let out = pretrain(&g, &small_backbone(Backbone::Tgn), &small_sampler(), &LossConfig::default(), &small_run(1, 0), None).unwrap();
    let first = &out.log[0];
    // the very first event's source has no history
    assert!(first.skipped_temporal >= 1 && first.skipped_structural >= 1);
    assert!(first.skipped_temporal <= first.anchors);
    let both = PretrainConfig {
        anchor_both_endpoints: true,
        ..small_run(1, 0)
    };
    let out2 = pretrain(&g, &small_backbone(Backbone::Tgn), &small_sampler(), &LossConfig::default(), &both, None).unwrap();
    assert_eq!(out2.log[0].anchors, 2 * out.log[0].anchors);
}

#[test]
fn persistent_memory_and_sgd_run() {
    let g = toy_graph(100, 8);
    let cfg = PretrainConfig {
        memory_persist_across_epochs: true,
        optimizer: OptimizerKind::Sgd,
        ..small_run(3, 3)
    };
    let loss = LossConfig {
        negatives_per_edge: 3,
        ..LossConfig::default()
    };
    let out = pretrain(&g, &small_backbone(Backbone::Jodie), &small_sampler(), &loss, &cfg, None).unwrap();
    assert_eq!(out.checkpoints.len(), 3);
    assert!(out.log.iter().all(|r| r.l_pre.is_finite()));
}

#[test]
fn log_round_trip() {
    let g = toy_graph(80, 9);
    let out = pretrain(&g, &small_backbone(Backbone::Tgn), &small_sampler(), &LossConfig::default(), &small_run(1, 1), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    write_log(&path, &out.log).unwrap();
    assert_eq!(read_log(&path).unwrap(), out.log);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), out.log.len());
    assert!(text.lines().next().unwrap().contains("\"l_eta\""));
}

#[test]
fn negatives_avoid_true_destination() {
    let g = toy_graph(100, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let negs = sample_negatives(&g, 0..100, 4, &mut rng).unwrap();
    assert_eq!(negs.len(), 400);
    for (k, &n) in negs.iter().enumerate() {
        assert_ne!(n, g.event(k / 4).dst);
        assert!(g.destinations().contains(&n));
    }
    let single = TemporalGraph::from_events(3, vec![Event::new(0, 2, 1.0), Event::new(1, 2, 2.0)]).unwrap();
    assert!(matches!(
        sample_negatives(&single, 0..2, 1, &mut rng),
        Err(PretrainError::NoNegative { ordinal: 0 })
    ));
}

#[test]
fn empty_graph_rejected() {
    let g = TemporalGraph::with_nodes(3);
    assert!(pretrain(&g, &small_backbone(Backbone::Tgn), &small_sampler(), &LossConfig::default(), &small_run(1, 0), None).is_err());
}

/// Moves zero-initialised biases off zero. A never-updated node has an
/// all-zero state, so with zero biases its relu inputs sit exactly on the kink.
fn jitter(params: &mut ParamStore, rng: &mut ChaCha8Rng) {
    use rand::Rng;
    for id in params.ids().collect::<Vec<_>>() {
        for x in params.get_mut(id).data_mut() {
            *x += rng.random_range(-0.1..0.1);
        }
    }
}

/// Full combined loss, after warming the memory with a prefix, with the
/// next events pending.
fn full_loss_check(b: Backbone, dz: usize) {
    let g = toy_graph(48, 11);
    let mut backbone = small_backbone(b);
    backbone.embed_dim = dz;
    let s = small_sampler();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut params = ParamStore::new();
    let model = PretrainModel::new(&backbone, &mut params, &mut rng).unwrap();
    jitter(&mut params, &mut rng);
    let mut memory = MemoryStore::new(g.num_nodes(), backbone.memory_dim);
    let prefix: Vec<Interaction> = g.events()[..24].iter().map(Interaction::from).collect();
    model.encoder.process(&params, &g, &mut memory, &prefix).unwrap();
    let pending: Vec<Interaction> = g.events()[24..36].iter().map(Interaction::from).collect();
    let batch = 36..48;
    let owned: Vec<SubgraphSet> = batch.clone().map(|o| sample_event(&g, &s, o)).collect();
    let sets: Vec<&SubgraphSet> = owned.iter().collect();
    let loss = LossConfig {
        negatives_per_edge: 2,
        ..LossConfig::default()
    };
    let negatives = sample_negatives(&g, batch.clone(), 2, &mut rng).unwrap();
    let report = grad_check(
        |tape, p| -> Result<_, PretrainError> {
            let out = model.step_loss(tape, p, &g, &memory, &pending, batch.clone(), &sets, &negatives, &loss)?;
            Ok(out.total)
        },
        &params,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed, "{b:?}: {report:?}");
}

#[test]
fn full_loss_gradients_jodie() {
    full_loss_check(Backbone::Jodie, 5);
}

#[test]
fn full_loss_gradients_dyrep() {
    full_loss_check(Backbone::Dyrep, 6);
}

#[test]
fn full_loss_gradients_tgn() {
    full_loss_check(Backbone::Tgn, 5);
}
