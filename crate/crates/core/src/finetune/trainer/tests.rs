use super::*;
use crate::dgnn::Backbone;
use crate::graph::{generate_synthetic, GeneratorConfig};
use crate::pretrain::{pretrain, LossConfig, PretrainConfig};
use crate::sampler::SamplerConfig;

fn graph(events: usize, labels: bool) -> TemporalGraph {
    let cfg = GeneratorConfig {
        num_users: 16,
        num_items: 16,
        num_events: events,
        horizon: 100.0,
        flip_time: 30.0,
        labels,
        ..GeneratorConfig::default()
    };
    generate_synthetic(&cfg, 3).unwrap()
}

fn backbone() -> BackboneConfig {
    let mut b = BackboneConfig::preset(Backbone::Tgn).with_dims(6, 5, 4);
    b.embed_degree = 3;
    b
}

fn pretrained(g: &TemporalGraph) -> crate::pretrain::PretrainOutput {
    let sampler = SamplerConfig {
        eta: 3,
        epsilon: 2,
        ..SamplerConfig::default()
    };
    let cfg = PretrainConfig {
        epochs: 1,
        batch_size: 40,
        lr: 1e-2,
        checkpoints: 3,
        ..PretrainConfig::default()
    };
    pretrain(g, &backbone(), &sampler, &LossConfig::default(), &cfg, None).unwrap()
}

fn quick(task: Task, mode: EieMode) -> FinetuneConfig {
    FinetuneConfig {
        task,
        mode,
        epochs: 3,
        batch_size: 40,
        lr: 1e-2,
        ..FinetuneConfig::default()
    }
}

#[test]
fn widen_inserts_zero_blocks() {
    let base = Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]).unwrap();
    let w = widen_rows(&base, 2, 1, 2);
    assert_eq!(w.data(), &[1.0, 2.0, 0.0, 3.0, 4.0, 0.0]);
    assert_eq!(widen_rows(&base, 4, 0, 1), base);
}

#[test]
fn modes_share_encoder_and_head_rows() {
    let g = graph(300, true);
    let pre = pretrained(&g);
    let (_, full) = DownstreamModel::build(&backbone(), Init::Pretrained(&pre.params), Task::LinkPrediction, EieMode::Full, None, 1).unwrap();
    let (_, mean) = DownstreamModel::build(&backbone(), Init::Pretrained(&pre.params), Task::LinkPrediction, EieMode::EieMean, None, 1).unwrap();
    for (name, t) in full.iter().filter(|(n, _)| n.starts_with("encoder.")) {
        assert_eq!(mean.get(mean.find(name).unwrap()), t, "{name}");
        assert_eq!(pre.params.get(pre.params.find(name).unwrap()), t, "{name}");
    }
    let id = mean.find("head.link.0.weight").unwrap();
    assert_eq!(mean.get(id).rows(), 2 * (5 + 6));
    for r in [5..11, 16..22] {
        for row in r {
            assert!(mean.get(id).row_slice(row).iter().all(|&x| x == 0.0));
        }
    }
}

#[test]
fn zero_snapshots_leave_initial_loss_unchanged() {
    let g = graph(300, true);
    let pre = pretrained(&g);
    let down = g.slice(200..300);
    let mut zero_seq = pre.checkpoints.clone();
    for s in &mut zero_seq.snapshots {
        *s = MemoryStore::new(s.num_nodes(), s.dim());
    }
    let negs = sample_negatives(&down, 0..40, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let initial = |mode: EieMode, seq: &CheckpointSequence| {
        let (m, params) = DownstreamModel::build(&backbone(), Init::Pretrained(&pre.params), Task::LinkPrediction, mode, None, 1).unwrap();
        let memory = MemoryStore::new(down.num_nodes(), 6);
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let (loss, _) = m.loss(&mut tape, &p, &down, &memory, &[], Some(seq), 0..40, &negs).unwrap();
        tape.value(loss.unwrap()).item()
    };
    let full = initial(EieMode::Full, &zero_seq);
    for mode in [EieMode::EieMean, EieMode::EieAttn, EieMode::EieGru] {
        assert_eq!(initial(mode, &zero_seq), full, "{mode:?}");
        // zero head rows also hide real snapshots at initialisation
        assert_eq!(initial(mode, &pre.checkpoints), full, "{mode:?}");
    }
}

#[test]
fn link_prediction_runs_and_is_deterministic() {
    let g = graph(500, true);
    let pre = pretrained(&g);
    let down = g.slice(250..500);
    for mode in EieMode::ALL {
        let cfg = quick(Task::LinkPrediction, mode);
        let a = finetune(&down, &backbone(), Init::Pretrained(&pre.params), Some(&pre.checkpoints), &cfg).unwrap();
        let b = finetune(&down, &backbone(), Init::Pretrained(&pre.params), Some(&pre.checkpoints), &cfg).unwrap();
        assert_eq!(a.report, b.report);
        let r = &a.report;
        assert!((0.0..=1.0).contains(&r.auc) && (0.0..=1.0).contains(&r.ap) && (0.0..=1.0).contains(&r.micro_f1));
        assert!(r.best_epoch < r.epochs_run && r.epochs_run <= 3);
        assert_eq!(r.mode, mode);
    }
    let random = finetune(&down, &backbone(), Init::Random, None, &quick(Task::LinkPrediction, EieMode::Full)).unwrap();
    assert!(random.report.auc.is_finite());
}

#[test]
fn paired_negatives_shared_across_modes() {
    let g = graph(300, true);
    let pre = pretrained(&g);
    let down = g.slice(150..300);
    let negs = sample_negatives(&down, 100..150, 1, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let mut labels = None;
    for mode in EieMode::ALL {
        let (m, params) = DownstreamModel::build(&backbone(), Init::Pretrained(&pre.params), Task::LinkPrediction, mode, None, 1).unwrap();
        let s = m.score(&params, &down, Some(&pre.checkpoints), 100..150, &negs, 40).unwrap();
        assert_eq!(s.logits.len(), 100);
        let l = labels.get_or_insert_with(|| s.labels.clone());
        assert_eq!(l, &s.labels);
    }
}

#[test]
fn node_classification_runs() {
    let g = graph(600, true);
    let pre = pretrained(&g);
    let down = g.slice(300..600);
    let out = finetune(
        &down,
        &backbone(),
        Init::Pretrained(&pre.params),
        Some(&pre.checkpoints),
        &quick(Task::NodeClassification, EieMode::EieMean),
    )
    .unwrap();
    assert_eq!(out.report.task, Task::NodeClassification);
    assert!(out.report.auc.is_finite());
}

#[test]
fn node_classification_needs_labels() {
    let g = graph(200, false);
    let err = finetune(&g, &backbone(), Init::Random, None, &quick(Task::NodeClassification, EieMode::Full)).unwrap_err();
    assert!(matches!(err, FinetuneError::NoLabels));
}

#[test]
fn fusion_modes_need_checkpoints() {
    let g = graph(200, true);
    let err = finetune(&g, &backbone(), Init::Random, None, &quick(Task::LinkPrediction, EieMode::EieGru)).unwrap_err();
    assert!(matches!(err, FinetuneError::NoCheckpoints));
}

#[test]
fn mismatched_pretrained_params_rejected() {
    let g = graph(200, true);
    let pre = pretrained(&g);
    let other = backbone().with_dims(7, 5, 4);
    let err = DownstreamModel::build(&other, Init::Pretrained(&pre.params), Task::LinkPrediction, EieMode::Full, None, 0).unwrap_err();
    assert!(matches!(err, FinetuneError::ParamMismatch(_)));
}

#[test]
fn report_serialises_with_expected_keys() {
    let r = MetricsReport {
        task: Task::LinkPrediction,
        mode: EieMode::EieAttn,
        seed: 3,
        auc: 0.7,
        ap: 0.6,
        micro_f1: 0.5,
        epochs_run: 4,
        best_epoch: 1,
    };
    let v: serde_json::Value = serde_json::to_value(&r).unwrap();
    assert_eq!(v["task"], "link-prediction");
    assert_eq!(v["mode"], "eie-attn");
    let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    assert_eq!(keys.len(), 8);
}
