use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dgnn::{BackboneConfig, Encoder, Interaction, MemoryStore};
use crate::graph::{chrono_split, NodeId, TemporalGraph, Time};
use crate::pretrain::{sample_negatives, tlp_loss, CheckpointSequence, LinkHead, PretrainModel};
use crate::tensor::{BoundParams, Mlp, Optimizer, ParamId, ParamStore, Tape, Tensor, Var};

use super::eie::{EieFuser, EieMode};
use super::metrics::{auc, average_precision, micro_f1};
use super::{FinetuneConfig, FinetuneError, Task};

/// Where the encoder and link head start from.
#[derive(Clone, Copy, Debug)]
pub enum Init<'a> {
    Random,
    Pretrained(&'a ParamStore),
}

/// Encoder, optional evolution fusion and task heads. Head inputs are
/// `[z ‖ MLP(EI)]` per node; the weight rows reading `MLP(EI)` start at zero.
#[derive(Clone, Debug)]
pub struct DownstreamModel {
    pub encoder: Encoder,
    pub fuser: Option<EieFuser>,
    pub link: LinkHead,
    pub node: Mlp,
    pub task: Task,
}

/// Scores of one evaluation pass. For link prediction each event
/// contributes a positive then its paired negative.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scores {
    pub logits: Vec<f64>,
    pub labels: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub mode: EieMode,
    pub seed: u64,
    pub auc: f64,
    pub ap: f64,
    pub micro_f1: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

#[derive(Debug)]
pub struct FinetuneOutput {
    pub report: MetricsReport,
    pub model: DownstreamModel,
    /// Parameters of the best validation epoch.
    pub params: ParamStore,
    pub val_auc: Vec<f64>,
}

/// Reorders a `sides * dz`-row weight into `sides * (dz + e)` rows with
/// zero rows for every side's extra block.
fn widen_rows(base: &Tensor, dz: usize, e: usize, sides: usize) -> Tensor {
    let cols = base.cols();
    let mut out = Tensor::zeros(sides * (dz + e), cols);
    for s in 0..sides {
        for r in 0..dz {
            out.row_slice_mut(s * (dz + e) + r).copy_from_slice(base.row_slice(s * dz + r));
        }
    }
    out
}

fn param(store: &ParamStore, name: &str) -> Result<ParamId, FinetuneError> {
    store.find(name).ok_or_else(|| FinetuneError::ParamMismatch(format!("missing {name}")))
}

/// (`AUC`, `AP`, micro-F1 at probability 0.5).
pub fn evaluate(scores: &Scores) -> Result<(f64, f64, f64), FinetuneError> {
    let probs: Vec<f64> = scores.logits.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
    Ok((
        auc(&scores.logits, &scores.labels)?,
        average_precision(&scores.logits, &scores.labels)?,
        micro_f1(&probs, &scores.labels)?,
    ))
}

impl DownstreamModel {
    /// Builds the model for `mode`. Encoder and link head come from `init`
    /// (or a seed-`seed` random draw, identical for every mode); fusion and
    /// classifier parameters are freshly drawn.
    pub fn build(
        backbone: &BackboneConfig,
        init: Init<'_>,
        task: Task,
        mode: EieMode,
        mlp_hidden: Option<usize>,
        seed: u64,
    ) -> Result<(Self, ParamStore), FinetuneError> {
        let (d, dz) = (backbone.memory_dim, backbone.embed_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut base = ParamStore::new();
        PretrainModel::new(backbone, &mut base, &mut rng)?;
        if let Init::Pretrained(src) = init {
            base.load_matching(src);
            for (name, t) in base.iter() {
                if name.starts_with("encoder.") || name.starts_with("head.link.") {
                    let found = src.find(name).map(|id| src.get(id));
                    if found.is_none_or(|s| s.shape() != t.shape()) {
                        return Err(FinetuneError::ParamMismatch(format!("{name} absent or of another shape")));
                    }
                }
            }
        }

        let mut store = ParamStore::new();
        let mut scratch = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(backbone, &mut store, &mut scratch)?;
        let mut extra = ChaCha8Rng::seed_from_u64(seed);
        extra.set_stream(2);
        let fuser = EieFuser::new(mode, d, dz, mlp_hidden.unwrap_or(d), &mut store, &mut extra);
        let e = fuser.as_ref().map_or(0, EieFuser::output_dim);
        let link = LinkHead::new(&mut store, "head.link", dz + e, dz, &mut scratch);
        let node = Mlp::new(&mut store, "head.node", dz + e, dz, 1, &mut scratch);
        store.load_matching(&base);

        let w = param(&store, "head.link.0.weight")?;
        *store.get_mut(w) = widen_rows(base.get(param(&base, "head.link.0.weight")?), dz, e, 2);
        let mut classifier = ParamStore::new();
        let mut node_rng = ChaCha8Rng::seed_from_u64(seed);
        node_rng.set_stream(3);
        let base_node = Mlp::new(&mut classifier, "head.node", dz, dz, 1, &mut node_rng);
        *store.get_mut(node.hidden.weight) = widen_rows(classifier.get(base_node.hidden.weight), dz, e, 1);
        *store.get_mut(node.output.weight) = classifier.get(base_node.output.weight).clone();

        Ok((
            Self {
                encoder,
                fuser,
                link,
                node,
                task,
            },
            store,
        ))
    }

    /// `[z ‖ MLP(EI)]`, or `z` alone without fusion.
    fn enhanced(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        seq: Option<&CheckpointSequence>,
        z: Var,
        nodes: &[NodeId],
    ) -> Result<Var, FinetuneError> {
        let Some(fuser) = &self.fuser else {
            return Ok(z);
        };
        let seq = seq.ok_or(FinetuneError::NoCheckpoints)?;
        let (ei, _) = fuser.fuse(tape, p, seq, nodes, Some(z))?;
        let ei = fuser.transform(tape, p, ei)?;
        Ok(tape.concat_cols(&[z, ei])?)
    }

    /// Applies `pending`, then returns the task logits for `batch` and the
    /// memory view to commit. Link prediction: one positive logit per event
    /// followed by one per negative. Node classification: one logit per
    /// labelled event, with the labels.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        g: &TemporalGraph,
        memory: &MemoryStore,
        pending: &[Interaction],
        seq: Option<&CheckpointSequence>,
        batch: Range<usize>,
        negatives: &[NodeId],
    ) -> Result<(Option<(Var, Var)>, Option<(Var, Vec<f64>)>, crate::dgnn::MemoryView), FinetuneError> {
        let view = self.encoder.apply_interactions(tape, p, g, memory, pending)?;
        let events = &g.events()[batch];
        match self.task {
            Task::LinkPrediction => {
                let n = events.len();
                if negatives.len() != n {
                    return Err(FinetuneError::Config("one negative per event expected".into()));
                }
                let mut nodes: Vec<NodeId> = events.iter().map(|e| e.src).collect();
                nodes.extend(events.iter().map(|e| e.dst));
                nodes.extend_from_slice(negatives);
                let times: Vec<Time> = (0..3).flat_map(|_| events.iter().map(|e| e.timestamp)).collect();
                let z = self.encoder.embed(tape, p, g, memory, &view, &nodes, &times)?;
                let z = self.enhanced(tape, p, seq, z, &nodes)?;
                let src = tape.gather_rows(z, &(0..n).collect::<Vec<_>>())?;
                let dst = tape.gather_rows(z, &(n..2 * n).collect::<Vec<_>>())?;
                let neg = tape.gather_rows(z, &(2 * n..3 * n).collect::<Vec<_>>())?;
                let pos = self.link.logits(tape, p, src, dst)?;
                let neg = self.link.logits(tape, p, src, neg)?;
                Ok((Some((pos, neg)), None, view))
            }
            Task::NodeClassification => {
                let labelled: Vec<_> = events.iter().filter(|e| e.label.is_some()).collect();
                if labelled.is_empty() {
                    return Ok((None, None, view));
                }
                let nodes: Vec<NodeId> = labelled.iter().map(|e| e.src).collect();
                let times: Vec<Time> = labelled.iter().map(|e| e.timestamp).collect();
                let targets: Vec<f64> = labelled.iter().map(|e| if e.label == Some(true) { 1.0 } else { 0.0 }).collect();
                let z = self.encoder.embed(tape, p, g, memory, &view, &nodes, &times)?;
                let z = self.enhanced(tape, p, seq, z, &nodes)?;
                let logits = self.node.forward(tape, p, z)?;
                Ok((None, Some((logits, targets)), view))
            }
        }
    }

    /// Training loss of one batch; `None` when the batch has nothing to score.
    #[allow(clippy::too_many_arguments)]
    pub fn loss(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        g: &TemporalGraph,
        memory: &MemoryStore,
        pending: &[Interaction],
        seq: Option<&CheckpointSequence>,
        batch: Range<usize>,
        negatives: &[NodeId],
    ) -> Result<(Option<Var>, crate::dgnn::MemoryView), FinetuneError> {
        let (link, node, view) = self.forward(tape, p, g, memory, pending, seq, batch, negatives)?;
        let loss = match (link, node) {
            (Some((pos, neg)), _) => Some(tlp_loss(tape, pos, neg)?),
            (_, Some((logits, targets))) => {
                let l = tape.bce_with_logits(logits, &targets)?;
                Some(tape.mean(l)?)
            }
            _ => None,
        };
        Ok((loss, view))
    }

    /// Streams events `0..score.end` through zeroed memory with frozen
    /// parameters, in the same batches as training, and scores `score`.
    /// `negatives` pairs one destination with each event of `score`.
    #[allow(clippy::too_many_arguments)]
    pub fn score(
        &self,
        params: &ParamStore,
        g: &TemporalGraph,
        seq: Option<&CheckpointSequence>,
        score: Range<usize>,
        negatives: &[NodeId],
        batch_size: usize,
    ) -> Result<Scores, FinetuneError> {
        let d = self.encoder.memory_dim();
        let mut memory = MemoryStore::new(g.num_nodes(), d);
        let mut start = 0;
        while start < score.start {
            let end = (start + batch_size).min(score.start);
            let events: Vec<Interaction> = g.events()[start..end].iter().map(Interaction::from).collect();
            self.encoder.process(params, g, &mut memory, &events)?;
            start = end;
        }
        let mut out = Scores::default();
        let mut pending: Vec<Interaction> = Vec::new();
        let mut start = score.start;
        while start < score.end {
            let end = (start + batch_size).min(score.end);
            let negs = match self.task {
                Task::LinkPrediction => &negatives[start - score.start..end - score.start],
                Task::NodeClassification => &[][..],
            };
            let mut tape = Tape::new();
            let p = params.bind_frozen(&mut tape);
            let (link, node, view) = self.forward(&mut tape, &p, g, &memory, &pending, seq, start..end, negs)?;
            if let Some((pos, neg)) = link {
                for (a, b) in tape.value(pos).data().iter().zip(tape.value(neg).data()) {
                    out.logits.extend([*a, *b]);
                    out.labels.extend([true, false]);
                }
            }
            if let Some((logits, targets)) = node {
                out.logits.extend_from_slice(tape.value(logits).data());
                out.labels.extend(targets.iter().map(|&y| y == 1.0));
            }
            view.commit(&tape, &mut memory)?;
            pending = g.events()[start..end].iter().map(Interaction::from).collect();
            start = end;
        }
        Ok(out)
    }
}

/// Paired negatives for the validation and test segments. They depend on
/// the seed only, so runs that differ in mode or initialisation are scored
/// on the same pairs.
fn eval_negatives(g: &TemporalGraph, cfg: &FinetuneConfig) -> Result<(Vec<NodeId>, Vec<NodeId>), FinetuneError> {
    if cfg.task == Task::NodeClassification {
        return Ok((Vec::new(), Vec::new()));
    }
    let split = chrono_split(g, &cfg.split)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(5);
    let val = sample_negatives(g, split.segment(1), 1, &mut rng)?;
    let test = sample_negatives(g, split.segment(2), 1, &mut rng)?;
    Ok((val, test))
}

/// AUC, AP and micro-F1 of trained parameters on the test segment, scored
/// exactly as at the end of [`finetune`].
pub fn test_metrics(
    model: &DownstreamModel,
    params: &ParamStore,
    g: &TemporalGraph,
    seq: Option<&CheckpointSequence>,
    cfg: &FinetuneConfig,
) -> Result<(f64, f64, f64), FinetuneError> {
    let seq = if cfg.mode == EieMode::Full { None } else { seq };
    let split = chrono_split(g, &cfg.split)?;
    let (_, test_negs) = eval_negatives(g, cfg)?;
    let scores = model.score(params, g, seq, split.segment(2), &test_negs, cfg.batch_size)?;
    evaluate(&scores)
}

/// Fine-tunes on `g` (the downstream segment) and reports test metrics of
/// the epoch with the best validation AUC.
pub fn finetune(
    g: &TemporalGraph,
    backbone: &BackboneConfig,
    init: Init<'_>,
    seq: Option<&CheckpointSequence>,
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutput, FinetuneError> {
    cfg.validate()?;
    if cfg.task == Task::NodeClassification && !g.has_labels() {
        return Err(FinetuneError::NoLabels);
    }
    if cfg.mode != EieMode::Full && seq.is_none_or(CheckpointSequence::is_empty) {
        return Err(FinetuneError::NoCheckpoints);
    }
    let seq = if cfg.mode == EieMode::Full { None } else { seq };
    let split = chrono_split(g, &cfg.split)?;
    let (train, val) = (split.segment(0), split.segment(1));

    let (model, mut params) = DownstreamModel::build(backbone, init, cfg.task, cfg.mode, cfg.mlp_hidden, cfg.seed)?;
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr, &params);
    let mut train_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    train_rng.set_stream(4);
    let (val_negs, _) = eval_negatives(g, cfg)?;

    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut val_auc = Vec::new();
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        let mut memory = MemoryStore::new(g.num_nodes(), backbone.memory_dim);
        let mut pending: Vec<Interaction> = Vec::new();
        let mut start = train.start;
        let mut batch = 0;
        while start < train.end {
            let end = (start + cfg.batch_size).min(train.end);
            let negs = match cfg.task {
                Task::LinkPrediction => sample_negatives(g, start..end, 1, &mut train_rng)?,
                Task::NodeClassification => Vec::new(),
            };
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let (loss, view) = model.loss(&mut tape, &bound, g, &memory, &pending, seq, start..end, &negs)?;
            if let Some(loss) = loss {
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(FinetuneError::NonFinite { epoch, batch });
                }
                let grads = tape.backward(loss)?;
                let grads = bound.collect_grads(&grads, &params);
                optimizer.step(&mut params, &grads);
            }
            view.commit(&tape, &mut memory)?;
            pending = g.events()[start..end].iter().map(Interaction::from).collect();
            start = end;
            batch += 1;
        }
        let scores = model.score(&params, g, seq, val.clone(), &val_negs, cfg.batch_size)?;
        let current = auc(&scores.logits, &scores.labels)?;
        log::info!("finetune epoch {epoch}: validation auc {current:.4}");
        val_auc.push(current);
        if best.as_ref().is_none_or(|b| current > b.0) {
            best = Some((current, epoch, params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    let (auc, ap, micro_f1) = test_metrics(&model, &params, g, seq, cfg)?;
    Ok(FinetuneOutput {
        report: MetricsReport {
            task: cfg.task,
            mode: cfg.mode,
            seed: cfg.seed,
            auc,
            ap,
            micro_f1,
            epochs_run: val_auc.len(),
            best_epoch,
        },
        model,
        params,
        val_auc,
    })
}

#[cfg(test)]
mod tests;
