use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgnn::{BackboneConfig, Interaction, MemoryStore};
use crate::graph::TemporalGraph;
use crate::sampler::{destination_key, sample_anchor, sample_event, SamplePlan, SamplerConfig, SubgraphSet};
use crate::tensor::{Optimizer, ParamStore, Tape};

use super::checkpoint::{capture_steps, CapturePoint, CheckpointSequence};
use super::model::{sample_negatives, PretrainModel};
use super::{LossConfig, PretrainConfig, PretrainError};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub l_eta: f64,
    pub l_eps: f64,
    pub l_tlp: f64,
    pub l_pre: f64,
    pub anchors: usize,
    pub skipped_temporal: usize,
    pub skipped_structural: usize,
    pub wall_ms: f64,
}

#[derive(Debug)]
pub struct PretrainOutput {
    pub model: PretrainModel,
    pub params: ParamStore,
    /// Memory after the last batch, pending messages applied.
    pub memory: MemoryStore,
    pub checkpoints: CheckpointSequence,
    pub log: Vec<BatchRecord>,
}

/// Trains encoder and heads on `g` in chronological mini-batches.
///
/// Subgraphs are replayed from `plan` when given (it must cover every event
/// with the same sampler config) and sampled per batch otherwise; both give
/// the same sets. Each batch's messages are applied on the next batch's
/// tape. Memory is zeroed at the start of every epoch unless
/// `memory_persist_across_epochs` is set.
pub fn pretrain(
    g: &TemporalGraph,
    backbone: &BackboneConfig,
    sampler: &SamplerConfig,
    loss: &LossConfig,
    cfg: &PretrainConfig,
    plan: Option<&SamplePlan>,
) -> Result<PretrainOutput, PretrainError> {
    backbone.validate()?;
    sampler.validate()?;
    loss.validate()?;
    cfg.validate()?;
    let num_events = g.num_events();
    if num_events == 0 {
        return Err(PretrainError::Config("empty pre-training graph".into()));
    }
    if let Some(plan) = plan {
        if plan.config != *sampler {
            return Err(PretrainError::Config("sample plan was built with a different sampler config".into()));
        }
        let covers = plan.sets.len() == num_events && plan.sets.first().is_some_and(|s| s.ordinal == 0);
        if !covers {
            return Err(PretrainError::Config(format!(
                "sample plan covers {} events, graph has {num_events}",
                plan.sets.len()
            )));
        }
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ParamStore::new();
    let model = PretrainModel::new(backbone, &mut params, &mut init_rng)?;
    let mut neg_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    neg_rng.set_stream(1);
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr, &params);

    let batches_per_epoch = num_events.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let captures = capture_steps(total_steps, cfg.checkpoints)?;
    let mut next_capture = 0;

    let mut memory = MemoryStore::new(g.num_nodes(), backbone.memory_dim);
    let mut pending: Vec<Interaction> = Vec::new();
    let mut checkpoints = CheckpointSequence::default();
    let mut log = Vec::with_capacity(total_steps);
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        if epoch > 0 {
            if cfg.memory_persist_across_epochs {
                model.encoder.process(&params, g, &mut memory, &pending)?;
                memory.reset_last_update();
            } else {
                memory = MemoryStore::new(g.num_nodes(), backbone.memory_dim);
            }
            pending.clear();
        }
        let mut epoch_loss = 0.0;
        for batch in 0..batches_per_epoch {
            let started = Instant::now();
            let range = batch * cfg.batch_size..((batch + 1) * cfg.batch_size).min(num_events);

            let owned: Vec<SubgraphSet> = range
                .clone()
                .into_par_iter()
                .flat_map_iter(|o| {
                    let e = g.event(o);
                    let src = match plan {
                        Some(_) => None,
                        None => Some(sample_event(g, sampler, o)),
                    };
                    let dst = cfg
                        .anchor_both_endpoints
                        .then(|| sample_anchor(g, sampler, e.dst, e.timestamp, destination_key(o)));
                    src.into_iter().chain(dst)
                })
                .collect();
            let sets: Vec<&SubgraphSet> = match plan {
                Some(plan) => {
                    let stride = if cfg.anchor_both_endpoints { 2 } else { 1 };
                    let mut refs = Vec::with_capacity(stride * range.len());
                    for (k, o) in range.clone().enumerate() {
                        refs.push(&plan.sets[o]);
                        if cfg.anchor_both_endpoints {
                            refs.push(&owned[k]);
                        }
                    }
                    refs
                }
                None => owned.iter().collect(),
            };
            let negatives = sample_negatives(g, range.clone(), loss.negatives_per_edge, &mut neg_rng)?;

            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let out = model.step_loss(&mut tape, &bound, g, &memory, &pending, range.clone(), &sets, &negatives, loss)?;
            let [l_eta, l_eps, l_tlp, l_pre] = out.values(&tape);
            if ![l_eta, l_eps, l_tlp, l_pre].iter().all(|v| v.is_finite()) {
                return Err(PretrainError::NonFinite {
                    epoch,
                    batch,
                    l_eta,
                    l_eps,
                    l_tlp,
                });
            }
            let grads = tape.backward(out.total)?;
            let grads = bound.collect_grads(&grads, &params);
            optimizer.step(&mut params, &grads);
            out.view.commit(&tape, &mut memory)?;
            pending = g.events()[range.clone()].iter().map(Interaction::from).collect();

            if captures.get(next_capture) == Some(&step) {
                let mut snap = memory.clone();
                model.encoder.process(&params, g, &mut snap, &pending)?;
                checkpoints.push(
                    snap,
                    CapturePoint {
                        epoch,
                        batch,
                        step,
                        time: g.event(range.end - 1).timestamp,
                    },
                );
                next_capture += 1;
            }

            epoch_loss += l_pre;
            let record = BatchRecord {
                epoch,
                batch,
                l_eta,
                l_eps,
                l_tlp,
                l_pre,
                anchors: out.anchors,
                skipped_temporal: out.skipped_temporal,
                skipped_structural: out.skipped_structural,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            };
            log::debug!(
                "epoch {epoch} batch {batch}: l_pre {l_pre:.6} (eta {l_eta:.4}, eps {l_eps:.4}, tlp {l_tlp:.4})"
            );
            log.push(record);
            step += 1;
        }
        log::info!("epoch {epoch}: mean l_pre {:.6}", epoch_loss / batches_per_epoch as f64);
    }
    model.encoder.process(&params, g, &mut memory, &pending)?;

    Ok(PretrainOutput {
        model,
        params,
        memory,
        checkpoints,
        log,
    })
}

/// Writes one JSON object per line.
pub fn write_log(path: &Path, log: &[BatchRecord]) -> Result<(), PretrainError> {
    let mut w = BufWriter::new(File::create(path)?);
    for record in log {
        serde_json::to_writer(&mut w, record)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<BatchRecord>, PretrainError> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
