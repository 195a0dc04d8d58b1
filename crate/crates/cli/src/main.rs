//! `cpdg`: ingest or generate a graph, pre-train, fine-tune, evaluate and
//! inspect the sampler.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

mod config;
mod run_dir;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use cpdg::finetune::{finetune, test_metrics, DownstreamModel, EieMode, Init};
use cpdg::graph::{chrono_split, generate_synthetic, ingest_csv, load_cache, save_cache, ColumnMap, GeneratorConfig, IdMap, NodeId, TemporalGraph};
use cpdg::pretrain::{pretrain, write_log, CheckpointSequence};
use cpdg::sampler::{chrono_probs, reverse_chrono_probs, sample_anchor, SampledSubgraph, SamplePlan};
use cpdg::tensor::ParamStore;

use config::{from_value, load_document, InitKind, RunConfig};
use run_dir::RunDir;

/// A usage, config or precondition error; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser)]
#[command(name = "cpdg", version, about = "Contrastive pre-training for dynamic graph encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; omitted sections take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set pretrain.epochs=3`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a CSV event log into a graph cache.
    Ingest {
        csv: PathBuf,
        out: PathBuf,
        #[arg(long, default_value = "src")]
        src: String,
        #[arg(long, default_value = "dst")]
        dst: String,
        #[arg(long, default_value = "timestamp")]
        timestamp: String,
        #[arg(long, default_value = "label")]
        label: String,
        #[arg(long, default_value = "f")]
        feature_prefix: String,
    },
    /// Write a synthetic interaction graph to a graph cache.
    Generate {
        /// Generator JSON; defaults when omitted.
        #[arg(long)]
        generator: Option<PathBuf>,
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Pre-train on the first data segment.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        force: bool,
    },
    /// Fine-tune on the downstream segment.
    Finetune {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        force: bool,
    },
    /// Re-score a fine-tuned model on the downstream test split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Print neighbor probabilities and the sampled subgraphs of one anchor.
    SampleDebug {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Node id as it appears in the source data.
        #[arg(long)]
        node: String,
        #[arg(long)]
        time: f64,
        /// Sampling key; the same key reproduces the same subgraphs.
        #[arg(long, default_value_t = 0)]
        key: u64,
    },
}

const PRETRAIN_DONE: &str = "pretrain.json";
const FINETUNE_DONE: &str = "metrics.json";

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<Usage>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Ingest {
            csv,
            out,
            src,
            dst,
            timestamp,
            label,
            feature_prefix,
        } => {
            if !csv.exists() {
                return Err(Usage(format!("{} does not exist", csv.display())).into());
            }
            let columns = ColumnMap {
                src,
                dst,
                timestamp,
                label,
                feature_prefix,
            };
            let ingested = ingest_csv(&csv, &columns)?;
            save_cache(&ingested.graph, &ingested.ids, &out)?;
            print_json(&json!({
                "cache": out,
                "nodes": ingested.graph.num_nodes(),
                "events": ingested.graph.num_events(),
                "skipped_self_loops": ingested.skipped_self_loops,
            }))
        }
        Command::Generate {
            generator,
            out,
            seed,
            overrides,
        } => {
            let gen: GeneratorConfig = from_value(load_document(generator.as_deref(), &overrides)?)?;
            let g = generate_synthetic(&gen, seed).map_err(|e| Usage(format!("generator config: {e}")))?;
            save_cache(&g, &IdMap::identity(g.num_nodes()), &out)?;
            print_json(&json!({ "cache": out, "nodes": g.num_nodes(), "events": g.num_events() }))
        }
        Command::Pretrain { cfg, force } => cmd_pretrain(&RunConfig::load(cfg.config.as_deref(), &cfg.overrides)?, force),
        Command::Finetune { cfg, force } => cmd_finetune(&RunConfig::load(cfg.config.as_deref(), &cfg.overrides)?, force),
        Command::Eval { cfg } => cmd_eval(&RunConfig::load(cfg.config.as_deref(), &cfg.overrides)?),
        Command::SampleDebug { cfg, node, time, key } => {
            cmd_sample_debug(&RunConfig::load(cfg.config.as_deref(), &cfg.overrides)?, &node, time, key)
        }
    }
}

fn print_json(v: &serde_json::Value) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn load_graph(cfg: &RunConfig) -> anyhow::Result<(TemporalGraph, IdMap)> {
    let path = cfg.graph_path()?;
    if !path.exists() {
        return Err(Usage(format!("graph cache {} does not exist", path.display())).into());
    }
    load_cache(path).with_context(|| format!("loading {}", path.display()))
}

/// Pre-training and downstream segments of the configured graph.
fn segments(cfg: &RunConfig) -> anyhow::Result<(TemporalGraph, TemporalGraph)> {
    let (g, _) = load_graph(cfg)?;
    let split = chrono_split(&g, &cfg.data.split)?;
    Ok((g.slice(split.segment(0)), g.slice(split.segment(1))))
}

fn pretrain_dir(cfg: &RunConfig) -> PathBuf {
    run_dir::root().join(format!("pretrain-{}", cfg.pretrain_key()))
}

fn finetune_dir(cfg: &RunConfig) -> PathBuf {
    run_dir::root().join(format!("finetune-{}", cfg.finetune_key()))
}

fn cmd_pretrain(cfg: &RunConfig, force: bool) -> anyhow::Result<()> {
    let (pre, _) = segments(cfg)?;
    let dir = RunDir::acquire(&format!("pretrain-{}", cfg.pretrain_key()), PRETRAIN_DONE, force)?;
    cfg.write(&dir.join("config.json"))?;
    let plan = SamplePlan::build(&pre, &cfg.sampler, 0..pre.num_events())?;
    plan.save(&dir.join("plan.cpln"))?;
    let backbone = cfg.backbone.resolve();
    let out = pretrain(&pre, &backbone, &cfg.sampler, &cfg.loss, &cfg.pretrain, Some(&plan))?;
    out.params.save(&dir.join("params.cpar"))?;
    out.memory.save(&dir.join("memory.cmem"), pre.end_time())?;
    let checkpoints = dir.join("checkpoints");
    std::fs::create_dir_all(&checkpoints)?;
    out.checkpoints.save(&checkpoints)?;
    write_log(&dir.join("log.jsonl"), &out.log)?;
    let last = out.log.last();
    let summary = json!({
        "run": dir.path,
        "events": pre.num_events(),
        "steps": out.log.len(),
        "checkpoints": out.checkpoints.len(),
        "final_loss": last.map(|r| r.l_pre),
    });
    std::fs::write(dir.join(PRETRAIN_DONE), serde_json::to_string_pretty(&summary)? + "\n")?;
    print_json(&summary)
}

/// Pre-trained parameters and snapshots, when the configuration uses them.
fn pretrained(cfg: &RunConfig) -> anyhow::Result<(Option<ParamStore>, Option<CheckpointSequence>)> {
    let needs_params = cfg.finetune.init == InitKind::Pretrained;
    let needs_snapshots = cfg.finetune.config.mode != EieMode::Full;
    if !needs_params && !needs_snapshots {
        return Ok((None, None));
    }
    let dir = pretrain_dir(cfg);
    if !dir.join(PRETRAIN_DONE).exists() {
        return Err(Usage(format!("no completed pre-training run at {}; run `cpdg pretrain` with this config first", dir.display())).into());
    }
    let params = needs_params.then(|| ParamStore::load(&dir.join("params.cpar"))).transpose()?;
    let seq = needs_snapshots.then(|| CheckpointSequence::load(&dir.join("checkpoints"))).transpose()?;
    Ok((params, seq))
}

fn cmd_finetune(cfg: &RunConfig, force: bool) -> anyhow::Result<()> {
    let (_, down) = segments(cfg)?;
    let (params, seq) = pretrained(cfg)?;
    let dir = RunDir::acquire(&format!("finetune-{}", cfg.finetune_key()), FINETUNE_DONE, force)?;
    cfg.write(&dir.join("config.json"))?;
    let init = params.as_ref().map_or(Init::Random, Init::Pretrained);
    let out = finetune(&down, &cfg.backbone.resolve(), init, seq.as_ref(), &cfg.finetune.config)?;
    out.params.save(&dir.join("params.cpar"))?;
    let mut report = serde_json::to_value(&out.report)?;
    report["val_auc"] = json!(out.val_auc);
    std::fs::write(dir.join(FINETUNE_DONE), serde_json::to_string_pretty(&report)? + "\n")?;
    print_json(&report)
}

fn cmd_eval(cfg: &RunConfig) -> anyhow::Result<()> {
    let dir = finetune_dir(cfg);
    let model_path = dir.join("params.cpar");
    if !model_path.exists() {
        return Err(Usage(format!("no fine-tuned model at {}; run `cpdg finetune` with this config first", model_path.display())).into());
    }
    let (_, down) = segments(cfg)?;
    let (_, seq) = pretrained(&RunConfig {
        finetune: config::FinetuneSection {
            init: InitKind::Random,
            ..cfg.finetune.clone()
        },
        ..cfg.clone()
    })?;
    let f = &cfg.finetune.config;
    let (model, mut params) = DownstreamModel::build(&cfg.backbone.resolve(), Init::Random, f.task, f.mode, f.mlp_hidden, f.seed)?;
    let saved = ParamStore::load(&model_path)?;
    if params.load_matching(&saved) != params.len() || saved.len() != params.len() {
        anyhow::bail!("{} does not match the configured model", model_path.display());
    }
    let mut scoring = f.clone();
    if let Some(b) = cfg.eval.batch_size {
        scoring.batch_size = b;
    }
    let (auc, ap, micro_f1) = test_metrics(&model, &params, &down, seq.as_ref(), &scoring)?;
    let report = json!({ "task": f.task, "mode": f.mode, "seed": f.seed, "auc": auc, "ap": ap, "micro_f1": micro_f1 });
    let name = format!("eval-{}.json", config::digest(&serde_json::to_value(&cfg.eval)?));
    std::fs::write(dir.join(name), serde_json::to_string_pretty(&report)? + "\n")?;
    print_json(&report)
}

fn subgraph_json(s: &SampledSubgraph, ids: &IdMap) -> serde_json::Value {
    let name = |n: NodeId| ids.original(n).unwrap_or("?").to_string();
    json!({
        "kind": s.kind,
        "root": name(s.root),
        "empty_neighborhood": s.empty_neighborhood,
        "members": s.members.iter().map(|m| json!({ "node": name(m.node), "hop": m.hop, "parent": m.parent })).collect::<Vec<_>>(),
    })
}

fn cmd_sample_debug(cfg: &RunConfig, node: &str, t: f64, key: u64) -> anyhow::Result<()> {
    let (g, ids) = load_graph(cfg)?;
    let anchor = ids
        .0
        .iter()
        .position(|s| s == node)
        .ok_or_else(|| Usage(format!("node {node} is not in the graph")))?
        as NodeId;
    let history = g.history_before(anchor, t);
    let times: Vec<f64> = history.iter().map(|e| e.time).collect();
    let (chrono, reverse) = if times.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        (chrono_probs(&times, t, cfg.sampler.tau)?, reverse_chrono_probs(&times, t, cfg.sampler.tau)?)
    };
    let set = sample_anchor(&g, &cfg.sampler, anchor, t, key);
    print_json(&json!({
        "node": node,
        "time": t,
        "tau": cfg.sampler.tau,
        "neighbors": history.iter().map(|e| json!({ "node": ids.original(e.node), "time": e.time })).collect::<Vec<_>>(),
        "chrono_probs": chrono,
        "reverse_chrono_probs": reverse,
        "subgraphs": set.as_array().iter().map(|s| subgraph_json(s, &ids)).collect::<Vec<_>>(),
    }))
}
