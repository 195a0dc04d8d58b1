//! Run configuration: one JSON document with a section per stage, plus
//! `--set section.key=value` overrides.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use cpdg::dgnn::{Backbone, BackboneConfig};
use cpdg::finetune::FinetuneConfig;
use cpdg::pretrain::{LossConfig, PretrainConfig};
use cpdg::sampler::SamplerConfig;

use crate::Usage;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub backbone: BackboneSection,
    pub sampler: SamplerConfig,
    pub loss: LossConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneSection,
    pub eval: EvalConfig,
    /// Copied into the sampler, pretrain and finetune seeds.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Graph cache written by `ingest` or `generate`.
    pub graph: Option<PathBuf>,
    /// Chronological pre-training / downstream proportions.
    pub split: [f64; 2],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            graph: None,
            split: [0.7, 0.3],
        }
    }
}

/// A backbone preset with its sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSection {
    pub preset: Backbone,
    pub memory_dim: usize,
    pub embed_dim: usize,
    pub time_dim: usize,
    pub embed_degree: usize,
    pub time_scale: f64,
}

impl Default for BackboneSection {
    fn default() -> Self {
        let b = BackboneConfig::preset(Backbone::Tgn);
        Self {
            preset: Backbone::Tgn,
            memory_dim: b.memory_dim,
            embed_dim: b.embed_dim,
            time_dim: b.time_dim,
            embed_degree: b.embed_degree,
            time_scale: b.time_scale,
        }
    }
}

impl BackboneSection {
    pub fn resolve(&self) -> BackboneConfig {
        let mut b = BackboneConfig::preset(self.preset).with_dims(self.memory_dim, self.embed_dim, self.time_dim);
        b.embed_degree = self.embed_degree;
        b.time_scale = self.time_scale;
        b
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    #[default]
    Pretrained,
    Random,
}

/// The fine-tuning keys plus `init`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FinetuneSection {
    pub init: InitKind,
    #[serde(flatten)]
    pub config: FinetuneConfig,
}

// Written by hand because a flattened struct would accept unknown keys.
impl<'de> Deserialize<'de> for FinetuneSection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let mut map = serde_json::Map::deserialize(d)?;
        let init = match map.remove("init") {
            Some(v) => InitKind::deserialize(v).map_err(|e| D::Error::custom(format!("init: {e}")))?,
            None => InitKind::default(),
        };
        let config = FinetuneConfig::deserialize(Value::Object(map)).map_err(D::Error::custom)?;
        Ok(Self { init, config })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Scoring batch size; defaults to the fine-tuning batch size.
    pub batch_size: Option<usize>,
}

/// Parses `section.key=value`. The value is read as JSON when it parses,
/// otherwise as a bare string.
fn apply_override(doc: &mut Value, item: &str) -> Result<(), Usage> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| Usage(format!("override `{item}` is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Usage(format!("override `{item}` has an empty key")));
    }
    let mut node = doc;
    for key in &keys[..keys.len() - 1] {
        if !node.is_object() {
            return Err(Usage(format!("{path}: `{key}` is not a section")));
        }
        node = node
            .as_object_mut()
            .expect("object")
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    match node.as_object_mut() {
        Some(map) => {
            map.insert(keys[keys.len() - 1].to_string(), value);
            Ok(())
        }
        None => Err(Usage(format!("{path}: parent is not a section"))),
    }
}

/// Deserialises with the path of the first offending key in the error.
pub fn from_value<T: serde::de::DeserializeOwned>(doc: Value) -> Result<T, Usage> {
    serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        Usage(format!("config error at `{path}`: {}", e.into_inner()))
    })
}

/// Reads `path` (or an empty document), applies overrides and parses.
pub fn load_document(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<Value> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Usage(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Usage(format!("{}: invalid JSON: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    for item in overrides {
        apply_override(&mut doc, item)?;
    }
    Ok(doc)
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut cfg: RunConfig = from_value(load_document(path, overrides)?)?;
        cfg.sampler.seed = cfg.seed;
        cfg.pretrain.seed = cfg.seed;
        cfg.finetune.config.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Usage> {
        let section = |name: &str, e: &dyn std::fmt::Display| Usage(format!("config error at `{name}`: {e}"));
        let [a, b] = self.data.split;
        if !(a > 0.0 && b > 0.0) || (a + b - 1.0).abs() > 1e-9 {
            return Err(Usage(format!("config error at `data.split`: expected two positive fractions summing to 1, got {:?}", self.data.split)));
        }
        self.backbone.resolve().validate().map_err(|e| section("backbone", &e))?;
        self.sampler.validate().map_err(|e| section("sampler", &e))?;
        self.loss.validate().map_err(|e| section("loss", &e))?;
        self.pretrain.validate().map_err(|e| section("pretrain", &e))?;
        self.finetune.config.validate().map_err(|e| section("finetune", &e))?;
        if self.eval.batch_size == Some(0) {
            return Err(Usage("config error at `eval.batch_size`: must be positive".into()));
        }
        Ok(())
    }

    pub fn graph_path(&self) -> Result<&Path, Usage> {
        self.data
            .graph
            .as_deref()
            .ok_or_else(|| Usage("config error at `data.graph`: no graph cache given".into()))
    }

    /// Hash of the sections that determine pre-training artifacts.
    pub fn pretrain_key(&self) -> String {
        digest(&serde_json::json!({
            "data": self.data,
            "backbone": self.backbone,
            "sampler": self.sampler,
            "loss": self.loss,
            "pretrain": self.pretrain,
            "seed": self.seed,
        }))
    }

    /// Hash of the sections that determine fine-tuning artifacts.
    pub fn finetune_key(&self) -> String {
        digest(&serde_json::json!({
            "pretrain": self.pretrain_key(),
            "finetune": self.finetune,
        }))
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// First 16 hex digits of the SHA-256 of the canonical JSON.
pub fn digest(v: &Value) -> String {
    let bytes = serde_json::to_vec(v).expect("serialisable");
    hex::encode(Sha256::digest(&bytes))[..16].to_string()
}
