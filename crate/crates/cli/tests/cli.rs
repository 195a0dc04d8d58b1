use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn runs(&self) -> PathBuf {
        self.path("runs")
    }

    fn cpdg(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_cpdg"))
            .args(args)
            .env("CPDG_RUN_DIR", self.runs())
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Value {
        let out = self.cpdg(args);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        serde_json::from_slice(&out.stdout).unwrap()
    }

    /// Small synthetic graph plus a matching run config.
    fn small_run(&self) -> PathBuf {
        let generator = self.path("gen.json");
        std::fs::write(&generator, r#"{"num_users": 10, "num_items": 10, "num_events": 300, "horizon": 100.0, "flip_time": 50.0}"#).unwrap();
        self.ok(&["generate", "--generator", generator.to_str().unwrap(), "graph.ctdg", "--seed", "3"]);
        let cfg = self.path("run.json");
        let doc = serde_json::json!({
            "data": { "graph": self.path("graph.ctdg"), "split": [0.6, 0.4] },
            "backbone": { "preset": "tgn", "memory_dim": 6, "embed_dim": 5, "time_dim": 4, "embed_degree": 3 },
            "sampler": { "eta": 3, "epsilon": 2, "depth": 2 },
            "pretrain": { "epochs": 2, "batch_size": 50, "lr": 0.01, "checkpoints": 3 },
            "finetune": { "mode": "eie-gru", "epochs": 2, "batch_size": 40, "lr": 0.01 },
            "seed": 5
        });
        std::fs::write(&cfg, doc.to_string()).unwrap();
        cfg
    }
}

fn only_dir(root: &Path, prefix: &str) -> PathBuf {
    let dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

fn checkpoint_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.join("checkpoints"))
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.push(("params.cpar".into(), std::fs::read(dir.join("params.cpar")).unwrap()));
    files.push(("memory.cmem".into(), std::fs::read(dir.join("memory.cmem")).unwrap()));
    files.sort();
    files
}

#[test]
fn sample_debug_prints_recency_probabilities() {
    let ws = Workspace::new();
    std::fs::write(ws.path("events.csv"), "src,dst,timestamp\na,b,1\na,c,3\na,d,5\n").unwrap();
    ws.ok(&["ingest", "events.csv", "g.ctdg"]);
    let out = ws.ok(&["sample-debug", "--set", "data.graph=g.ctdg", "--set", "sampler.eta=2", "--set", "sampler.depth=1", "--node", "a", "--time", "9"]);
    // recencies (u - 1) / (9 - 1) = 0, 0.25, 0.5 under a unit temperature
    let weights: Vec<f64> = [0.0f64, 0.25, 0.5].iter().map(|r| r.exp()).collect();
    let total: f64 = weights.iter().sum();
    let chrono: Vec<f64> = serde_json::from_value(out["chrono_probs"].clone()).unwrap();
    let reverse: Vec<f64> = serde_json::from_value(out["reverse_chrono_probs"].clone()).unwrap();
    for k in 0..3 {
        assert!((chrono[k] - weights[k] / total).abs() < 1e-12);
        assert!((reverse[k] - weights[2 - k] / total).abs() < 1e-12);
    }
    assert_eq!(out["neighbors"][2]["node"], "d");
    let subgraphs = out["subgraphs"].as_array().unwrap();
    assert_eq!(subgraphs.len(), 4);
    assert_eq!(subgraphs[0]["root"], "a");
    assert_eq!(subgraphs[0]["members"].as_array().unwrap().len(), 3);
}

#[test]
fn exit_codes() {
    let ws = Workspace::new();
    let cfg = ws.small_run();
    let cfg = cfg.to_str().unwrap();

    let out = ws.cpdg(&["eval", "--config", cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no fine-tuned model"));

    let out = ws.cpdg(&["pretrain", "--config", cfg, "--set", "sampler.etaa=2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sampler"));
    let out = ws.cpdg(&["pretrain", "--config", cfg, "--set", "pretrain.lr=\"fast\""]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pretrain.lr"));

    let out = ws.cpdg(&["finetune", "--config", cfg]);
    assert_eq!(out.status.code(), Some(2), "finetune before pretrain");
    let out = ws.cpdg(&["pretrain", "--set", "data.graph=missing.ctdg"]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(ws.path("broken.ctdg"), b"not a graph").unwrap();
    let out = ws.cpdg(&["pretrain", "--set", "data.graph=broken.ctdg"]);
    assert_eq!(out.status.code(), Some(1));

    assert_eq!(ws.cpdg(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn pipeline_is_reproducible_and_guarded() {
    let ws = Workspace::new();
    let cfg = ws.small_run();
    let cfg = cfg.to_str().unwrap();

    ws.ok(&["pretrain", "--config", cfg]);
    let run = only_dir(&ws.runs(), "pretrain-");
    let first = checkpoint_bytes(&run);
    assert_eq!(first.iter().filter(|(n, _)| n.ends_with(".cmem")).count(), 4);

    // the effective config re-validates and names the same run
    let effective = run.join("config.json");
    let out = ws.cpdg(&["pretrain", "--config", effective.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "completed run needs --force");
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));

    ws.ok(&["pretrain", "--config", effective.to_str().unwrap(), "--force"]);
    assert_eq!(only_dir(&ws.runs(), "pretrain-"), run);
    assert_eq!(checkpoint_bytes(&run), first);
    assert!(!run.join("run.lock").exists());

    let tuned = ws.ok(&["finetune", "--config", cfg]);
    let evaluated = ws.ok(&["eval", "--config", cfg]);
    assert_eq!(tuned["auc"], evaluated["auc"]);
    assert_eq!(tuned["ap"], evaluated["ap"]);
    assert_eq!(evaluated["mode"], "eie-gru");

    let random = ws.ok(&["finetune", "--config", cfg, "--set", "finetune.init=random", "--set", "finetune.mode=full"]);
    assert!(random["auc"].as_f64().unwrap().is_finite());
    assert_eq!(std::fs::read_dir(ws.runs()).unwrap().count(), 3);
}
