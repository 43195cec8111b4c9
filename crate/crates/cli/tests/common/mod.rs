#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

/// A run config small enough for the whole pipeline to finish in seconds.
pub fn tiny_config(seed: u64) -> Value {
    json!({
        "seed": seed,
        "patch_gap": 1,
        "world": {
            "num_subjects": 3,
            "num_movies": 2,
            "clips_per_movie": 20,
            "mesh_level": 2,
            "harmonic_degree": 4
        },
        "model": { "num_layers": 1, "num_heads": 2, "hidden_dim": 16, "mlp_dim": 32 },
        "vsmae": { "schedule": { "iterations": 12, "batch_size": 4, "eval_every": 6, "val_windows": 4 } },
        "clip": {
            "config": { "clip_dim": 16 },
            "schedule": { "iterations": 12, "batch_size": 8 }
        },
        "eval": {
            "split_ratios": [1.0, 1.0, 1.0],
            "tasks": [
                { "direction": "f->V", "m": 4, "mode": "soft", "trials": 200 },
                { "direction": "A->f", "m": 4, "mode": "soft", "trials": 200 },
                { "direction": "f->V", "m": 4, "mode": "hard", "trials": 200 }
            ],
            "ridge_lambdas": [1.0, 100.0],
            "eval_seeds": 3
        },
        "lag": { "lags": [1, 6] }
    })
}

pub fn write_config(dir: &Path, cfg: &Value) -> std::path::PathBuf {
    let path = dir.join("config.in.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

pub fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sim"))
        .args(args)
        .env_remove("SIM_SEED")
        .output()
        .expect("sim binary runs")
}

pub fn sim_ok(args: &[&str]) -> String {
    let out = sim(args);
    assert!(
        out.status.success(),
        "sim {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Runs synth → pretrain → align → eval into `dir`.
pub fn run_pipeline(config: &Path, dir: &Path) {
    let c = config.to_str().unwrap();
    let d = |name: &str| dir.join(name).to_str().unwrap().to_string();
    sim_ok(&["--config", c, "synth", "--out", &d("data")]);
    let dataset = d("data/dataset.simd");
    sim_ok(&["--config", c, "pretrain", "--dataset", &dataset, "--out", &d("pretrain")]);
    sim_ok(&[
        "--config",
        c,
        "align",
        "--dataset",
        &dataset,
        "--checkpoint",
        &d("pretrain/vsmae.simc"),
        "--out",
        &d("align"),
    ]);
    sim_ok(&[
        "--config",
        c,
        "eval",
        "--dataset",
        &dataset,
        "--checkpoint",
        &d("align/clip.simc"),
        "--out",
        &d("eval"),
    ]);
}

pub const RESULT_FILES: [&str; 5] = [
    "pretrain/pretrain_loss.csv",
    "align/align_loss.csv",
    "eval/retrieval.csv",
    "eval/ttest.csv",
    "align/clip.simc",
];
