//! Shared fixtures for the acceptance suite.

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
