//! Short training runs on small synthetic worlds.

use sim_core::datagen::{make_world, split_experiment, Experiment, WorldConfig, DEFAULT_RATIOS};
use sim_core::icosphere::{build_patching, generate_icosphere};
use sim_core::rng::stream;
use sim_core::vsmae::{pretrain, PretrainSchedule, VsmaeConfig, VsmaeModel};

#[test]
fn short_pretraining_beats_the_mean_predictor() {
    let wc = WorldConfig {
        mesh_level: 3,
        ..WorldConfig::default()
    };
    let world = make_world(&wc).unwrap();
    let patching = build_patching(&generate_icosphere(3).unwrap(), &generate_icosphere(1).unwrap()).unwrap();
    let split = split_experiment(&wc, Experiment::E1, DEFAULT_RATIOS, 0).unwrap();
    let mut cfg = VsmaeConfig::default();
    cfg.encoder.patch_vertices = patching.patch_size();
    let mut model = VsmaeModel::<f32>::new(&cfg, &mut stream(0, &[1])).unwrap();
    let schedule = PretrainSchedule {
        iterations: 200,
        batch_size: 16,
        eval_every: 100,
        val_windows: 16,
        ..PretrainSchedule::default()
    };
    let report = pretrain(&mut model, &world, &patching, &split.train, &split.val, &schedule, |_| {}).unwrap();
    let (val, baseline) = (report.final_val.unwrap(), report.mean_baseline.unwrap());
    assert!(val < baseline, "masked MSE {val} vs mean predictor {baseline}");
}
