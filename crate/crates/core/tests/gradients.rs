//! Central finite-difference checks of the analytic gradients in 64-bit mode.

use ndarray::Array2;
use rand::Rng;
use sim_core::clip::{ClipConfig, ClipItem, ClipModel, Modalities};
use sim_core::nn::gradcheck::check_gradients;
use sim_core::nn::{zeros_like, Params};
use sim_core::rng::stream;
use sim_core::sit::{SitConfig, SitEncoder};
use sim_core::vsmae::{masked_mse, sample_mask, VsmaeConfig, VsmaeModel};

const STEP: f64 = 1e-3;
const TOL: f64 = 1e-4;

fn tiny_sit(num_patches: usize) -> SitConfig {
    SitConfig {
        num_layers: 2,
        num_heads: 2,
        hidden_dim: 16,
        mlp_dim: 24,
        num_patches,
        frames: 2,
        patch_vertices: 6,
        dropout: 0.0,
        use_cls: true,
    }
}

fn check<P, L>(model: &mut P, grads: &P, count: usize, seed: u64, loss: L)
where
    P: Params<f64>,
    L: Fn(&P) -> f64,
{
    let report = check_gradients(model, grads, count, STEP, seed, loss);
    for (name, e, analytic, numeric, rel) in &report.samples {
        assert!(rel < &TOL, "{name}[{e}]: analytic {analytic:e}, numeric {numeric:e}, rel {rel:e}");
    }
}

#[test]
fn sit_encoder_gradients() {
    let cfg = tiny_sit(12);
    let mut rng = stream(11, &[]);
    let mut enc = SitEncoder::<f64>::new(cfg.clone(), &mut rng).unwrap();
    let inputs = Array2::from_shape_fn((12, cfg.input_dim()), |_| rng.random::<f64>() - 0.5);
    let w = Array2::from_shape_fn((13, 16), |_| rng.random::<f64>() - 0.5);
    let loss = |e: &SitEncoder<f64>| {
        let (out, _) = e.forward_full(inputs.view(), false, &mut stream(0, &[])).unwrap();
        (&out * &w).sum()
    };
    let (_, cache) = enc.forward_full(inputs.view(), false, &mut stream(0, &[])).unwrap();
    let mut grads = zeros_like(&enc);
    enc.backward_full(&cache, w.view(), &mut grads).unwrap();
    check(&mut enc, &grads, 40, 1, loss);
}

#[test]
fn vsmae_masked_mse_gradients() {
    let cfg = VsmaeConfig {
        encoder: tiny_sit(20),
        decoder_layers: 2,
    };
    let mut rng = stream(12, &[]);
    let mut model = VsmaeModel::<f64>::new(&cfg, &mut rng).unwrap();
    let inputs = Array2::from_shape_fn((20, 12), |_| rng.random::<f64>() - 0.5);
    let mask = sample_mask(20, 0.5, &mut rng).unwrap();
    let loss = |m: &VsmaeModel<f64>| {
        let (recon, _) = m.forward(inputs.view(), &mask, false, &mut stream(0, &[])).unwrap();
        masked_mse(recon.view(), inputs.view(), &mask).unwrap()
    };
    let mut grads = zeros_like(&model);
    model
        .loss_and_grad(inputs.view(), &mask, &mut stream(0, &[]), &mut grads)
        .unwrap();
    check(&mut model, &grads, 40, 2, loss);
}

#[test]
fn trimodal_clip_gradients_through_encoder_and_mappers() {
    let mut rng = stream(13, &[]);
    let enc = SitEncoder::<f64>::new(tiny_sit(20), &mut rng).unwrap();
    let cfg = ClipConfig {
        clip_dim: 8,
        tau: 0.5,
        dropout: 0.0,
    };
    let mut model = ClipModel::new(enc, 5, 3, &cfg, &mut rng).unwrap();
    let items: Vec<ClipItem<f64>> = (0..4)
        .map(|_| ClipItem {
            inputs: Array2::from_shape_fn((20, 12), |_| rng.random::<f64>() - 0.5),
            video: Some(Array2::from_shape_fn((4, 5), |_| rng.random::<f64>() - 0.5)),
            audio: Some(Array2::from_shape_fn((6, 3), |_| rng.random::<f64>() - 0.5)),
        })
        .collect();
    let loss = |m: &ClipModel<f64>| {
        let mut scratch = zeros_like(m);
        m.batch_loss_grad(&items, Modalities::FVA, true, 0, &mut scratch)
            .unwrap()
            .total
    };
    let mut grads = zeros_like(&model);
    model
        .batch_loss_grad(&items, Modalities::FVA, true, 0, &mut grads)
        .unwrap();
    check(&mut model, &grads, 40, 3, loss);
}
