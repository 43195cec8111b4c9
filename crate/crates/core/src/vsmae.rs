//! Video-surface masked autoencoder: tube masking over channel-concatenated
//! frames, encoding of visible patches, mask-embedding reinsertion and a
//! masked-patch MSE objective.

use std::io::Write;

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{normalize_window, WindowSource};
use crate::error::ensure_arg;
use crate::icosphere::PatchIndex;
use crate::nn::{
    accumulate, all_finite, warmup_cosine_lr, join, scale, zeros_like, AdamW, LayerNorm, LayerNormCache, Linear, Params,
    StackCache, TransformerStack,
};
use crate::rng::stream;
use crate::sit::{patch_inputs, SitConfig, SitEncoder};
use crate::{Real, Result, SimError};

/// Which patches are hidden from the encoder. One spatial mask covers all
/// frames of a window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPlan {
    pub masked: Vec<usize>,
    pub visible: Vec<usize>,
    pub num_patches: usize,
}

impl MaskPlan {
    pub fn new(mut masked: Vec<usize>, num_patches: usize) -> Result<Self> {
        masked.sort_unstable();
        masked.dedup();
        ensure_arg!(
            masked.last().is_none_or(|&m| m < num_patches),
            "masked index out of range for {num_patches} patches"
        );
        let mut is_masked = vec![false; num_patches];
        for &m in &masked {
            is_masked[m] = true;
        }
        let visible = (0..num_patches).filter(|&i| !is_masked[i]).collect();
        Ok(Self {
            masked,
            visible,
            num_patches,
        })
    }

    /// Degenerate plan with nothing masked.
    pub fn all_visible(num_patches: usize) -> Self {
        Self {
            masked: Vec::new(),
            visible: (0..num_patches).collect(),
            num_patches,
        }
    }

    pub fn ratio(&self) -> f64 {
        self.masked.len() as f64 / self.num_patches as f64
    }
}

/// Uniformly samples `round(ratio · n)` patches to mask.
pub fn sample_mask<R: Rng + ?Sized>(n: usize, ratio: f64, rng: &mut R) -> Result<MaskPlan> {
    ensure_arg!(ratio > 0.0 && ratio < 1.0, "mask ratio {ratio} outside (0, 1)");
    ensure_arg!(n >= 1, "cannot mask an empty sequence");
    let count = ((ratio * n as f64).round() as usize).min(n);
    let masked = rand::seq::index::sample(rng, n, count).into_vec();
    MaskPlan::new(masked, n)
}

/// Mean squared error over the masked patch rows only.
pub fn masked_mse<S: Real>(recon: ArrayView2<S>, target: ArrayView2<S>, mask: &MaskPlan) -> Result<f64> {
    Ok(masked_mse_grad(recon, target, mask)?.0)
}

/// [`masked_mse`] and its gradient with respect to `recon`.
pub fn masked_mse_grad<S: Real>(
    recon: ArrayView2<S>,
    target: ArrayView2<S>,
    mask: &MaskPlan,
) -> Result<(f64, Array2<S>)> {
    ensure_arg!(
        recon.shape() == target.shape(),
        "reconstruction {:?} and target {:?} differ in shape",
        recon.shape(),
        target.shape()
    );
    ensure_arg!(!mask.masked.is_empty(), "masked MSE is undefined for an empty mask");
    ensure_arg!(
        mask.num_patches == recon.nrows(),
        "mask covers {} patches, reconstruction has {}",
        mask.num_patches,
        recon.nrows()
    );
    let count = (mask.masked.len() * recon.ncols()) as f64;
    let mut grad = Array2::zeros(recon.raw_dim());
    let mut sum = 0.0;
    for &i in &mask.masked {
        for j in 0..recon.ncols() {
            let d = recon[(i, j)].f64() - target[(i, j)].f64();
            sum += d * d;
            grad[(i, j)] = S::c(2.0 * d / count);
        }
    }
    Ok((sum / count, grad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VsmaeConfig {
    pub encoder: SitConfig,
    /// Decoder depth; width, heads and MLP follow the encoder.
    pub decoder_layers: usize,
}

impl Default for VsmaeConfig {
    fn default() -> Self {
        Self {
            encoder: SitConfig::default(),
            decoder_layers: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct VsmaeModel<S: Real> {
    pub encoder: SitEncoder<S>,
    pub decoder: TransformerStack<S>,
    pub mask_embedding: Array2<S>,
    pub head_norm: LayerNorm<S>,
    pub head: Linear<S>,
}

#[derive(Clone, Debug)]
pub struct VsmaeCache<S: Real> {
    inputs: Array2<S>,
    mask: MaskPlan,
    encoder: StackCache<S>,
    decoder: StackCache<S>,
    head_in: Array2<S>,
    norm: LayerNormCache<S>,
}

impl<S: Real> VsmaeModel<S> {
    pub fn new<R: Rng + ?Sized>(config: &VsmaeConfig, rng: &mut R) -> Result<Self> {
        let enc = &config.encoder;
        let encoder = SitEncoder::new(enc.clone(), rng)?;
        let decoder = TransformerStack::new(
            config.decoder_layers,
            enc.hidden_dim,
            enc.num_heads,
            enc.mlp_dim,
            enc.dropout,
            rng,
        );
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let mask_embedding = Array2::from_shape_fn((1, enc.hidden_dim), |_| S::c(normal.sample(rng)));
        Ok(Self {
            encoder,
            decoder,
            mask_embedding,
            head_norm: LayerNorm::new(enc.hidden_dim),
            head: Linear::new(enc.hidden_dim, enc.input_dim(), rng),
        })
    }

    pub fn config(&self) -> &SitConfig {
        &self.encoder.config
    }

    /// Reconstructs every patch from the visible ones. Returns `N × p·T`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        inputs: ArrayView2<S>,
        mask: &MaskPlan,
        train: bool,
        rng: &mut R,
    ) -> Result<(Array2<S>, VsmaeCache<S>)> {
        let cfg = self.config();
        ensure_arg!(
            inputs.nrows() == cfg.num_patches && inputs.ncols() == cfg.input_dim(),
            "patch inputs {:?} do not match config ({} × {})",
            inputs.shape(),
            cfg.num_patches,
            cfg.input_dim()
        );
        ensure_arg!(
            mask.num_patches == cfg.num_patches,
            "mask plan covers {} patches, model expects {}",
            mask.num_patches,
            cfg.num_patches
        );
        let off = usize::from(cfg.use_cls);
        let enc_in = self.encoder.prepend_cls(self.encoder.embed_rows(inputs, &mask.visible));
        let (enc_out, enc_cache) = self.encoder.stack.forward(enc_in.view(), train, rng)?;

        let mut dec_in = Array2::zeros((cfg.num_patches + off, cfg.hidden_dim));
        if off == 1 {
            dec_in.row_mut(0).assign(&enc_out.row(0));
        }
        for (rank, &i) in mask.visible.iter().enumerate() {
            dec_in.row_mut(off + i).assign(&enc_out.row(off + rank));
        }
        for &i in &mask.masked {
            dec_in.row_mut(off + i).assign(&self.mask_embedding.row(0));
        }
        let pos = self.encoder.positions.slice(s![1 - off.., ..]);
        dec_in += &pos;

        let (dec_out, dec_cache) = self
            .decoder
            .forward(dec_in.view(), train, rng)
            .map_err(|e| offset_layer(e, cfg.num_layers))?;
        let (head_in, norm) = self.head_norm.forward(dec_out.slice(s![off.., ..]));
        let recon = self.head.forward(head_in.view());
        Ok((
            recon,
            VsmaeCache {
                inputs: inputs.to_owned(),
                mask: mask.clone(),
                encoder: enc_cache,
                decoder: dec_cache,
                head_in,
                norm,
            },
        ))
    }

    /// Accumulates parameter gradients for upstream `drecon`.
    pub fn backward(&self, cache: &VsmaeCache<S>, drecon: ArrayView2<S>, grads: &mut Self) -> Result<()> {
        let cfg = self.config();
        let off = usize::from(cfg.use_cls);
        let dhead = self.head.backward(cache.head_in.view(), drecon, &mut grads.head);
        let dpatch = self.head_norm.backward(&cache.norm, dhead.view(), &mut grads.head_norm);
        let mut ddec_out = Array2::zeros((cfg.num_patches + off, cfg.hidden_dim));
        ddec_out.slice_mut(s![off.., ..]).assign(&dpatch);
        let ddec_in = self.decoder.backward(&cache.decoder, ddec_out.view(), &mut grads.decoder)?;

        let mask = &cache.mask;
        let mut denc_out = Array2::zeros((mask.visible.len() + off, cfg.hidden_dim));
        if off == 1 {
            denc_out.row_mut(0).assign(&ddec_in.row(0));
        }
        for (rank, &i) in mask.visible.iter().enumerate() {
            denc_out.row_mut(off + rank).assign(&ddec_in.row(off + i));
        }
        {
            let mut g = grads.mask_embedding.row_mut(0);
            for &i in &mask.masked {
                g += &ddec_in.row(off + i);
            }
        }
        let denc_in = self
            .encoder
            .stack
            .backward(&cache.encoder, denc_out.view(), &mut grads.encoder.stack)?;
        self.encoder
            .embed_backward(cache.inputs.view(), &mask.visible, denc_in.view(), &mut grads.encoder);
        Ok(())
    }

    /// Reconstruction of a raw `V × T` window, normalized first.
    pub fn reconstruct_window<R: Rng + ?Sized>(
        &self,
        window: ArrayView2<f32>,
        patching: &PatchIndex,
        mask: &MaskPlan,
        rng: &mut R,
    ) -> Result<Array2<S>> {
        let inputs = patch_inputs::<S>(normalize_window(window).view(), patching)?;
        Ok(self.forward(inputs.view(), mask, false, rng)?.0)
    }

    /// Masked MSE and accumulated gradients for one normalized window.
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &self,
        inputs: ArrayView2<S>,
        mask: &MaskPlan,
        rng: &mut R,
        grads: &mut Self,
    ) -> Result<f64> {
        let (recon, cache) = self.forward(inputs, mask, true, rng)?;
        let (loss, drecon) = masked_mse_grad(recon.view(), inputs, mask)?;
        self.backward(&cache, drecon.view(), grads)?;
        Ok(loss)
    }
}

fn offset_layer(e: SimError, by: usize) -> SimError {
    match e {
        SimError::Numeric {
            layer: Some(l),
            message,
        } => SimError::Numeric {
            layer: Some(l + by),
            message,
        },
        other => other,
    }
}

impl<S: Real> Params<S> for VsmaeModel<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Array2<S>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
        f(join(prefix, "mask_embedding"), &self.mask_embedding);
        self.head_norm.visit(&join(prefix, "head_norm"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Array2<S>)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
        f(join(prefix, "mask_embedding"), &mut self.mask_embedding);
        self.head_norm.visit_mut(&join(prefix, "head_norm"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSchedule {
    pub iterations: usize,
    pub batch_size: usize,
    pub mask_ratio: f64,
    pub lr: f64,
    pub lr_min: f64,
    pub warmup: usize,
    pub weight_decay: f64,
    pub eval_every: usize,
    pub val_windows: usize,
    pub seed: u64,
}

impl Default for PretrainSchedule {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 64,
            mask_ratio: 0.5,
            lr: 6e-3,
            lr_min: 1e-5,
            warmup: 0,
            weight_decay: 0.05,
            eval_every: 200,
            val_windows: 48,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogSplit {
    Train,
    Val,
}

impl LogSplit {
    pub fn as_str(self) -> &'static str {
        match self {
            LogSplit::Train => "train",
            LogSplit::Val => "val",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub split: LogSplit,
    pub masked_mse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainReport {
    pub trace: Vec<LossRecord>,
    pub final_val: Option<f64>,
    /// Masked MSE of predicting the per-element training mean, on the same
    /// validation windows and masks.
    pub mean_baseline: Option<f64>,
}

pub fn write_loss_csv<W: Write>(mut out: W, trace: &[LossRecord]) -> std::io::Result<()> {
    writeln!(out, "iteration,split,masked_mse")?;
    for r in trace {
        writeln!(out, "{},{},{:.9}", r.iteration, r.split.as_str(), r.masked_mse)?;
    }
    Ok(())
}

/// Fixed validation windows with their masks.
pub struct ValidationSet {
    pub inputs: Vec<Array2<f32>>,
    pub masks: Vec<MaskPlan>,
}

impl ValidationSet {
    pub fn build<W: WindowSource + ?Sized>(
        source: &W,
        patching: &PatchIndex,
        ids: &[usize],
        count: usize,
        ratio: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = stream(seed, &[0x7a1]);
        let chosen: Vec<usize> = if ids.len() <= count {
            ids.to_vec()
        } else {
            let mut picks = rand::seq::index::sample(&mut rng, ids.len(), count).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|i| ids[i]).collect()
        };
        let mut inputs = Vec::with_capacity(chosen.len());
        let mut masks = Vec::with_capacity(chosen.len());
        for id in chosen {
            let w = source.window(id)?;
            inputs.push(patch_inputs::<f32>(normalize_window(w.view()).view(), patching)?);
            masks.push(sample_mask(patching.num_patches(), ratio, &mut rng)?);
        }
        Ok(Self { inputs, masks })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn masked_mse(&self, model: &VsmaeModel<f32>) -> Result<f64> {
        let mut rng = stream(0, &[]);
        let mut total = 0.0;
        for (x, m) in self.inputs.iter().zip(&self.masks) {
            let (recon, _) = model.forward(x.view(), m, false, &mut rng)?;
            total += masked_mse(recon.view(), x.view(), m)?;
        }
        Ok(total / self.len() as f64)
    }

    /// Masked MSE of a fixed prediction used for every window.
    pub fn constant_mse(&self, prediction: &Array2<f32>) -> Result<f64> {
        let mut total = 0.0;
        for (x, m) in self.inputs.iter().zip(&self.masks) {
            total += masked_mse(prediction.view(), x.view(), m)?;
        }
        Ok(total / self.len() as f64)
    }
}

/// Per-element mean of normalized patch inputs over `ids`.
pub fn mean_patch_inputs<W: WindowSource + ?Sized>(
    source: &W,
    patching: &PatchIndex,
    ids: &[usize],
) -> Result<Array2<f32>> {
    ensure_arg!(!ids.is_empty(), "mean over an empty id list");
    let mut acc: Option<Array2<f64>> = None;
    for &id in ids {
        let w = source.window(id)?;
        let x = patch_inputs::<f64>(normalize_window(w.view()).view(), patching)?;
        match acc.as_mut() {
            Some(a) => *a += &x,
            None => acc = Some(x),
        }
    }
    let n = ids.len() as f64;
    Ok(acc.expect("non-empty").mapv(|v| (v / n) as f32))
}

/// Trains `model` with AdamW and cosine decay on random windows from
/// `train_ids`, validating on a fixed subset of `val_ids`.
pub fn pretrain<W: WindowSource + Sync + ?Sized>(
    model: &mut VsmaeModel<f32>,
    source: &W,
    patching: &PatchIndex,
    train_ids: &[usize],
    val_ids: &[usize],
    schedule: &PretrainSchedule,
    mut on_record: impl FnMut(&LossRecord),
) -> Result<PretrainReport> {
    ensure_arg!(!train_ids.is_empty(), "pretraining needs a non-empty training set");
    ensure_arg!(schedule.batch_size >= 1, "batch size must be at least 1");
    let cfg = model.config().clone();
    ensure_arg!(
        patching.num_patches() == cfg.num_patches && patching.patch_size() == cfg.patch_vertices,
        "patching does not match the encoder config"
    );
    let val = if val_ids.is_empty() {
        None
    } else {
        Some(ValidationSet::build(
            source,
            patching,
            val_ids,
            schedule.val_windows,
            schedule.mask_ratio,
            schedule.seed,
        )?)
    };
    let mean_baseline = match &val {
        Some(v) => {
            let mean = mean_patch_inputs(source, patching, train_ids)?;
            Some(v.constant_mse(&mean)?)
        }
        None => None,
    };

    let mut opt = AdamW::new(schedule.weight_decay);
    let mut trace = Vec::new();
    let mut final_val = None;
    let mut record = |r: LossRecord, trace: &mut Vec<LossRecord>| {
        on_record(&r);
        trace.push(r);
    };
    for it in 0..schedule.iterations {
        let lr = warmup_cosine_lr(it, schedule.iterations, schedule.warmup, schedule.lr, schedule.lr_min);
        let mut pick = stream(schedule.seed, &[1, it as u64]);
        let batch: Vec<usize> = (0..schedule.batch_size)
            .map(|_| train_ids[pick.random_range(0..train_ids.len())])
            .collect();
        let shared: &VsmaeModel<f32> = model;
        let items: Vec<Result<(f64, VsmaeModel<f32>)>> = batch
            .par_iter()
            .enumerate()
            .map(|(b, &id)| {
                let mut rng = stream(schedule.seed, &[2, it as u64, b as u64]);
                let w = source.window(id)?;
                let x = patch_inputs::<f32>(normalize_window(w.view()).view(), patching)?;
                let mask = sample_mask(cfg.num_patches, schedule.mask_ratio, &mut rng)?;
                let mut g = zeros_like(shared);
                let loss = shared.loss_and_grad(x.view(), &mask, &mut rng, &mut g)?;
                Ok((loss, g))
            })
            .collect();
        let mut grads = zeros_like(&*model);
        let mut loss = 0.0;
        for item in items {
            let (l, g) = item?;
            loss += l;
            accumulate(&mut grads, &g);
        }
        loss /= schedule.batch_size as f64;
        scale(&mut grads, 1.0 / schedule.batch_size as f32);
        let mut finite = loss.is_finite();
        grads.visit("", &mut |_, t| finite &= all_finite(t));
        if !finite {
            return Err(SimError::numeric(format!("vsMAE diverged at iteration {it} (loss {loss})")));
        }
        opt.step(model, &grads, lr);
        record(
            LossRecord {
                iteration: it,
                split: LogSplit::Train,
                masked_mse: loss,
            },
            &mut trace,
        );
        let last = it + 1 == schedule.iterations;
        if let Some(v) = &val {
            if last || (schedule.eval_every > 0 && (it + 1) % schedule.eval_every == 0) {
                let mse = v.masked_mse(model)?;
                final_val = Some(mse);
                record(
                    LossRecord {
                        iteration: it,
                        split: LogSplit::Val,
                        masked_mse: mse,
                    },
                    &mut trace,
                );
            }
        }
    }
    Ok(PretrainReport {
        trace,
        final_val,
        mean_baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param_count;
    use crate::rng::stream;

    fn tiny() -> VsmaeConfig {
        VsmaeConfig {
            encoder: SitConfig {
                num_layers: 2,
                num_heads: 2,
                hidden_dim: 16,
                mlp_dim: 24,
                num_patches: 20,
                frames: 2,
                patch_vertices: 6,
                dropout: 0.0,
                use_cls: true,
            },
            decoder_layers: 1,
        }
    }

    #[test]
    fn mask_counts_follow_ratio() {
        let mut rng = stream(0, &[]);
        for (ratio, expect) in [(0.5, 640), (0.25, 320), (0.75, 960), (0.9, 1152)] {
            let m = sample_mask(1280, ratio, &mut rng).unwrap();
            assert_eq!(m.masked.len(), expect);
            assert_eq!(m.visible.len(), 1280 - expect);
            assert!(m.masked.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn mask_is_seeded() {
        let a = sample_mask(100, 0.5, &mut stream(9, &[])).unwrap();
        let b = sample_mask(100, 0.5, &mut stream(9, &[])).unwrap();
        assert_eq!(a, b);
        for r in [0.0, 1.0, -0.1, 1.5] {
            assert!(matches!(sample_mask(10, r, &mut stream(0, &[])), Err(SimError::Argument(_))));
        }
    }

    #[test]
    fn masked_mse_closed_forms() {
        let mask = MaskPlan::new(vec![0, 2], 3).unwrap();
        let t = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64);
        assert_eq!(masked_mse(t.view(), t.view(), &mask).unwrap(), 0.0);
        let r = &t + 1.0;
        assert_eq!(masked_mse(r.view(), t.view(), &mask).unwrap(), 1.0);
        let empty = MaskPlan::all_visible(3);
        assert!(matches!(masked_mse(t.view(), t.view(), &empty), Err(SimError::Argument(_))));
    }

    #[test]
    fn masked_mse_matches_double_loop() {
        let mut rng = stream(1, &[]);
        let r = Array2::from_shape_fn((3, 5), |_| rng.random::<f64>());
        let t = Array2::from_shape_fn((3, 5), |_| rng.random::<f64>());
        let mask = MaskPlan::new(vec![1, 2], 3).unwrap();
        let mut sum = 0.0;
        for i in [1usize, 2] {
            for j in 0..5 {
                sum += (r[(i, j)] - t[(i, j)]).powi(2);
            }
        }
        let oracle = sum / 10.0;
        assert!((masked_mse(r.view(), t.view(), &mask).unwrap() - oracle).abs() < 1e-7);
    }

    #[test]
    fn visible_targets_do_not_enter_loss() {
        let mut rng = stream(2, &[]);
        let r = Array2::from_shape_fn((6, 4), |_| rng.random::<f64>());
        let t = Array2::from_shape_fn((6, 4), |_| rng.random::<f64>());
        let mask = MaskPlan::new(vec![0, 3, 4], 6).unwrap();
        let mut t2 = t.clone();
        for &i in &mask.visible {
            t2.row_mut(i).fill(100.0);
        }
        assert_eq!(
            masked_mse(r.view(), t.view(), &mask).unwrap(),
            masked_mse(r.view(), t2.view(), &mask).unwrap()
        );
    }

    #[test]
    fn output_shape_and_mask_embedding_sensitivity() {
        let cfg = tiny();
        let mut rng = stream(3, &[]);
        let mut model = VsmaeModel::<f64>::new(&cfg, &mut rng).unwrap();
        let x = Array2::from_shape_fn((20, 12), |_| rng.random::<f64>() - 0.5);
        let mask = sample_mask(20, 0.5, &mut rng).unwrap();
        let (a, _) = model.forward(x.view(), &mask, false, &mut rng).unwrap();
        assert_eq!(a.dim(), (20, 12));
        // A uniform shift would be absorbed by the layer norms.
        model.mask_embedding.mapv_inplace(|v| v + rng.random::<f64>() - 0.5);
        let (b, _) = model.forward(x.view(), &mask, false, &mut rng).unwrap();
        for &i in &mask.masked {
            assert!((&a.row(i) - &b.row(i)).iter().any(|d| d.abs() > 1e-9));
        }
    }

    #[test]
    fn all_visible_plan_runs_full_sequence() {
        let cfg = tiny();
        let mut rng = stream(4, &[]);
        let model = VsmaeModel::<f64>::new(&cfg, &mut rng).unwrap();
        let x = Array2::from_shape_fn((20, 12), |_| rng.random::<f64>());
        let (recon, cache) = model
            .forward(x.view(), &MaskPlan::all_visible(20), false, &mut rng)
            .unwrap();
        assert_eq!(recon.dim(), (20, 12));
        assert_eq!(cache.head_in.nrows(), 20);
    }

    #[test]
    fn param_count_is_encoder_plus_decoder() {
        let cfg = tiny();
        let model = VsmaeModel::<f32>::new(&cfg, &mut stream(5, &[])).unwrap();
        let d = 16;
        let block = 2 * 2 * d + 4 * (d * d + d) + (d * 24 + 24) + (24 * d + d);
        let expect = cfg.encoder.parameter_count() + block + d + 2 * d + (d * 12 + 12);
        assert_eq!(param_count(&model), expect);
    }

    #[test]
    fn loss_csv_format() {
        let mut buf = Vec::new();
        let trace = [LossRecord {
            iteration: 3,
            split: LogSplit::Val,
            masked_mse: 0.25,
        }];
        write_loss_csv(&mut buf, &trace).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iteration,split,masked_mse\n3,val,0.250000000\n");
    }
}
