//! Multimodal mappers into a shared unit-norm space and the tri-modal
//! contrastive objective.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{normalize_window, TripletSource};
use crate::error::ensure_arg;
use crate::icosphere::PatchIndex;
use crate::nn::{
    all_finite, cosine_lr, dropout, dropout_backward, gelu, gelu_grad, join, param_count, zeros_like, AdamW, Linear,
    Params,
};
use crate::rng::stream;
use crate::sit::{patch_inputs, EncoderCache, SitEncoder};
use crate::{Real, Result, SimError};

const DIAGONAL_FLOOR: f64 = 1e-12;

static CLAMP_EVENTS: AtomicUsize = AtomicUsize::new(0);

/// Number of diagonal probabilities clamped by [`directional_loss`] so far.
pub fn clamp_events() -> usize {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapperConfig {
    pub input_dim: usize,
    pub clip_dim: usize,
    pub dropout: f64,
}

/// `h = proj(x)`, `h += Drop(fc2(GeLU(fc1(h))))`, mean over tokens, L2 norm.
#[derive(Clone, Debug)]
pub struct Mapper<S: Real> {
    pub proj: Linear<S>,
    pub fc1: Linear<S>,
    pub fc2: Linear<S>,
    pub dropout: f64,
}

#[derive(Clone, Debug)]
pub struct MapperCache<S: Real> {
    x: Array2<S>,
    h0: Array2<S>,
    z: Array2<S>,
    a: Array2<S>,
    mask: Option<Array2<S>>,
    y: Array1<S>,
    norm: S,
}

impl<S: Real> Mapper<S> {
    pub fn new<R: Rng + ?Sized>(config: &MapperConfig, rng: &mut R) -> Result<Self> {
        ensure_arg!(
            config.input_dim >= 1 && config.clip_dim >= 1,
            "mapper dims must be at least 1"
        );
        ensure_arg!(
            (0.0..1.0).contains(&config.dropout),
            "dropout {} outside [0, 1)",
            config.dropout
        );
        Ok(Self {
            proj: Linear::new(config.input_dim, config.clip_dim, rng),
            fc1: Linear::new(config.clip_dim, config.clip_dim, rng),
            fc2: Linear::new(config.clip_dim, config.clip_dim, rng),
            dropout: config.dropout,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.proj.input_dim()
    }

    pub fn clip_dim(&self) -> usize {
        self.proj.output_dim()
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<S>,
        train: bool,
        rng: &mut R,
    ) -> Result<(Array1<S>, MapperCache<S>)> {
        ensure_arg!(x.nrows() >= 1, "mapper needs at least one token");
        ensure_arg!(
            x.ncols() == self.input_dim(),
            "mapper expects width {}, got {}",
            self.input_dim(),
            x.ncols()
        );
        let h0 = self.proj.forward(x);
        let z = self.fc1.forward(h0.view());
        let a = z.mapv(gelu);
        let mut r = self.fc2.forward(a.view());
        let mask = dropout(&mut r, self.dropout, train, rng);
        let h = &h0 + &r;
        let mean = h.mean_axis(Axis(0)).expect("non-empty");
        let norm = mean.iter().map(|&v| v * v).sum::<S>().sqrt();
        if !(norm.is_finite() && norm > S::zero()) {
            return Err(SimError::numeric(format!("mapper output norm is {norm}")));
        }
        let y = &mean / norm;
        Ok((
            y.clone(),
            MapperCache {
                x: x.to_owned(),
                h0,
                z,
                a,
                mask,
                y,
                norm,
            },
        ))
    }

    /// Accumulates parameter gradients and returns the gradient at the input.
    pub fn backward(&self, cache: &MapperCache<S>, dy: ArrayView1<S>, grads: &mut Self) -> Array2<S> {
        let y = &cache.y;
        let proj = y.dot(&dy);
        let dmean = (&dy - &(y * proj)) / cache.norm;
        let n = cache.x.nrows();
        let row = &dmean / S::c(n as f64);
        let dh = Array2::from_shape_fn((n, row.len()), |(_, j)| row[j]);
        let dr = dropout_backward(&dh, &cache.mask);
        let da = self.fc2.backward(cache.a.view(), dr.view(), &mut grads.fc2);
        let dz = &da * &cache.z.mapv(gelu_grad);
        let dh0 = &dh + &self.fc1.backward(cache.h0.view(), dz.view(), &mut grads.fc1);
        self.proj.backward(cache.x.view(), dh0.view(), &mut grads.proj)
    }

    pub fn embed(&self, x: ArrayView2<S>) -> Result<Array1<S>> {
        let mut rng = stream(0, &[]);
        Ok(self.forward(x, false, &mut rng)?.0)
    }
}

impl<S: Real> Params<S> for Mapper<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Array2<S>)) {
        self.proj.visit(&join(prefix, "proj"), f);
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Array2<S>)) {
        self.proj.visit_mut(&join(prefix, "proj"), f);
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

fn check_unit_rows(y: ArrayView2<f64>, name: &str) -> Result<()> {
    for (i, row) in y.rows().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        ensure_arg!(
            (n - 1.0).abs() <= 1e-3,
            "{name} row {i} has norm {n}, expected unit norm"
        );
    }
    Ok(())
}

/// `Z[i][j] = ⟨a_i, b_j⟩` for unit-norm rows.
pub fn similarity_matrix(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    ensure_arg!(
        a.ncols() == b.ncols(),
        "embedding widths differ ({} vs {})",
        a.ncols(),
        b.ncols()
    );
    check_unit_rows(a, "left")?;
    check_unit_rows(b, "right")?;
    Ok(a.dot(&b.t()))
}

/// Row-wise temperature softmax of `z / tau`.
pub fn clip_probabilities(z: &Array2<f64>, tau: f64) -> Result<Array2<f64>> {
    ensure_arg!(tau > 0.0 && tau.is_finite(), "temperature {tau} must be positive");
    let mut p = z / tau;
    for mut row in p.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    Ok(p)
}

/// `−(1/M) Σ log P[i][i]`. Diagonal entries below 1e-12 are clamped and
/// counted in [`clamp_events`].
pub fn directional_loss(p: &Array2<f64>) -> f64 {
    let m = p.nrows();
    if m == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..m {
        let mut d = p[(i, i)];
        if d < DIAGONAL_FLOOR {
            CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
            log::warn!("clamping diagonal probability {d:e} at row {i}");
            d = DIAGONAL_FLOOR;
        }
        sum -= d.ln();
    }
    sum / m as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modalities {
    #[serde(rename = "fV")]
    FV,
    #[serde(rename = "fA")]
    FA,
    #[serde(rename = "fVA")]
    FVA,
}

impl Modalities {
    pub fn has_video(self) -> bool {
        matches!(self, Modalities::FV | Modalities::FVA)
    }

    pub fn has_audio(self) -> bool {
        matches!(self, Modalities::FA | Modalities::FVA)
    }
}

impl FromStr for Modalities {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fV" | "fv" => Ok(Modalities::FV),
            "fA" | "fa" => Ok(Modalities::FA),
            "fVA" | "fva" => Ok(Modalities::FVA),
            _ => Err(SimError::Argument(format!("unknown modalities {s:?}"))),
        }
    }
}

impl fmt::Display for Modalities {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modalities::FV => "fV",
            Modalities::FA => "fA",
            Modalities::FVA => "fVA",
        })
    }
}

/// Matched embeddings: row `i` of every present modality comes from triplet `i`.
#[derive(Clone, Debug)]
pub struct ClipBatch {
    pub y_f: Array2<f64>,
    pub y_v: Option<Array2<f64>>,
    pub y_a: Option<Array2<f64>>,
    pub tau: f64,
}

/// Direction labels in component order.
pub const DIRECTIONS: [&str; 6] = ["fV", "Vf", "fA", "Af", "AV", "VA"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// `fV, Vf, fA, Af, AV, VA`; `None` for directions not in the objective.
    pub directions: [Option<f64>; 6],
}

#[derive(Clone, Debug)]
pub struct LossGrads {
    pub d_f: Array2<f64>,
    pub d_v: Option<Array2<f64>>,
    pub d_a: Option<Array2<f64>>,
}

fn pairs(modalities: Modalities) -> &'static [(usize, usize, usize)] {
    // (direction index, from, to) with modality ids f=0, V=1, A=2.
    match modalities {
        Modalities::FV => &[(0, 0, 1), (1, 1, 0)],
        Modalities::FA => &[(2, 0, 2), (3, 2, 0)],
        Modalities::FVA => &[(0, 0, 1), (1, 1, 0), (2, 0, 2), (3, 2, 0), (4, 2, 1), (5, 1, 2)],
    }
}

/// Mean of the directional losses for the chosen modalities (six for
/// `FVA`, two otherwise), with gradients at the embeddings.
pub fn trimodal_loss_grad(batch: &ClipBatch, modalities: Modalities) -> Result<(LossBreakdown, LossGrads)> {
    let m = batch.y_f.nrows();
    ensure_arg!(m >= 1, "empty CLIP batch");
    let ys: [Option<&Array2<f64>>; 3] = [Some(&batch.y_f), batch.y_v.as_ref(), batch.y_a.as_ref()];
    for (k, y) in ys.iter().enumerate() {
        if let Some(y) = y {
            ensure_arg!(y.nrows() == m, "modality {k} has {} rows, expected {m}", y.nrows());
        }
    }
    let mut grads: [Option<Array2<f64>>; 3] = [
        Some(Array2::zeros(batch.y_f.raw_dim())),
        batch.y_v.as_ref().map(|y| Array2::zeros(y.raw_dim())),
        batch.y_a.as_ref().map(|y| Array2::zeros(y.raw_dim())),
    ];
    let used = pairs(modalities);
    let weight = 1.0 / used.len() as f64;
    let mut directions = [None; 6];
    let mut total = 0.0;
    for &(d, a, b) in used {
        let (ya, yb) = match (ys[a], ys[b]) {
            (Some(ya), Some(yb)) => (ya, yb),
            _ => {
                return Err(SimError::Argument(format!(
                    "direction {} needs embeddings that the batch lacks",
                    DIRECTIONS[d]
                )))
            }
        };
        let z = similarity_matrix(ya.view(), yb.view())?;
        let p = clip_probabilities(&z, batch.tau)?;
        let l = directional_loss(&p);
        directions[d] = Some(l);
        total += weight * l;
        // dL/dZ = (P − I) / (M τ)
        let mut g = p;
        for i in 0..m {
            g[(i, i)] -= 1.0;
        }
        g *= weight / (m as f64 * batch.tau);
        let da = g.dot(yb);
        let db = g.t().dot(ya);
        *grads[a].as_mut().expect("present") += &da;
        *grads[b].as_mut().expect("present") += &db;
    }
    let [d_f, d_v, d_a] = grads;
    Ok((
        LossBreakdown { total, directions },
        LossGrads {
            d_f: d_f.expect("present"),
            d_v,
            d_a,
        },
    ))
}

pub fn trimodal_loss(batch: &ClipBatch, modalities: Modalities) -> Result<LossBreakdown> {
    Ok(trimodal_loss_grad(batch, modalities)?.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainRegime {
    Frozen,
    Scratch,
    Finetune,
}

impl FromStr for TrainRegime {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "frozen" => Ok(TrainRegime::Frozen),
            "scratch" => Ok(TrainRegime::Scratch),
            "finetune" => Ok(TrainRegime::Finetune),
            _ => Err(SimError::Argument(format!("unknown regime {s:?}"))),
        }
    }
}

impl fmt::Display for TrainRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainRegime::Frozen => "frozen",
            TrainRegime::Scratch => "scratch",
            TrainRegime::Finetune => "finetune",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClipConfig {
    pub clip_dim: usize,
    pub tau: f64,
    pub dropout: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            clip_dim: 256,
            tau: 0.07,
            dropout: 0.0,
        }
    }
}

/// fMRI encoder plus the three modality mappers.
#[derive(Clone, Debug)]
pub struct ClipModel<S: Real> {
    pub encoder: SitEncoder<S>,
    pub fmri: Mapper<S>,
    pub video: Mapper<S>,
    pub audio: Mapper<S>,
    pub tau: f64,
}

/// Activations of one triplet's forward pass.
pub struct TripletCache<S: Real> {
    encoder: Option<EncoderCache<S>>,
    fmri: MapperCache<S>,
    video: Option<MapperCache<S>>,
    audio: Option<MapperCache<S>>,
}

/// Unit-norm embeddings of one triplet.
pub struct TripletEmbedding<S: Real> {
    pub fmri: Array1<S>,
    pub video: Option<Array1<S>>,
    pub audio: Option<Array1<S>>,
}

impl<S: Real> ClipModel<S> {
    pub fn new<R: Rng + ?Sized>(
        encoder: SitEncoder<S>,
        video_dim: usize,
        audio_dim: usize,
        config: &ClipConfig,
        rng: &mut R,
    ) -> Result<Self> {
        ensure_arg!(config.tau > 0.0, "temperature must be positive");
        let mapper = |input_dim, rng: &mut R| {
            Mapper::new(
                &MapperConfig {
                    input_dim,
                    clip_dim: config.clip_dim,
                    dropout: config.dropout,
                },
                rng,
            )
        };
        let fmri = mapper(encoder.hidden_dim(), rng)?;
        let video = mapper(video_dim, rng)?;
        let audio = mapper(audio_dim, rng)?;
        Ok(Self {
            encoder,
            fmri,
            video,
            audio,
            tau: config.tau,
        })
    }

    /// fMRI embedding from patch inputs. The mapper sees the patch tokens
    /// only; the CLS output is left out.
    fn fmri_forward<R: Rng + ?Sized>(
        &self,
        inputs: ArrayView2<S>,
        train_encoder: bool,
        train: bool,
        rng: &mut R,
    ) -> Result<(Array1<S>, Option<EncoderCache<S>>, MapperCache<S>)> {
        let off = usize::from(self.encoder.config.use_cls);
        let (out, cache) = self.encoder.forward_full(inputs, train && train_encoder, rng)?;
        let (y, mc) = self.fmri.forward(out.slice(s![off.., ..]), train, rng)?;
        Ok((y, train_encoder.then_some(cache), mc))
    }

    pub fn embed_fmri(&self, window: ArrayView2<f32>, patching: &PatchIndex) -> Result<Array1<S>> {
        let inputs = patch_inputs::<S>(normalize_window(window).view(), patching)?;
        let mut rng = stream(0, &[]);
        Ok(self.fmri_forward(inputs.view(), false, false, &mut rng)?.0)
    }

    pub fn embed_video(&self, seq: ArrayView2<f32>) -> Result<Array1<S>> {
        self.video.embed(seq.mapv(|v| S::c(v as f64)).view())
    }

    pub fn embed_audio(&self, seq: ArrayView2<f32>) -> Result<Array1<S>> {
        self.audio.embed(seq.mapv(|v| S::c(v as f64)).view())
    }

    /// Forward pass of one triplet for training.
    #[allow(clippy::too_many_arguments)]
    pub fn triplet_forward<R: Rng + ?Sized>(
        &self,
        inputs: ArrayView2<S>,
        video: Option<ArrayView2<S>>,
        audio: Option<ArrayView2<S>>,
        train_encoder: bool,
        rng: &mut R,
    ) -> Result<(TripletEmbedding<S>, TripletCache<S>)> {
        let (yf, enc, fc) = self.fmri_forward(inputs, train_encoder, true, rng)?;
        let (yv, vc) = match video {
            Some(v) => {
                let (y, c) = self.video.forward(v, true, rng)?;
                (Some(y), Some(c))
            }
            None => (None, None),
        };
        let (ya, ac) = match audio {
            Some(a) => {
                let (y, c) = self.audio.forward(a, true, rng)?;
                (Some(y), Some(c))
            }
            None => (None, None),
        };
        Ok((
            TripletEmbedding {
                fmri: yf,
                video: yv,
                audio: ya,
            },
            TripletCache {
                encoder: enc,
                fmri: fc,
                video: vc,
                audio: ac,
            },
        ))
    }

    /// Backward of [`triplet_forward`](Self::triplet_forward); encoder
    /// gradients are accumulated only if the forward kept its activations.
    pub fn triplet_backward(
        &self,
        cache: &TripletCache<S>,
        d_f: ArrayView1<S>,
        d_v: Option<ArrayView1<S>>,
        d_a: Option<ArrayView1<S>>,
        grads: &mut Self,
    ) -> Result<()> {
        let dtokens = self.fmri.backward(&cache.fmri, d_f, &mut grads.fmri);
        if let Some(enc) = &cache.encoder {
            let off = usize::from(self.encoder.config.use_cls);
            let mut dout = Array2::zeros((dtokens.nrows() + off, dtokens.ncols()));
            dout.slice_mut(s![off.., ..]).assign(&dtokens);
            self.encoder.backward_full(enc, dout.view(), &mut grads.encoder)?;
        }
        if let (Some(c), Some(d)) = (&cache.video, d_v) {
            self.video.backward(c, d, &mut grads.video);
        }
        if let (Some(c), Some(d)) = (&cache.audio, d_a) {
            self.audio.backward(c, d, &mut grads.audio);
        }
        Ok(())
    }
}

/// Inputs of one triplet: patch inputs and the stimulus sequences in use.
#[derive(Clone, Debug)]
pub struct ClipItem<S: Real> {
    pub inputs: Array2<S>,
    pub video: Option<Array2<S>>,
    pub audio: Option<Array2<S>>,
}

impl<S: Real> ClipModel<S> {
    /// Contrastive loss over a batch with in-batch negatives; accumulates
    /// gradients into `grads`. Item `b` draws dropout from stream `(seed, b)`.
    pub fn batch_loss_grad(
        &self,
        items: &[ClipItem<S>],
        modalities: Modalities,
        train_encoder: bool,
        seed: u64,
        grads: &mut Self,
    ) -> Result<LossBreakdown> {
        ensure_arg!(!items.is_empty(), "empty CLIP batch");
        let (use_v, use_a) = (modalities.has_video(), modalities.has_audio());
        let forwards: Vec<Result<(TripletEmbedding<S>, TripletCache<S>)>> = items
            .par_iter()
            .enumerate()
            .map(|(b, item)| {
                let mut rng = stream(seed, &[b as u64]);
                for (want, x, name) in [(use_v, &item.video, "video"), (use_a, &item.audio, "audio")] {
                    ensure_arg!(!want || x.is_some(), "batch item {b} lacks {name}");
                }
                let v = item.video.as_ref().filter(|_| use_v).map(|x| x.view());
                let a = item.audio.as_ref().filter(|_| use_a).map(|x| x.view());
                self.triplet_forward(
                    item.inputs.view(),
                    v,
                    a,
                    train_encoder,
                    &mut rng,
                )
            })
            .collect();
        let mut embeds = Vec::with_capacity(items.len());
        let mut caches = Vec::with_capacity(items.len());
        for f in forwards {
            let (e, c) = f?;
            embeds.push(e);
            caches.push(c);
        }
        let stack = |get: &dyn Fn(&TripletEmbedding<S>) -> Option<&Array1<S>>| -> Option<Array2<f64>> {
            let rows: Option<Vec<&Array1<S>>> = embeds.iter().map(get).collect();
            rows.map(|rows| {
                let d = rows[0].len();
                Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j].f64())
            })
        };
        let batch = ClipBatch {
            y_f: stack(&|e| Some(&e.fmri)).expect("fMRI embeddings"),
            y_v: if use_v { stack(&|e| e.video.as_ref()) } else { None },
            y_a: if use_a { stack(&|e| e.audio.as_ref()) } else { None },
            tau: self.tau,
        };
        let (loss, g) = trimodal_loss_grad(&batch, modalities)?;
        let cast = |a: ArrayView1<f64>| a.mapv(S::c);
        for (i, cache) in caches.iter().enumerate() {
            let df = cast(g.d_f.row(i));
            let dv = g.d_v.as_ref().map(|d| cast(d.row(i)));
            let da = g.d_a.as_ref().map(|d| cast(d.row(i)));
            self.triplet_backward(
                cache,
                df.view(),
                dv.as_ref().map(|d| d.view()),
                da.as_ref().map(|d| d.view()),
                grads,
            )?;
        }
        Ok(loss)
    }
}

impl<S: Real> Params<S> for ClipModel<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Array2<S>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.fmri.visit(&join(prefix, "mapper_f"), f);
        self.video.visit(&join(prefix, "mapper_v"), f);
        self.audio.visit(&join(prefix, "mapper_a"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Array2<S>)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.fmri.visit_mut(&join(prefix, "mapper_f"), f);
        self.video.visit_mut(&join(prefix, "mapper_v"), f);
        self.audio.visit_mut(&join(prefix, "mapper_a"), f);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignSchedule {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for AlignSchedule {
    fn default() -> Self {
        Self {
            iterations: 600,
            batch_size: 32,
            lr: 1e-3,
            lr_min: 1e-5,
            weight_decay: 0.05,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignRecord {
    pub iteration: usize,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignReport {
    pub trace: Vec<AlignRecord>,
    pub trainable_params: usize,
}

pub fn write_align_csv<W: Write>(mut out: W, trace: &[AlignRecord]) -> std::io::Result<()> {
    writeln!(out, "iteration,split,total,fV,Vf,fA,Af,AV,VA")?;
    for r in trace {
        write!(out, "{},train,{:.9}", r.iteration, r.loss.total)?;
        for d in r.loss.directions {
            match d {
                Some(v) => write!(out, ",{v:.9}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Up to `size` ids with pairwise distinct stimulus clips.
pub fn sample_distinct_clips<R: Rng + ?Sized>(
    source: &dyn TripletSource,
    ids: &[usize],
    size: usize,
    rng: &mut R,
) -> Vec<usize> {
    let cfg = source.config();
    let mut order: Vec<usize> = ids.to_vec();
    order.shuffle(rng);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(size);
    for id in order {
        let k = cfg.triplet_key(id);
        if seen.insert((k.movie, k.clip)) {
            out.push(id);
            if out.len() == size {
                break;
            }
        }
    }
    out
}

/// Contrastive training of the mappers and, unless frozen, the fMRI encoder.
///
/// `Frozen` and `Finetune` start the encoder from `pretrained`; `Scratch`
/// keeps the model's own initialization. Stimulus sequences are fixed inputs.
#[allow(clippy::too_many_arguments)]
pub fn train_alignment<T: TripletSource + Sync>(
    model: &mut ClipModel<f32>,
    pretrained: Option<&SitEncoder<f32>>,
    regime: TrainRegime,
    modalities: Modalities,
    source: &T,
    patching: &PatchIndex,
    train_ids: &[usize],
    schedule: &AlignSchedule,
    mut on_record: impl FnMut(&AlignRecord),
) -> Result<AlignReport> {
    ensure_arg!(!train_ids.is_empty(), "alignment needs a non-empty training set");
    ensure_arg!(schedule.batch_size >= 1, "batch size must be at least 1");
    if regime != TrainRegime::Scratch {
        let enc = pretrained.ok_or_else(|| {
            SimError::State(format!("regime {regime} needs a pretrained encoder checkpoint"))
        })?;
        ensure_arg!(
            enc.config == model.encoder.config,
            "pretrained encoder config differs from the model's"
        );
        model.encoder = enc.clone();
    }
    let train_encoder = regime != TrainRegime::Frozen;
    let (use_v, use_a) = (modalities.has_video(), modalities.has_audio());
    let trainable_params = param_count(&model.fmri)
        + if train_encoder { param_count(&model.encoder) } else { 0 }
        + if use_v { param_count(&model.video) } else { 0 }
        + if use_a { param_count(&model.audio) } else { 0 };

    let mut opt_enc = AdamW::new(schedule.weight_decay);
    let mut opt_f = AdamW::new(schedule.weight_decay);
    let mut opt_v = AdamW::new(schedule.weight_decay);
    let mut opt_a = AdamW::new(schedule.weight_decay);
    let mut trace = Vec::with_capacity(schedule.iterations);
    for it in 0..schedule.iterations {
        let lr = cosine_lr(it, schedule.iterations, schedule.lr, schedule.lr_min);
        let batch = sample_distinct_clips(
            source,
            train_ids,
            schedule.batch_size,
            &mut stream(schedule.seed, &[11, it as u64]),
        );
        let items: Vec<Result<ClipItem<f32>>> = batch
            .par_iter()
            .map(|&id| {
                let w = source.window(id)?;
                Ok(ClipItem {
                    inputs: patch_inputs::<f32>(normalize_window(w.view()).view(), patching)?,
                    video: if use_v { Some(source.video(id)?.clone()) } else { None },
                    audio: if use_a { Some(source.audio(id)?.clone()) } else { None },
                })
            })
            .collect();
        let items = items.into_iter().collect::<Result<Vec<_>>>()?;
        let mut grads = zeros_like(&*model);
        let loss = model.batch_loss_grad(
            &items,
            modalities,
            train_encoder,
            stream(schedule.seed, &[12, it as u64]).random(),
            &mut grads,
        )?;
        if !loss.total.is_finite() {
            return Err(SimError::numeric(format!("alignment diverged at iteration {it}")));
        }
        let mut finite = true;
        grads.visit("", &mut |_, t| finite &= all_finite(t));
        if !finite {
            return Err(SimError::numeric(format!("non-finite alignment gradient at iteration {it}")));
        }
        if train_encoder {
            opt_enc.step(&mut model.encoder, &grads.encoder, lr);
        }
        opt_f.step(&mut model.fmri, &grads.fmri, lr);
        if use_v {
            opt_v.step(&mut model.video, &grads.video, lr);
        }
        if use_a {
            opt_a.step(&mut model.audio, &grads.audio, lr);
        }
        let rec = AlignRecord { iteration: it, loss };
        on_record(&rec);
        trace.push(rec);
    }
    Ok(AlignReport {
        trace,
        trainable_params,
    })
}

/// Unit-norm embeddings of a retrieval pool, one row per id.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolEmbeddings {
    pub fmri: Array2<f64>,
    pub video: Array2<f64>,
    pub audio: Array2<f64>,
}

impl PoolEmbeddings {
    /// `(queries, candidates)` for a retrieval direction.
    pub fn pair(&self, direction: crate::eval::Direction) -> (&Array2<f64>, &Array2<f64>) {
        let stim = if direction.uses_video() { &self.video } else { &self.audio };
        if direction.fmri_query() {
            (&self.fmri, stim)
        } else {
            (stim, &self.fmri)
        }
    }
}

pub fn embed_pool<T: TripletSource + Sync>(
    model: &ClipModel<f32>,
    source: &T,
    patching: &PatchIndex,
    ids: &[usize],
) -> Result<PoolEmbeddings> {
    let rows: Vec<Result<[Array1<f32>; 3]>> = ids
        .par_iter()
        .map(|&id| {
            Ok([
                model.embed_fmri(source.window(id)?.view(), patching)?,
                model.embed_video(source.video(id)?.view())?,
                model.embed_audio(source.audio(id)?.view())?,
            ])
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let stack = |k: usize| {
        let d = rows.first().map_or(0, |r| r[k].len());
        Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][k][j] as f64)
    };
    Ok(PoolEmbeddings {
        fmri: stack(0),
        video: stack(1),
        audio: stack(2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn orthonormal(m: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((m, d), |(i, j)| if i == j { 1.0 } else { 0.0 })
    }

    fn random_unit(m: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream(seed, &[]);
        let mut y = Array2::from_shape_fn((m, d), |_| rng.random::<f64>() - 0.5);
        for mut r in y.rows_mut() {
            let n = r.dot(&r).sqrt();
            r /= n;
        }
        y
    }

    #[test]
    fn similarity_of_orthonormal_rows_is_identity() {
        let y = orthonormal(4, 6);
        assert_eq!(similarity_matrix(y.view(), y.view()).unwrap(), Array2::<f64>::eye(4));
        let bad = &y * 1.1;
        assert!(matches!(similarity_matrix(bad.view(), y.view()), Err(SimError::Argument(_))));
    }

    #[test]
    fn similarity_matches_dot_oracle() {
        let a = random_unit(3, 5, 1);
        let b = random_unit(3, 5, 2);
        let z = similarity_matrix(a.view(), b.view()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..5).map(|k| a[(i, k)] * b[(j, k)]).sum();
                assert!((z[(i, j)] - dot).abs() < 1e-7);
                assert!(z[(i, j)].abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn probabilities_closed_forms() {
        let p = clip_probabilities(&Array2::from_elem((5, 5), 0.3), 0.07).unwrap();
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-12));
        let p = clip_probabilities(&Array2::eye(2), 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p[(0, 0)] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p[(0, 0)] - 0.73106).abs() < 1e-5);
        let p = clip_probabilities(&Array2::eye(4), 0.01).unwrap();
        assert!((p[(2, 2)] - 1.0).abs() < 1e-8);
        assert!(matches!(clip_probabilities(&Array2::eye(2), 0.0), Err(SimError::Argument(_))));
    }

    #[test]
    fn directional_loss_closed_forms() {
        assert_eq!(directional_loss(&array![[1.0]]), 0.0);
        let uniform = Array2::from_elem((8, 8), 1.0 / 8.0);
        assert!((directional_loss(&uniform) - 8f64.ln()).abs() < 1e-12);
        let p = clip_probabilities(&Array2::eye(2), 1.0).unwrap();
        assert!((directional_loss(&p) - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn zero_diagonal_is_clamped_and_counted() {
        let before = clamp_events();
        let p = array![[0.0, 1.0], [1.0, 0.0]];
        let l = directional_loss(&p);
        assert!((l + DIAGONAL_FLOOR.ln()).abs() < 1e-9);
        assert!(clamp_events() >= before + 2);
    }

    #[test]
    fn loss_decreases_with_temperature() {
        let z = Array2::eye(4);
        let mut last = f64::INFINITY;
        for tau in [2.0, 1.0, 0.5, 0.2, 0.1, 0.07, 0.03] {
            let l = directional_loss(&clip_probabilities(&z, tau).unwrap());
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn symmetric_batch_gives_equal_directions() {
        let y = orthonormal(2, 4);
        let batch = ClipBatch {
            y_f: y.clone(),
            y_v: Some(y.clone()),
            y_a: Some(y),
            tau: 1.0,
        };
        let l = trimodal_loss(&batch, Modalities::FVA).unwrap();
        for d in l.directions {
            assert!((d.unwrap() - 0.31326).abs() < 1e-5);
        }
        assert!((l.total - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn single_item_batch_has_zero_loss() {
        let y = orthonormal(1, 3);
        let batch = ClipBatch {
            y_f: y.clone(),
            y_v: Some(y.clone()),
            y_a: Some(y),
            tau: 0.07,
        };
        assert_eq!(trimodal_loss(&batch, Modalities::FVA).unwrap().total, 0.0);
    }

    #[test]
    fn total_is_mean_of_independent_directions() {
        let (f, v, a) = (random_unit(6, 8, 3), random_unit(6, 8, 4), random_unit(6, 8, 5));
        let batch = ClipBatch {
            y_f: f.clone(),
            y_v: Some(v.clone()),
            y_a: Some(a.clone()),
            tau: 0.1,
        };
        let dir = |x: &Array2<f64>, y: &Array2<f64>| {
            directional_loss(&clip_probabilities(&similarity_matrix(x.view(), y.view()).unwrap(), 0.1).unwrap())
        };
        let six = [dir(&f, &v), dir(&v, &f), dir(&f, &a), dir(&a, &f), dir(&a, &v), dir(&v, &a)];
        let l = trimodal_loss(&batch, Modalities::FVA).unwrap();
        assert!((l.total - six.iter().sum::<f64>() / 6.0).abs() < 1e-9);
        let bi = trimodal_loss(&batch, Modalities::FV).unwrap();
        assert!((bi.total - (six[0] + six[1]) / 2.0).abs() < 1e-9);
        assert!(bi.directions[2].is_none());
    }

    #[test]
    fn loss_invariant_to_common_permutation() {
        let (f, v, a) = (random_unit(5, 4, 6), random_unit(5, 4, 7), random_unit(5, 4, 8));
        let perm = [3usize, 0, 4, 1, 2];
        let p = |y: &Array2<f64>| y.select(Axis(0), &perm);
        let l1 = trimodal_loss(
            &ClipBatch {
                y_f: f.clone(),
                y_v: Some(v.clone()),
                y_a: Some(a.clone()),
                tau: 0.2,
            },
            Modalities::FVA,
        )
        .unwrap();
        let l2 = trimodal_loss(
            &ClipBatch {
                y_f: p(&f),
                y_v: Some(p(&v)),
                y_a: Some(p(&a)),
                tau: 0.2,
            },
            Modalities::FVA,
        )
        .unwrap();
        assert!((l1.total - l2.total).abs() < 1e-12);
    }

    #[test]
    fn mapper_output_is_unit_and_permutation_invariant() {
        let mut rng = stream(9, &[]);
        let m = Mapper::<f64>::new(
            &MapperConfig {
                input_dim: 6,
                clip_dim: 8,
                dropout: 0.0,
            },
            &mut rng,
        )
        .unwrap();
        let x = Array2::from_shape_fn((5, 6), |_| rng.random::<f64>() - 0.5);
        let y = m.embed(x.view()).unwrap();
        assert!((y.dot(&y).sqrt() - 1.0).abs() < 1e-6);
        let shuffled = x.select(Axis(0), &[4, 2, 0, 3, 1]);
        let y2 = m.embed(shuffled.view()).unwrap();
        assert!((&y - &y2).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn single_token_identity_mapper_normalizes_projection() {
        let mut m = Mapper::<f64>::new(
            &MapperConfig {
                input_dim: 3,
                clip_dim: 3,
                dropout: 0.0,
            },
            &mut stream(0, &[]),
        )
        .unwrap();
        m.proj.weight = Array2::eye(3);
        m.proj.bias.fill(0.0);
        m.fc2.weight.fill(0.0);
        m.fc2.bias.fill(0.0);
        let y = m.embed(array![[3.0, 0.0, 4.0]].view()).unwrap();
        assert!((y[0] - 0.6).abs() < 1e-12 && (y[2] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn zero_mapper_output_is_numeric_error() {
        let mut m = Mapper::<f64>::new(
            &MapperConfig {
                input_dim: 2,
                clip_dim: 2,
                dropout: 0.0,
            },
            &mut stream(0, &[]),
        )
        .unwrap();
        m.visit_mut("", &mut |_, t| t.fill(0.0));
        assert!(matches!(m.embed(array![[1.0, 2.0]].view()), Err(SimError::Numeric { .. })));
    }
}
