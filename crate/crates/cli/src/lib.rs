//! Pipeline commands behind the `sim` binary. Every command reads a resolved
//! [`RunConfig`], writes its artifacts into an output directory and records
//! `config.json` and `manifest.json` there.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sim_core::attnmap::{
    aggregate, aggregate_by, correlate_fields, extract_cls_attention, project_to_surface, write_surface_csv,
    AttentionSurface, MapMeta,
};
use sim_core::clip::{embed_pool, train_alignment, write_align_csv, AlignReport, ClipModel, PoolEmbeddings};
use sim_core::datagen::{
    make_world, normalize_window, split_experiment, ExperimentSplit, TripletSource, WindowSource, WorldConfig,
};
use sim_core::eval::retrieval::write_results_csv;
use sim_core::eval::{
    evaluate_trials, fit_ridge_baseline, lag_scan, sample_trials, welch_ttest, window_features, Direction, LagScan,
    PoolItem, RetrievalResult, RetrievalTask, RidgeBaseline, TTest,
};
use sim_core::icosphere::{build_patching, generate_icosphere, PatchIndex, SurfaceField};
use sim_core::persist::config::write_run_record;
use sim_core::persist::{hex, read_field, write_dataset, write_field, Checkpoint, DatasetReader, RunConfig};
use sim_core::rng::{derive_seed, stream};
use sim_core::sit::SitEncoder;
use sim_core::vsmae::{pretrain, write_loss_csv, PretrainReport, VsmaeConfig, VsmaeModel};
use sim_core::{Result, SimError};

pub const DATASET_FILE: &str = "dataset.simd";
pub const VSMAE_CHECKPOINT: &str = "vsmae.simc";
pub const CLIP_CHECKPOINT: &str = "clip.simc";

const TAG_ENCODER_INIT: u64 = 0x51;
const TAG_CLIP_INIT: u64 = 0x52;
const TAG_EVAL: u64 = 0xe7a1;
const TAG_SELECT: u64 = 0xe7a2;

/// Reads `path` (or defaults) and resolves it, honouring `SIM_SEED`.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.resolve(std::env::var("SIM_SEED").ok().as_deref())
}

pub fn patching_for(cfg: &RunConfig) -> Result<PatchIndex> {
    let fine = generate_icosphere(cfg.world.mesh_level)?;
    let coarse = generate_icosphere(cfg.coarse_level())?;
    build_patching(&fine, &coarse)
}

fn create_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)
        .map_err(|e| SimError::Argument(format!("cannot create output directory {}: {e}", out.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Opens a dataset and checks that it was generated from `cfg.world`.
pub fn open_dataset(cfg: &RunConfig, path: &Path, force: bool) -> Result<DatasetReader> {
    let reader = DatasetReader::open(path)?;
    if reader.config() != &cfg.world {
        if !force {
            return Err(SimError::State(format!(
                "dataset {} was generated from a different world config; pass --force to use it anyway",
                path.display()
            )));
        }
        log::warn!("dataset world config differs from the run config");
    }
    Ok(reader)
}

fn split_of(cfg: &RunConfig, world: &WorldConfig) -> Result<ExperimentSplit> {
    split_experiment(world, cfg.eval.experiment, cfg.eval.split_ratios, cfg.seed)
}

pub fn new_clip_model(cfg: &RunConfig, world: &WorldConfig) -> Result<ClipModel<f32>> {
    let encoder = SitEncoder::new(cfg.model.clone(), &mut stream(cfg.seed, &[TAG_ENCODER_INIT]))?;
    ClipModel::new(
        encoder,
        world.video_dim,
        world.audio_dim,
        &cfg.clip.config,
        &mut stream(cfg.seed, &[TAG_CLIP_INIT]),
    )
}

/// Loads an encoder from either a vsMAE or a CLIP checkpoint.
pub fn load_encoder(cfg: &RunConfig, path: &Path, force: bool) -> Result<SitEncoder<f32>> {
    let ck = Checkpoint::load(path, Some(&cfg.model_hash()), force)?;
    let mut enc = SitEncoder::new(cfg.model.clone(), &mut stream(cfg.seed, &[TAG_ENCODER_INIT]))?;
    let prefix = if ck.has_prefix("clip.encoder") { "clip.encoder" } else { "vsmae.encoder" };
    ck.restore_module(prefix, &mut enc)?;
    Ok(enc)
}

pub fn load_clip_model(cfg: &RunConfig, world: &WorldConfig, path: &Path, force: bool) -> Result<ClipModel<f32>> {
    let ck = Checkpoint::load(path, Some(&cfg.model_hash()), force)?;
    let mut model = new_clip_model(cfg, world)?;
    ck.restore_module("clip", &mut model)?;
    Ok(model)
}

/// `cmd_mesh`: returns `(V, F)` and optionally writes the mesh as text.
pub fn cmd_mesh(level: u32, out: Option<&Path>) -> Result<(usize, usize)> {
    let mesh = generate_icosphere(level)?;
    if let Some(path) = out {
        mesh.write_text(create(path)?)?;
    }
    Ok((mesh.num_vertices(), mesh.num_faces()))
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    create_dir(out)?;
    let world = make_world(&cfg.world)?;
    let path = out.join(DATASET_FILE);
    write_dataset(&world, &path)?;
    write_run_record(out, "synth", cfg, &[DATASET_FILE])?;
    Ok(path)
}

pub fn cmd_pretrain(cfg: &RunConfig, dataset: &Path, out: &Path, force: bool) -> Result<PretrainReport> {
    create_dir(out)?;
    let reader = open_dataset(cfg, dataset, force)?;
    let patching = patching_for(cfg)?;
    let split = split_of(cfg, reader.config())?;
    let vcfg = VsmaeConfig {
        encoder: cfg.model.clone(),
        decoder_layers: cfg.vsmae.decoder_layers,
    };
    let mut model = VsmaeModel::<f32>::new(&vcfg, &mut stream(cfg.seed, &[TAG_ENCODER_INIT]))?;
    let schedule = &cfg.vsmae.schedule;
    let report = pretrain(&mut model, &reader, &patching, &split.train, &split.val, schedule, |r| {
        log::info!("pretrain {} {} {:.5}", r.iteration, r.split.as_str(), r.masked_mse)
    })?;
    let mut ck = Checkpoint::new(cfg.model_hash(), schedule.iterations as u64);
    ck.add_module("vsmae", &model);
    ck.save(&out.join(VSMAE_CHECKPOINT))?;
    write_loss_csv(create(&out.join("pretrain_loss.csv"))?, &report.trace)?;
    write_run_record(out, "pretrain", cfg, &[VSMAE_CHECKPOINT, "pretrain_loss.csv"])?;
    Ok(report)
}

pub fn cmd_align(
    cfg: &RunConfig,
    dataset: &Path,
    pretrained: Option<&Path>,
    out: &Path,
    force: bool,
) -> Result<AlignReport> {
    create_dir(out)?;
    let reader = open_dataset(cfg, dataset, force)?;
    let patching = patching_for(cfg)?;
    let split = split_of(cfg, reader.config())?;
    let encoder = pretrained.map(|p| load_encoder(cfg, p, force)).transpose()?;
    let mut model = new_clip_model(cfg, reader.config())?;
    let s = &cfg.clip;
    let report = train_alignment(
        &mut model,
        encoder.as_ref(),
        s.regime,
        s.modalities,
        &reader,
        &patching,
        &split.train,
        &s.schedule,
        |r| {
            if r.iteration % 50 == 0 {
                log::info!("align {} {:.5}", r.iteration, r.loss.total)
            }
        },
    )?;
    let mut ck = Checkpoint::new(cfg.model_hash(), s.schedule.iterations as u64);
    ck.add_module("clip", &model);
    ck.save(&out.join(CLIP_CHECKPOINT))?;
    write_align_csv(create(&out.join("align_loss.csv"))?, &report.trace)?;
    write_run_record(out, "align", cfg, &[CLIP_CHECKPOINT, "align_loss.csv"])?;
    Ok(report)
}

/// Results of one retrieval task for the model and, for fMRI queries, the
/// ridge baseline, over `eval_seeds` independent candidate draws.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: RetrievalTask,
    pub model: Vec<RetrievalResult>,
    pub ridge: Option<Vec<RetrievalResult>>,
    pub ridge_lambda: Option<f64>,
    pub ttest: Option<TTest>,
}

impl TaskSummary {
    pub fn top1(results: &[RetrievalResult]) -> Vec<f64> {
        results.iter().map(|r| r.top(1).map_or(f64::NAN, |a| a.mean)).collect()
    }

    pub fn mean_top1(results: &[RetrievalResult]) -> f64 {
        let v = Self::top1(results);
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub config_hash: String,
    pub pool_size: usize,
    pub tasks: Vec<TaskSummary>,
}

/// Evaluates `embeddings` of `ids` on one task for every evaluation seed.
pub fn run_task(
    task: &RetrievalTask,
    task_index: usize,
    pool: &[PoolItem],
    queries: &Array2<f64>,
    candidates: &Array2<f64>,
    tau: f64,
    ks: &[usize],
    seed: u64,
    eval_seeds: usize,
) -> Result<Vec<RetrievalResult>> {
    (0..eval_seeds)
        .map(|e| {
            let trials = sample_trials(pool, task, derive_seed(seed, &[TAG_EVAL, task_index as u64, e as u64]))?;
            evaluate_trials(&trials, queries.view(), candidates.view(), tau, ks)
        })
        .collect()
}

fn stimulus_embeddings(emb: &PoolEmbeddings, direction: Direction) -> &Array2<f64> {
    if direction.uses_video() {
        &emb.video
    } else {
        &emb.audio
    }
}

/// Fits the ridge baseline from flattened windows to the model's target
/// modality embeddings, choosing λ by top-1 on the validation pool (or a
/// held-out tail of training when there is no validation set).
#[allow(clippy::too_many_arguments)]
pub fn ridge_for_task<T: TripletSource + Sync>(
    cfg: &RunConfig,
    model: &ClipModel<f32>,
    source: &T,
    patching: &PatchIndex,
    split: &ExperimentSplit,
    task: &RetrievalTask,
    task_index: usize,
    x_train: &Array2<f64>,
) -> Result<RidgeBaseline> {
    let world = source.config();
    let train_emb = embed_pool(model, source, patching, &split.train)?;
    let y_train = stimulus_embeddings(&train_emb, task.direction);
    let (x_val, sel_ids): (Option<Array2<f64>>, Vec<usize>) = if split.val.is_empty() {
        let n = split.train.len();
        let cut = n - (n / 5).max(1);
        (None, split.train[cut..].to_vec())
    } else {
        (Some(window_features(source, &split.val)?), split.val.clone())
    };
    let sel_emb = embed_pool(model, source, patching, &sel_ids)?;
    let sel_targets = stimulus_embeddings(&sel_emb, task.direction).clone();
    let sel_pool = PoolItem::from_ids(world, &sel_ids);
    let trials = sample_trials(&sel_pool, task, derive_seed(cfg.seed, &[TAG_SELECT, task_index as u64]))?;
    fit_ridge_baseline(
        x_train.view(),
        y_train.view(),
        x_val.as_ref().map(|x| x.view()),
        &cfg.eval.ridge_lambdas,
        |pred, _| {
            let r = evaluate_trials(&trials, pred.view(), sel_targets.view(), model.tau, &[1])?;
            Ok(r.accuracy[0].mean)
        },
    )
}

/// Retrieval on the test split for every configured task, with the ridge
/// baseline and a Welch test for tasks whose query is the fMRI window.
pub fn evaluate_model<T: TripletSource + Sync>(
    cfg: &RunConfig,
    model: &ClipModel<f32>,
    source: &T,
    patching: &PatchIndex,
    with_ridge: bool,
) -> Result<EvalSummary> {
    let world = source.config();
    let split = split_of(cfg, world)?;
    let pool = PoolItem::from_ids(world, &split.test);
    let emb = embed_pool(model, source, patching, &split.test)?;
    let ridge_tasks = cfg.eval.tasks.iter().filter(|t| t.direction.fmri_query()).count();
    let needs_ridge = with_ridge && ridge_tasks > 0;
    let x_train = if needs_ridge { Some(window_features(source, &split.train)?) } else { None };
    let x_test = if needs_ridge { Some(window_features(source, &split.test)?) } else { None };
    let mut tasks = Vec::with_capacity(cfg.eval.tasks.len());
    for (ti, task) in cfg.eval.tasks.iter().enumerate() {
        let (q, c) = emb.pair(task.direction);
        let ks = &cfg.eval.ks;
        let model_results = run_task(task, ti, &pool, q, c, model.tau, ks, cfg.seed, cfg.eval.eval_seeds)?;
        let mut summary = TaskSummary {
            task: task.clone(),
            model: model_results,
            ridge: None,
            ridge_lambda: None,
            ttest: None,
        };
        if let (Some(xt), Some(xs), true) = (&x_train, &x_test, task.direction.fmri_query()) {
            let baseline = ridge_for_task(cfg, model, source, patching, &split, task, ti, xt)?;
            let ridge_q = baseline.embed(xs.view());
            let ridge_results = run_task(task, ti, &pool, &ridge_q, c, model.tau, ks, cfg.seed, cfg.eval.eval_seeds)?;
            let a = TaskSummary::top1(&summary.model);
            let b = TaskSummary::top1(&ridge_results);
            summary.ttest = if a.len() >= 2 { Some(welch_ttest(&a, &b, ridge_tasks)?) } else { None };
            summary.ridge_lambda = Some(baseline.lambda());
            summary.ridge = Some(ridge_results);
        }
        log::info!(
            "{} {} M={}: top-1 {:.2}%",
            task.direction,
            task.mode,
            task.m,
            TaskSummary::mean_top1(&summary.model)
        );
        tasks.push(summary);
    }
    Ok(EvalSummary {
        config_hash: hex(&cfg.hash()),
        pool_size: pool.len(),
        tasks,
    })
}

pub fn write_eval_outputs(out: &Path, summary: &EvalSummary) -> Result<()> {
    let mut rows = Vec::new();
    for t in &summary.tasks {
        for (e, r) in t.model.iter().enumerate() {
            rows.push((format!("sit,{e}"), t.task.clone(), r.clone()));
        }
        for (e, r) in t.ridge.iter().flatten().enumerate() {
            rows.push((format!("ridge,{e}"), t.task.clone(), r.clone()));
        }
    }
    write_results_csv(create(&out.join("retrieval.csv"))?, &rows)?;
    std::fs::write(out.join("retrieval.json"), serde_json::to_string_pretty(summary)?)?;
    let mut tt = String::from("direction,mode,M,sit_top1,ridge_top1,ridge_lambda,t,df,p_raw,p_bonferroni\n");
    for t in &summary.tasks {
        if let (Some(test), Some(ridge)) = (&t.ttest, &t.ridge) {
            tt.push_str(&format!(
                "{},{},{},{:.4},{:.4},{},{:.6},{:.3},{:.6e},{:.6e}\n",
                t.task.direction,
                t.task.mode,
                t.task.m,
                TaskSummary::mean_top1(&t.model),
                TaskSummary::mean_top1(ridge),
                t.ridge_lambda.unwrap_or(f64::NAN),
                test.t,
                test.df,
                test.p_raw,
                test.p_bonferroni
            ));
        }
    }
    std::fs::write(out.join("ttest.csv"), tt)?;
    Ok(())
}

pub fn cmd_eval(
    cfg: &RunConfig,
    dataset: &Path,
    checkpoint: Option<&Path>,
    out: &Path,
    force: bool,
) -> Result<EvalSummary> {
    create_dir(out)?;
    let reader = open_dataset(cfg, dataset, force)?;
    let patching = patching_for(cfg)?;
    let model = match checkpoint {
        Some(p) => load_clip_model(cfg, reader.config(), p, force)?,
        None => new_clip_model(cfg, reader.config())?,
    };
    let summary = evaluate_model(cfg, &model, &reader, &patching, true)?;
    write_eval_outputs(out, &summary)?;
    write_run_record(out, "eval", cfg, &["retrieval.csv", "retrieval.json", "ttest.csv"])?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttentionOutput {
    pub maps: Vec<MapMeta>,
    pub correlation: Option<f64>,
}

/// Per-head CLS attention maps of the selected windows.
pub fn attention_maps<W: WindowSource + ?Sized>(
    encoder: &SitEncoder<f32>,
    source: &W,
    patching: &PatchIndex,
    world: &WorldConfig,
    ids: &[usize],
    layer: Option<usize>,
) -> Result<Vec<AttentionSurface>> {
    let layer = layer.unwrap_or(encoder.config.num_layers.saturating_sub(1));
    let mut maps = Vec::new();
    for &id in ids {
        let window = normalize_window(source.window(id)?.view());
        let seq = encoder.tokenize(window.view(), patching)?;
        let (_, record) = encoder.encode(&seq, false, &mut stream(0, &[]))?;
        let key = world.triplet_key(id);
        for head in 0..encoder.config.num_heads {
            let weights = extract_cls_attention(&record, layer, head)?;
            let meta = MapMeta {
                layer,
                head,
                subject: Some(key.subject),
                clip: Some(id),
            };
            maps.push(project_to_surface(&weights, patching, meta)?);
        }
    }
    Ok(maps)
}

fn columns_field(level: u32, columns: &[&[f64]]) -> Result<SurfaceField> {
    let v = columns.first().map_or(0, |c| c.len());
    let values = Array2::from_shape_fn((v, columns.len()), |(i, j)| columns[j][i] as f32);
    SurfaceField::new(level, values)
}

pub fn cmd_attention(
    cfg: &RunConfig,
    dataset: &Path,
    checkpoint: &Path,
    ids: &[usize],
    reference: Option<&Path>,
    labels: Option<&Path>,
    out: &Path,
    force: bool,
) -> Result<AttentionOutput> {
    create_dir(out)?;
    let reader = open_dataset(cfg, dataset, force)?;
    let patching = patching_for(cfg)?;
    let encoder = load_encoder(cfg, checkpoint, force)?;
    let world = reader.config().clone();
    let ids: Vec<usize> = if ids.is_empty() {
        split_of(cfg, &world)?.test.into_iter().take(4).collect()
    } else {
        ids.to_vec()
    };
    let maps = attention_maps(&encoder, &reader, &patching, &world, &ids, cfg.attention.layer)?;
    let level = world.mesh_level;
    let cols: Vec<&[f64]> = maps.iter().map(|m| m.values.as_slice()).collect();
    write_field(create(&out.join("maps.simf"))?, &columns_field(level, &cols)?)?;

    let overall = aggregate(&maps)?;
    write_field(
        create(&out.join("aggregate.simf"))?,
        &columns_field(level, &[&overall.mean, &overall.variance])?,
    )?;
    write_surface_csv(create(&out.join("mean.csv"))?, &overall.mean)?;
    let mut grouped = String::from("group,vertex,mean,variance\n");
    for (key, agg) in aggregate_by(&maps, cfg.attention.group_by)? {
        let key = key.map_or("none".to_string(), |k| k.to_string());
        for (v, (m, var)) in agg.mean.iter().zip(&agg.variance).enumerate() {
            grouped.push_str(&format!("{key},{v},{m:.9},{var:.9}\n"));
        }
    }
    std::fs::write(out.join("grouped.csv"), grouped)?;

    let correlation = match reference {
        Some(path) => {
            let r = read_field(File::open(path)?)?;
            let rv: Vec<f64> = r.values.column(0).iter().map(|&x| x as f64).collect();
            let lv = labels
                .map(|p| -> Result<Vec<i64>> {
                    let l = read_field(File::open(p)?)?;
                    Ok(l.values.column(0).iter().map(|&x| x.round() as i64).collect())
                })
                .transpose()?;
            Some(correlate_fields(&overall.mean, &rv, lv.as_deref())?)
        }
        None => None,
    };
    let output = AttentionOutput {
        maps: maps.iter().map(|m| m.meta.clone()).collect(),
        correlation,
    };
    std::fs::write(out.join("attention.json"), serde_json::to_string_pretty(&output)?)?;
    write_run_record(
        out,
        "attention",
        cfg,
        &["maps.simf", "aggregate.simf", "mean.csv", "grouped.csv", "attention.json"],
    )?;
    Ok(output)
}

pub fn cmd_lag(cfg: &RunConfig, dataset: &Path, out: &Path, force: bool) -> Result<LagScan> {
    create_dir(out)?;
    let reader = open_dataset(cfg, dataset, force)?;
    let world = reader.load_world()?;
    let scan = lag_scan(&world, &cfg.lag.lags, cfg.lag.lambda)?;
    let mut csv = String::from("lag,mean_r,excluded,best\n");
    for r in &scan.results {
        csv.push_str(&format!("{},{:.9},{},{}\n", r.lag, r.mean_r, r.excluded, r.lag == scan.best_lag));
    }
    std::fs::write(out.join("lag.csv"), csv)?;
    let mut per_vertex = String::from("vertex");
    for r in &scan.results {
        per_vertex.push_str(&format!(",lag_{}", r.lag));
    }
    per_vertex.push('\n');
    for v in 0..world.config.num_vertices() {
        per_vertex.push_str(&v.to_string());
        for r in &scan.results {
            per_vertex.push_str(&format!(",{:.9}", r.per_vertex[v]));
        }
        per_vertex.push('\n');
    }
    std::fs::write(out.join("lag_vertex.csv"), per_vertex)?;
    write_run_record(out, "lag", cfg, &["lag.csv", "lag_vertex.csv"])?;
    Ok(scan)
}

/// Mean top-1 over evaluation seeds of the first task matching `direction`.
pub fn task_top1(summary: &EvalSummary, direction: Direction) -> Option<f64> {
    summary
        .tasks
        .iter()
        .find(|t| t.task.direction == direction)
        .map(|t| TaskSummary::mean_top1(&t.model))
}
