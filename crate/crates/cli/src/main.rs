use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sim_core::clip::{Modalities, TrainRegime};
use sim_core::datagen::Experiment;
use sim_core::persist::RunConfig;
use sim_core::{Result, SimError};

#[derive(Parser)]
#[command(name = "sim", version, about = "Surface vision transformer pipeline on synthetic icospheric data")]
struct Cli {
    /// JSON run configuration; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Load checkpoints and datasets even when their config hash differs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an icosphere and print its vertex and face counts.
    Mesh {
        level: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the synthetic dataset container.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// vsMAE pretraining.
    Pretrain {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Contrastive alignment of fMRI, video and audio.
    Align {
        #[arg(long)]
        dataset: PathBuf,
        /// vsMAE checkpoint (required by the frozen and finetune regimes).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        regime: Option<TrainRegime>,
        #[arg(long)]
        modalities: Option<Modalities>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieval evaluation, ridge baseline and significance tests.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// CLIP checkpoint; without one the model is randomly initialized.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        experiment: Option<Experiment>,
        #[arg(long)]
        out: PathBuf,
    },
    /// CLS attention maps projected onto the sphere.
    Attention {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Triplet ids (default: the first four test windows).
        #[arg(long, value_delimiter = ',')]
        ids: Vec<usize>,
        #[arg(long)]
        layer: Option<usize>,
        /// Reference SurfaceField to correlate the mean map with.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Region label SurfaceField for parcel-mean correlation.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hemodynamic lag scan with per-vertex ridge encoding models.
    Lag {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',')]
        lags: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(SimError::Argument("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| SimError::State(format!("thread pool: {e}")))?;
    }
    let mut cfg: RunConfig = sim_cli::load_config(cli.config.as_deref())?;
    let force = cli.force;
    match cli.command {
        Command::Mesh { level, out } => {
            let (v, f) = sim_cli::cmd_mesh(level, out.as_deref())?;
            println!("V={v} F={f}");
        }
        Command::Synth { out } => {
            let path = sim_cli::cmd_synth(&cfg, &out)?;
            println!("{}", path.display());
        }
        Command::Pretrain { dataset, out } => {
            let r = sim_cli::cmd_pretrain(&cfg, &dataset, &out, force)?;
            if let (Some(v), Some(b)) = (r.final_val, r.mean_baseline) {
                println!("val_masked_mse={v:.6} mean_predictor={b:.6}");
            }
        }
        Command::Align {
            dataset,
            checkpoint,
            regime,
            modalities,
            out,
        } => {
            if let Some(r) = regime {
                cfg.clip.regime = r;
            }
            if let Some(m) = modalities {
                cfg.clip.modalities = m;
            }
            let r = sim_cli::cmd_align(&cfg, &dataset, checkpoint.as_deref(), &out, force)?;
            let last = r.trace.last().map_or(f64::NAN, |x| x.loss.total);
            println!("final_loss={last:.6} trainable_params={}", r.trainable_params);
        }
        Command::Eval {
            dataset,
            checkpoint,
            experiment,
            out,
        } => {
            if let Some(e) = experiment {
                cfg.eval.experiment = e;
            }
            let s = sim_cli::cmd_eval(&cfg, &dataset, checkpoint.as_deref(), &out, force)?;
            for t in &s.tasks {
                println!(
                    "{} {} M={} top1={:.2}",
                    t.task.direction,
                    t.task.mode,
                    t.task.m,
                    sim_cli::TaskSummary::mean_top1(&t.model)
                );
            }
        }
        Command::Attention {
            dataset,
            checkpoint,
            ids,
            layer,
            reference,
            labels,
            out,
        } => {
            if layer.is_some() {
                cfg.attention.layer = layer;
            }
            let o = sim_cli::cmd_attention(
                &cfg,
                &dataset,
                &checkpoint,
                &ids,
                reference.as_deref(),
                labels.as_deref(),
                &out,
                force,
            )?;
            println!("maps={}", o.maps.len());
            if let Some(r) = o.correlation {
                println!("correlation={r:.6}");
            }
        }
        Command::Lag { dataset, lags, out } => {
            if !lags.is_empty() {
                cfg.lag.lags = lags;
            }
            let s = sim_cli::cmd_lag(&cfg, &dataset, &out, force)?;
            println!("best_lag={}", s.best_lag);
        }
    }
    Ok(())
}

fn exit_code(e: &SimError) -> u8 {
    match e {
        SimError::Argument(_) | SimError::Json(_) => 2,
        SimError::Io(_) => 3,
        SimError::Format(_) => 4,
        SimError::State(_) => 5,
        SimError::Numeric { .. } => 6,
        SimError::Bounds(_) => 7,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(exit_code(&e))
        }
    }
}

