//! Resolved run configuration, config hashing and the run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attnmap::GroupBy;
use crate::clip::{AlignSchedule, ClipConfig, Modalities, TrainRegime};
use crate::datagen::{Experiment, WorldConfig, DEFAULT_RATIOS};
use crate::error::ensure_arg;
use crate::eval::{Direction, NegativeMode, RetrievalTask};
use crate::icosphere::patch_size_for_gap;
use crate::sit::SitConfig;
use crate::vsmae::PretrainSchedule;
use crate::{Result, SimError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VsmaeSettings {
    pub decoder_layers: usize,
    pub schedule: PretrainSchedule,
}

impl Default for VsmaeSettings {
    fn default() -> Self {
        Self {
            decoder_layers: 1,
            schedule: PretrainSchedule::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClipSettings {
    pub config: ClipConfig,
    pub schedule: AlignSchedule,
    pub regime: TrainRegime,
    pub modalities: Modalities,
}

impl Default for ClipSettings {
    fn default() -> Self {
        Self {
            config: ClipConfig::default(),
            schedule: AlignSchedule::default(),
            regime: TrainRegime::Finetune,
            modalities: Modalities::FVA,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub experiment: Experiment,
    pub split_ratios: [f64; 3],
    pub tasks: Vec<RetrievalTask>,
    pub ks: Vec<usize>,
    pub ridge_lambdas: Vec<f64>,
    /// Number of evaluation seeds (independent candidate draws) per task.
    pub eval_seeds: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        let task = |direction, m, mode| RetrievalTask {
            direction,
            m,
            mode,
            buffer_seconds: 3.0,
            trials: 1000,
        };
        Self {
            experiment: Experiment::E1,
            split_ratios: DEFAULT_RATIOS,
            tasks: vec![
                task(Direction::FmriToVideo, 16, NegativeMode::Soft),
                task(Direction::FmriToAudio, 16, NegativeMode::Soft),
                task(Direction::VideoToFmri, 16, NegativeMode::Soft),
                task(Direction::AudioToFmri, 16, NegativeMode::Soft),
                task(Direction::FmriToVideo, 16, NegativeMode::Hard),
            ],
            ks: vec![1, 5, 10],
            ridge_lambdas: vec![1.0, 10.0, 100.0, 1000.0, 10000.0],
            eval_seeds: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionSettings {
    /// Encoder layer to read; `None` means the last.
    pub layer: Option<usize>,
    pub group_by: GroupBy,
}

impl Default for AttentionSettings {
    fn default() -> Self {
        Self {
            layer: None,
            group_by: GroupBy::Head,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LagSettings {
    pub lags: Vec<usize>,
    pub lambda: f64,
}

impl Default for LagSettings {
    fn default() -> Self {
        Self {
            lags: vec![1, 3, 6, 10],
            lambda: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; copied into every stage by [`RunConfig::resolve`].
    pub seed: u64,
    /// Levels between the data mesh and the patching mesh.
    pub patch_gap: u32,
    pub world: WorldConfig,
    pub model: SitConfig,
    pub vsmae: VsmaeSettings,
    pub clip: ClipSettings,
    pub eval: EvalSettings,
    pub attention: AttentionSettings,
    pub lag: LagSettings,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            patch_gap: 3,
            world: WorldConfig::default(),
            model: SitConfig::default(),
            vsmae: VsmaeSettings::default(),
            clip: ClipSettings::default(),
            eval: EvalSettings::default(),
            attention: AttentionSettings::default(),
            lag: LagSettings::default(),
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Argument(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn coarse_level(&self) -> u32 {
        self.world.mesh_level.saturating_sub(self.patch_gap)
    }

    /// Applies a `SIM_SEED` override, propagates the master seed and fills
    /// the patch geometry of the model from the world, then validates.
    pub fn resolve(mut self, seed_override: Option<&str>) -> Result<Self> {
        if let Some(s) = seed_override {
            self.seed = s
                .trim()
                .parse()
                .map_err(|_| SimError::Argument(format!("SIM_SEED must be an unsigned integer, got {s:?}")))?;
        }
        ensure_arg!(
            self.patch_gap >= 1 && self.patch_gap <= self.world.mesh_level,
            "patch_gap {} incompatible with mesh level {}",
            self.patch_gap,
            self.world.mesh_level
        );
        self.world.seed = self.seed;
        self.vsmae.schedule.seed = self.seed;
        self.clip.schedule.seed = self.seed;
        self.model.num_patches = 20 * 4usize.pow(self.coarse_level());
        self.model.patch_vertices = patch_size_for_gap(self.patch_gap);
        self.model.frames = self.world.frames_per_window;
        self.world.validate()?;
        self.model.validate()?;
        for t in &self.eval.tasks {
            t.validate()?;
        }
        ensure_arg!(self.eval.eval_seeds >= 1, "eval_seeds must be >= 1");
        ensure_arg!(!self.lag.lags.is_empty(), "lag list is empty");
        Ok(self)
    }

    /// Hash of the fully resolved configuration.
    pub fn hash(&self) -> [u8; 32] {
        config_hash(self)
    }

    /// Hash of everything that fixes parameter shapes, used to match
    /// checkpoints to configs.
    pub fn model_hash(&self) -> [u8; 32] {
        config_hash(&(
            &self.model,
            self.vsmae.decoder_layers,
            self.clip.config.clip_dim,
            self.world.video_dim,
            self.world.audio_dim,
        ))
    }
}

pub fn config_hash<T: Serialize>(value: &T) -> [u8; 32] {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&bytes).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub files: Vec<ManifestEntry>,
}

/// Writes `config.json` and `manifest.json` into `dir`, hashing each of
/// `files` (paths relative to `dir`).
pub fn write_run_record(dir: &Path, command: &str, config: &RunConfig, files: &[&str]) -> Result<()> {
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)?)?;
    let files = files
        .iter()
        .map(|f| {
            let bytes = std::fs::read(dir.join(f))?;
            Ok(ManifestEntry {
                path: f.to_string(),
                sha256: hex(&Sha256::digest(&bytes)),
            })
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest {
        command: command.to_string(),
        config_hash: hex(&config.hash()),
        files,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_resolve() {
        let c = RunConfig::default().resolve(None).unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
        assert_eq!(c.model.num_patches, 80);
        assert_eq!(c.model.patch_vertices, 45);
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"sed": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"world": {"num_subject": 3}}"#).is_err());
    }

    #[test]
    fn seed_override_changes_hash() {
        let a = RunConfig::default().resolve(None).unwrap();
        let b = RunConfig::default().resolve(Some("17")).unwrap();
        assert_eq!(b.world.seed, 17);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.model_hash(), b.model_hash());
        assert!(RunConfig::default().resolve(Some("x")).is_err());
    }
}
