//! Synthetic triplet world: latent concepts drive video and audio embeddings
//! and band-limited spherical fields observed with a hemodynamic lag.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::ensure_arg;
use crate::icosphere::{generate_icosphere, vertex_count, SurfaceSeries, MAX_LEVEL};
use crate::rng::{stream, SimRng};
use crate::sphharm::{basis_size, real_harmonics};
use crate::{Result, SimError};

/// Rest period appended after the last clip, in seconds.
pub const TAIL_SECONDS: usize = 10;

const TAG_BASIS: u64 = 1;
const TAG_CONCEPT: u64 = 2;
const TAG_VIDEO_MAP: u64 = 3;
const TAG_AUDIO_MAP: u64 = 4;
const TAG_VIDEO_NOISE: u64 = 5;
const TAG_AUDIO_NOISE: u64 = 6;
const TAG_GAIN: u64 = 7;
const TAG_SERIES: u64 = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub num_subjects: usize,
    pub num_movies: usize,
    pub clips_per_movie: usize,
    pub clip_seconds: usize,
    /// Video frames per clip; the video sequence has one token per two frames.
    pub video_frames_per_clip: usize,
    pub frames_per_window: usize,
    pub lag_seconds: usize,
    pub mesh_level: u32,
    pub concept_dim: usize,
    pub harmonic_degree: usize,
    /// AR(1) coefficient of the concept sequence across consecutive clips.
    pub concept_persistence: f64,
    pub video_dim: usize,
    pub audio_tokens: usize,
    pub audio_dim: usize,
    pub subject_gain_std: f64,
    pub smooth_noise_std: f64,
    pub field_noise_std: f64,
    pub video_noise_std: f64,
    pub audio_noise_std: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            num_subjects: 8,
            num_movies: 4,
            clips_per_movie: 50,
            clip_seconds: 3,
            video_frames_per_clip: 16,
            frames_per_window: 3,
            lag_seconds: 6,
            mesh_level: 4,
            concept_dim: 12,
            harmonic_degree: 8,
            concept_persistence: 0.5,
            video_dim: 32,
            audio_tokens: 10,
            audio_dim: 16,
            subject_gain_std: 0.2,
            smooth_noise_std: 3.0,
            field_noise_std: 0.2,
            video_noise_std: 0.3,
            audio_noise_std: 0.6,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(
            [
                self.num_subjects,
                self.num_movies,
                self.clips_per_movie,
                self.clip_seconds,
                self.frames_per_window,
                self.concept_dim,
                self.video_dim,
                self.audio_tokens,
                self.audio_dim,
            ]
            .iter()
            .all(|&n| n >= 1),
            "world counts must be at least 1"
        );
        ensure_arg!(
            self.video_frames_per_clip >= 2,
            "need at least 2 video frames per clip"
        );
        ensure_arg!(self.mesh_level <= MAX_LEVEL, "mesh level {} too large", self.mesh_level);
        ensure_arg!(self.harmonic_degree <= 32, "harmonic degree {} too large", self.harmonic_degree);
        ensure_arg!(
            (0.0..1.0).contains(&self.concept_persistence.abs()),
            "concept persistence must lie in (-1, 1)"
        );
        for (name, v) in [
            ("subject_gain_std", self.subject_gain_std),
            ("smooth_noise_std", self.smooth_noise_std),
            ("field_noise_std", self.field_noise_std),
            ("video_noise_std", self.video_noise_std),
            ("audio_noise_std", self.audio_noise_std),
        ] {
            ensure_arg!(v.is_finite() && v >= 0.0, "{name} must be finite and >= 0");
        }
        Ok(())
    }

    pub fn video_tokens(&self) -> usize {
        self.video_frames_per_clip / 2
    }

    pub fn num_vertices(&self) -> usize {
        vertex_count(self.mesh_level)
    }

    pub fn series_seconds(&self) -> usize {
        self.clips_per_movie * self.clip_seconds + self.lag_seconds + TAIL_SECONDS
    }

    pub fn num_triplets(&self) -> usize {
        self.num_subjects * self.num_movies * self.clips_per_movie
    }

    pub fn num_clips(&self) -> usize {
        self.num_movies * self.clips_per_movie
    }

    /// Triplet id of `(subject, movie, clip)`.
    pub fn triplet_id(&self, key: TripletKey) -> usize {
        (key.subject * self.num_movies + key.movie) * self.clips_per_movie + key.clip
    }

    pub fn triplet_key(&self, id: usize) -> TripletKey {
        let clip = id % self.clips_per_movie;
        let rest = id / self.clips_per_movie;
        TripletKey {
            subject: rest / self.num_movies,
            movie: rest % self.num_movies,
            clip,
        }
    }

    pub fn clip_index(&self, movie: usize, clip: usize) -> usize {
        movie * self.clips_per_movie + clip
    }

    pub fn offset_seconds(&self, clip: usize) -> usize {
        clip * self.clip_seconds
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TripletKey {
    pub subject: usize,
    pub movie: usize,
    pub clip: usize,
}

/// One sample: an fMRI window and the stimulus it responds to.
#[derive(Clone, Debug)]
pub struct ClipTriplet {
    pub key: TripletKey,
    pub offset_seconds: usize,
    pub fmri_window: Array2<f32>,
    pub video_seq: Array2<f32>,
    pub audio_seq: Array2<f32>,
    pub concept: Array1<f64>,
}

/// Generated dataset. Stimulus sequences and concepts are indexed by
/// `movie · clips_per_movie + clip`, series by `subject · movies + movie`.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub series: Vec<SurfaceSeries>,
    pub video: Vec<Array2<f32>>,
    pub audio: Vec<Array2<f32>>,
    pub concepts: Option<Array2<f64>>,
}

/// Random `rows × cols` matrix of standard normals scaled by `std`.
fn gaussian(rng: &mut SimRng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

/// Smooth basis fields `B` (`V × K`): random harmonic combinations, each
/// column scaled to unit RMS over the vertices.
pub fn basis_fields(harmonics: &Array2<f64>, concept_dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = stream(seed, &[TAG_BASIS]);
    let g = gaussian(&mut rng, harmonics.ncols(), concept_dim, 1.0);
    let mut b = harmonics.dot(&g);
    for mut col in b.columns_mut() {
        let rms = (col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64).sqrt();
        if rms > 0.0 {
            col /= rms;
        }
    }
    b
}

/// Concept trajectories for all movies, `(movies · clips) × K`.
pub fn concepts(config: &WorldConfig) -> Array2<f64> {
    let k = config.concept_dim;
    let phi = config.concept_persistence;
    let innov = (1.0 - phi * phi).sqrt();
    let mut out = Array2::zeros((config.num_clips(), k));
    for m in 0..config.num_movies {
        let mut rng = stream(config.seed, &[TAG_CONCEPT, m as u64]);
        for c in 0..config.clips_per_movie {
            let row = config.clip_index(m, c);
            for j in 0..k {
                let z: f64 = StandardNormal.sample(&mut rng);
                out[(row, j)] = if c == 0 { z } else { phi * out[(row - 1, j)] + innov * z };
            }
        }
    }
    out
}

/// Stimulus sequences `A·c + noise` reshaped to `tokens × dim`, one per clip.
fn stimulus_sequences(
    config: &WorldConfig,
    concepts: &Array2<f64>,
    tokens: usize,
    dim: usize,
    noise_std: f64,
    map_tag: u64,
    noise_tag: u64,
) -> Vec<Array2<f32>> {
    let k = config.concept_dim;
    let map = gaussian(&mut stream(config.seed, &[map_tag]), tokens * dim, k, 1.0 / (k as f64).sqrt());
    (0..config.num_clips())
        .map(|row| {
            let mut rng = stream(config.seed, &[noise_tag, row as u64]);
            let clean = map.dot(&concepts.row(row));
            Array2::from_shape_fn((tokens, dim), |(t, d)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (clean[t * dim + d] + noise_std * z) as f32
            })
        })
        .collect()
}

/// Per-subject multiplicative gains.
pub fn subject_gains(config: &WorldConfig) -> Vec<f64> {
    let mut rng = stream(config.seed, &[TAG_GAIN]);
    (0..config.num_subjects)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            1.0 + config.subject_gain_std * z
        })
        .collect()
}

/// Generates the full world. Deterministic in `config.seed`; every series and
/// clip draws from its own derived stream.
pub fn make_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let mesh = generate_icosphere(config.mesh_level)?;
    let harmonics = real_harmonics(mesh.vertices(), config.harmonic_degree);
    let basis = basis_fields(&harmonics, config.concept_dim, config.seed);
    let concepts = concepts(config);
    let video = stimulus_sequences(
        config,
        &concepts,
        config.video_tokens(),
        config.video_dim,
        config.video_noise_std,
        TAG_VIDEO_MAP,
        TAG_VIDEO_NOISE,
    );
    let audio = stimulus_sequences(
        config,
        &concepts,
        config.audio_tokens,
        config.audio_dim,
        config.audio_noise_std,
        TAG_AUDIO_MAP,
        TAG_AUDIO_NOISE,
    );
    let gains = subject_gains(config);

    let v = mesh.num_vertices();
    let secs = config.series_seconds();
    let k = config.concept_dim;
    let nh = basis_size(config.harmonic_degree);
    // Harmonics have mean square 1/4π, so this coefficient scale gives the
    // requested RMS over the sphere.
    let coef_std = config.smooth_noise_std * (4.0 * std::f64::consts::PI / nh as f64).sqrt();
    let stim_end = config.clips_per_movie * config.clip_seconds;

    let mut series = Vec::with_capacity(config.num_subjects * config.num_movies);
    for s in 0..config.num_subjects {
        for m in 0..config.num_movies {
            let mut rng = stream(config.seed, &[TAG_SERIES, s as u64, m as u64]);
            // Drive: lagged concept per second, zero during rest.
            let mut drive = Array2::<f64>::zeros((k, secs));
            for t in config.lag_seconds..secs {
                let stim_t = t - config.lag_seconds;
                if stim_t < stim_end {
                    let row = config.clip_index(m, stim_t / config.clip_seconds);
                    drive.column_mut(t).assign(&concepts.row(row));
                }
            }
            drive *= gains[s] / (k as f64).sqrt();
            let mut field = basis.dot(&drive);
            let coefs = gaussian(&mut rng, nh, secs, coef_std);
            field += &harmonics.dot(&coefs);
            let mut values = field.mapv(|x| x as f32);
            if config.field_noise_std > 0.0 {
                for x in values.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *x += (config.field_noise_std * z) as f32;
                }
            }
            debug_assert_eq!(values.nrows(), v);
            series.push(SurfaceSeries::new(config.mesh_level, values)?);
        }
    }
    Ok(World {
        config: config.clone(),
        series,
        video,
        audio,
        concepts: Some(concepts),
    })
}

/// Frames `start + lag .. start + lag + frames` of `series` (1 s sampling).
pub fn window_with_lag(series: &SurfaceSeries, start: usize, lag: usize, frames: usize) -> Result<Array2<f32>> {
    let first = start + lag;
    if frames == 0 || first + frames > series.channels() {
        return Err(SimError::Bounds(format!(
            "window {}..{} outside series of {} frames",
            first,
            first + frames,
            series.channels()
        )));
    }
    Ok(series.values.slice(s![.., first..first + frames]).to_owned())
}

/// Z-scores a window over all vertices and frames. A constant window maps to
/// zeros.
pub fn normalize_window(window: ArrayView2<f32>) -> Array2<f32> {
    let n = window.len() as f64;
    let mean = window.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = window.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    let inv = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
    window.mapv(|x| ((x as f64 - mean) * inv) as f32)
}

/// Anything that can hand out fMRI windows by triplet id.
pub trait WindowSource {
    fn window(&self, id: usize) -> Result<Array2<f32>>;
}

/// Windows plus the stimulus sequences they pair with.
pub trait TripletSource: WindowSource {
    fn config(&self) -> &WorldConfig;
    fn video(&self, id: usize) -> Result<&Array2<f32>>;
    fn audio(&self, id: usize) -> Result<&Array2<f32>>;
}

impl World {
    pub fn num_triplets(&self) -> usize {
        self.config.num_triplets()
    }

    pub fn series_of(&self, subject: usize, movie: usize) -> &SurfaceSeries {
        &self.series[subject * self.config.num_movies + movie]
    }

    pub fn video_of(&self, movie: usize, clip: usize) -> &Array2<f32> {
        &self.video[self.config.clip_index(movie, clip)]
    }

    pub fn audio_of(&self, movie: usize, clip: usize) -> &Array2<f32> {
        &self.audio[self.config.clip_index(movie, clip)]
    }

    pub fn check_id(&self, id: usize) -> Result<()> {
        if id >= self.num_triplets() {
            return Err(SimError::Bounds(format!(
                "triplet id {id} out of range ({} triplets)",
                self.num_triplets()
            )));
        }
        Ok(())
    }

    pub fn triplet(&self, id: usize) -> Result<ClipTriplet> {
        self.check_id(id)?;
        let key = self.config.triplet_key(id);
        let clip = self.config.clip_index(key.movie, key.clip);
        Ok(ClipTriplet {
            key,
            offset_seconds: self.config.offset_seconds(key.clip),
            fmri_window: self.window(id)?,
            video_seq: self.video[clip].clone(),
            audio_seq: self.audio[clip].clone(),
            concept: match &self.concepts {
                Some(c) => c.row(clip).to_owned(),
                None => Array1::zeros(0),
            },
        })
    }
}

impl WindowSource for World {
    fn window(&self, id: usize) -> Result<Array2<f32>> {
        self.check_id(id)?;
        let key = self.config.triplet_key(id);
        window_with_lag(
            self.series_of(key.subject, key.movie),
            self.config.offset_seconds(key.clip),
            self.config.lag_seconds,
            self.config.frames_per_window,
        )
    }
}

impl TripletSource for World {
    fn config(&self) -> &WorldConfig {
        &self.config
    }

    fn video(&self, id: usize) -> Result<&Array2<f32>> {
        self.check_id(id)?;
        let key = self.config.triplet_key(id);
        Ok(self.video_of(key.movie, key.clip))
    }

    fn audio(&self, id: usize) -> Result<&Array2<f32>> {
        self.check_id(id)?;
        let key = self.config.triplet_key(id);
        Ok(self.audio_of(key.movie, key.clip))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Experiment {
    E1,
    E2,
    E3,
}

impl FromStr for Experiment {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "E1" | "1" => Ok(Experiment::E1),
            "E2" | "2" => Ok(Experiment::E2),
            "E3" | "3" => Ok(Experiment::E3),
            _ => Err(SimError::Argument(format!("unknown experiment {s:?}"))),
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Train/validation/test ratios for subject partitions.
pub const DEFAULT_RATIOS: [f64; 3] = [124.0, 25.0, 25.0];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentSplit {
    pub experiment: Experiment,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits `total` into integer parts proportional to `ratios` by largest
/// remainder; ties go to the earlier part.
pub fn largest_remainder(total: usize, ratios: &[f64]) -> Result<Vec<usize>> {
    let sum: f64 = ratios.iter().sum();
    ensure_arg!(
        ratios.iter().all(|r| r.is_finite() && *r >= 0.0) && sum > 0.0,
        "split ratios must be non-negative with a positive sum"
    );
    let quotas: Vec<f64> = ratios.iter().map(|r| r / sum * total as f64).collect();
    let mut parts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let short = total - parts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        parts[i] += 1;
    }
    Ok(parts)
}

/// Subject groups (train, val, test) from a seeded shuffle.
pub fn subject_partition(config: &WorldConfig, ratios: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    let parts = largest_remainder(config.num_subjects, &ratios)?;
    ensure_arg!(
        parts.iter().all(|&p| p >= 1),
        "{} subjects cannot be split {:?} with every group non-empty (got {:?})",
        config.num_subjects,
        ratios,
        parts
    );
    let mut subjects: Vec<usize> = (0..config.num_subjects).collect();
    subjects.shuffle(&mut stream(seed, &[0x5b11]));
    let (a, rest) = subjects.split_at(parts[0]);
    let (b, c) = rest.split_at(parts[1]);
    let sorted = |x: &[usize]| {
        let mut v = x.to_vec();
        v.sort_unstable();
        v
    };
    Ok([sorted(a), sorted(b), sorted(c)])
}

pub fn split_experiment(
    config: &WorldConfig,
    experiment: Experiment,
    ratios: [f64; 3],
    seed: u64,
) -> Result<ExperimentSplit> {
    let half = config.clips_per_movie / 2;
    let ids = |subjects: &[usize], clips: std::ops::Range<usize>| {
        let mut out = Vec::new();
        for &subject in subjects {
            for movie in 0..config.num_movies {
                for clip in clips.clone() {
                    out.push(config.triplet_id(TripletKey { subject, movie, clip }));
                }
            }
        }
        out
    };
    let all_clips = 0..config.clips_per_movie;
    let first = 0..half;
    let second = half..config.clips_per_movie;
    if experiment != Experiment::E1 {
        ensure_arg!(
            config.clips_per_movie >= 2,
            "{} clips per movie cannot be halved",
            config.clips_per_movie
        );
    }
    let split = match experiment {
        Experiment::E1 => {
            let [tr, va, te] = subject_partition(config, ratios, seed)?;
            ExperimentSplit {
                experiment,
                train: ids(&tr, all_clips.clone()),
                val: ids(&va, all_clips.clone()),
                test: ids(&te, all_clips),
            }
        }
        Experiment::E2 => {
            let everyone: Vec<usize> = (0..config.num_subjects).collect();
            ExperimentSplit {
                experiment,
                train: ids(&everyone, first),
                val: Vec::new(),
                test: ids(&everyone, second),
            }
        }
        Experiment::E3 => {
            let [tr, va, te] = subject_partition(config, ratios, seed)?;
            ExperimentSplit {
                experiment,
                train: ids(&tr, first),
                val: ids(&va, second.clone()),
                test: ids(&te, second),
            }
        }
    };
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        WorldConfig {
            num_subjects: 3,
            num_movies: 2,
            clips_per_movie: 6,
            mesh_level: 2,
            harmonic_degree: 4,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn dataset_size_and_ids() {
        let cfg = small();
        let w = make_world(&cfg).unwrap();
        assert_eq!(w.num_triplets(), 3 * 2 * 6);
        for id in 0..w.num_triplets() {
            assert_eq!(cfg.triplet_id(cfg.triplet_key(id)), id);
            let t = w.triplet(id).unwrap();
            assert_eq!(t.fmri_window.dim(), (162, 3));
            assert_eq!(t.video_seq.dim(), (8, 32));
            assert_eq!(t.audio_seq.dim(), (10, 16));
            assert_eq!(t.concept.len(), 12);
        }
        assert!(matches!(w.triplet(36), Err(SimError::Bounds(_))));
    }

    #[test]
    fn deterministic() {
        let a = make_world(&small()).unwrap();
        let b = make_world(&small()).unwrap();
        assert_eq!(a, b);
        let c = make_world(&WorldConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.series[0], c.series[0]);
    }

    #[test]
    fn noiseless_windows_match_across_subjects() {
        let cfg = WorldConfig {
            subject_gain_std: 0.0,
            smooth_noise_std: 0.0,
            field_noise_std: 0.0,
            ..small()
        };
        let w = make_world(&cfg).unwrap();
        for movie in 0..2 {
            for clip in 0..6 {
                let id = |subject| cfg.triplet_id(TripletKey { subject, movie, clip });
                let a = w.window(id(0)).unwrap();
                assert_eq!(a, w.window(id(1)).unwrap());
                assert_eq!(a, w.window(id(2)).unwrap());
            }
        }
    }

    #[test]
    fn window_frames_follow_lag() {
        let values = Array2::from_shape_fn((12, 30), |(_, t)| t as f32);
        let series = SurfaceSeries::new(0, values).unwrap();
        let w = window_with_lag(&series, 0, 0, 3).unwrap();
        assert_eq!(w.row(0).to_vec(), vec![0.0, 1.0, 2.0]);
        let w = window_with_lag(&series, 10, 6, 3).unwrap();
        assert_eq!(w.row(5).to_vec(), vec![16.0, 17.0, 18.0]);
        assert!(matches!(window_with_lag(&series, 25, 3, 3), Err(SimError::Bounds(_))));
    }

    #[test]
    fn fields_are_band_limited_without_white_noise() {
        let cfg = WorldConfig {
            field_noise_std: 0.0,
            ..small()
        };
        let w = make_world(&cfg).unwrap();
        let mesh = generate_icosphere(cfg.mesh_level).unwrap();
        let y = real_harmonics(mesh.vertices(), cfg.harmonic_degree);
        let a = nalgebra::DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| y[(i, j)]);
        let qr = a.clone().qr();
        let series = &w.series[1].values;
        let mut max_res = 0.0f64;
        for t in [0usize, 9, 20] {
            let b = nalgebra::DVector::from_fn(series.nrows(), |i, _| series[(i, t)] as f64);
            let coef = qr.r().solve_upper_triangular(&(qr.q().transpose() * &b)).unwrap();
            let res = (&a * coef - &b).amax();
            max_res = max_res.max(res);
        }
        assert!(max_res < 1e-5, "residual {max_res}");
    }

    #[test]
    fn zero_noise_stimuli_are_injective() {
        let cfg = WorldConfig {
            video_noise_std: 0.0,
            audio_noise_std: 0.0,
            ..small()
        };
        let w = make_world(&cfg).unwrap();
        for i in 0..cfg.num_clips() {
            for j in 0..i {
                assert_ne!(w.video[i], w.video[j]);
                assert_ne!(w.audio[i], w.audio[j]);
            }
        }
    }

    #[test]
    fn largest_remainder_rounding() {
        assert_eq!(largest_remainder(8, &DEFAULT_RATIOS).unwrap(), vec![6, 1, 1]);
        assert_eq!(largest_remainder(174, &DEFAULT_RATIOS).unwrap(), vec![124, 25, 25]);
        assert_eq!(largest_remainder(10, &[1.0, 1.0, 1.0]).unwrap(), vec![4, 3, 3]);
    }

    #[test]
    fn e1_partitions_subjects() {
        let cfg = WorldConfig {
            num_subjects: 8,
            ..small()
        };
        let split = split_experiment(&cfg, Experiment::E1, DEFAULT_RATIOS, 3).unwrap();
        let subjects = |ids: &[usize]| {
            let mut s: Vec<usize> = ids.iter().map(|&i| cfg.triplet_key(i).subject).collect();
            s.dedup();
            s
        };
        assert_eq!(subjects(&split.train).len(), 6);
        assert_eq!(subjects(&split.val).len(), 1);
        assert_eq!(subjects(&split.test).len(), 1);
        assert_eq!(split.train.len() + split.val.len() + split.test.len(), cfg.num_triplets());
        for s in subjects(&split.test) {
            assert!(!subjects(&split.train).contains(&s));
        }
    }

    #[test]
    fn e2_halves_clips() {
        let cfg = WorldConfig {
            clips_per_movie: 10,
            ..small()
        };
        let split = split_experiment(&cfg, Experiment::E2, DEFAULT_RATIOS, 0).unwrap();
        assert_eq!(split.train.len(), 3 * 2 * 5);
        assert_eq!(split.test.len(), 3 * 2 * 5);
        assert!(split.val.is_empty());
        assert!(split.train.iter().all(|&i| cfg.triplet_key(i).clip < 5));
        assert!(split.test.iter().all(|&i| cfg.triplet_key(i).clip >= 5));
    }

    #[test]
    fn e3_test_is_unseen_subject_and_half() {
        let cfg = WorldConfig {
            num_subjects: 8,
            ..small()
        };
        let split = split_experiment(&cfg, Experiment::E3, DEFAULT_RATIOS, 1).unwrap();
        let half = |c: usize| c >= cfg.clips_per_movie / 2;
        for &t in &split.test {
            let kt = cfg.triplet_key(t);
            for &r in &split.train {
                let kr = cfg.triplet_key(r);
                assert!(kr.subject != kt.subject && half(kr.clip) != half(kt.clip));
            }
        }
    }

    #[test]
    fn too_few_subjects_is_argument_error() {
        let cfg = WorldConfig {
            num_subjects: 2,
            ..small()
        };
        assert!(matches!(
            split_experiment(&cfg, Experiment::E1, DEFAULT_RATIOS, 0),
            Err(SimError::Argument(_))
        ));
    }

    #[test]
    fn normalized_window_has_zero_mean_unit_std() {
        let w = Array2::from_shape_fn((30, 3), |(i, t)| (i * 3 + t) as f32 * 0.7 + 2.0);
        let n = normalize_window(w.view());
        let mean = n.iter().map(|&x| x as f64).sum::<f64>() / 90.0;
        let var = n.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / 90.0;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-5);
        let zero = normalize_window(Array2::<f32>::ones((4, 2)).view());
        assert!(zero.iter().all(|&x| x == 0.0));
    }
}
