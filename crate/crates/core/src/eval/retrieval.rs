//! Candidate sampling, ranking and top-K accuracy.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::WorldConfig;
use crate::error::ensure_arg;
use crate::rng::stream;
use crate::{Result, SimError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "f->V")]
    FmriToVideo,
    #[serde(rename = "f->A")]
    FmriToAudio,
    #[serde(rename = "V->f")]
    VideoToFmri,
    #[serde(rename = "A->f")]
    AudioToFmri,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::FmriToVideo,
        Direction::FmriToAudio,
        Direction::VideoToFmri,
        Direction::AudioToFmri,
    ];

    pub fn fmri_query(self) -> bool {
        matches!(self, Direction::FmriToVideo | Direction::FmriToAudio)
    }

    pub fn uses_video(self) -> bool {
        matches!(self, Direction::FmriToVideo | Direction::VideoToFmri)
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::FmriToVideo => "f->V",
            Direction::FmriToAudio => "f->A",
            Direction::VideoToFmri => "V->f",
            Direction::AudioToFmri => "A->f",
        })
    }
}

impl FromStr for Direction {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f->V" | "fV" => Ok(Direction::FmriToVideo),
            "f->A" | "fA" => Ok(Direction::FmriToAudio),
            "V->f" | "Vf" => Ok(Direction::VideoToFmri),
            "A->f" | "Af" => Ok(Direction::AudioToFmri),
            _ => Err(SimError::Argument(format!("unknown direction {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeMode {
    /// Negatives from other movies.
    Soft,
    /// Negatives from the same movie, outside the buffer around the positive.
    Hard,
}

impl fmt::Display for NegativeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NegativeMode::Soft => "soft",
            NegativeMode::Hard => "hard",
        })
    }
}

impl FromStr for NegativeMode {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "soft" => Ok(NegativeMode::Soft),
            "hard" => Ok(NegativeMode::Hard),
            _ => Err(SimError::Argument(format!("unknown negative mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalTask {
    pub direction: Direction,
    pub m: usize,
    pub mode: NegativeMode,
    #[serde(default = "default_buffer")]
    pub buffer_seconds: f64,
    pub trials: usize,
}

fn default_buffer() -> f64 {
    3.0
}

impl RetrievalTask {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(self.m >= 2, "need at least 2 candidates, got {}", self.m);
        ensure_arg!(self.buffer_seconds >= 0.0, "buffer must be non-negative");
        ensure_arg!(self.trials >= 1, "need at least one trial");
        Ok(())
    }
}

/// Metadata of one retrievable sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolItem {
    pub subject: usize,
    pub movie: usize,
    pub clip: usize,
    pub offset_seconds: f64,
}

impl PoolItem {
    pub fn from_ids(config: &WorldConfig, ids: &[usize]) -> Vec<PoolItem> {
        ids.iter()
            .map(|&id| {
                let k = config.triplet_key(id);
                PoolItem {
                    subject: k.subject,
                    movie: k.movie,
                    clip: k.clip,
                    offset_seconds: config.offset_seconds(k.clip) as f64,
                }
            })
            .collect()
    }

    /// Whether `self` may serve as a negative for `positive`.
    pub fn admissible_negative(&self, positive: &PoolItem, mode: NegativeMode, buffer: f64) -> bool {
        if self.subject != positive.subject || (self.movie == positive.movie && self.clip == positive.clip) {
            return false;
        }
        match mode {
            NegativeMode::Soft => self.movie != positive.movie,
            NegativeMode::Hard => {
                self.movie == positive.movie && (self.offset_seconds - positive.offset_seconds).abs() > buffer
            }
        }
    }
}

/// One retrieval problem: the query's pool index and `M` candidate pool
/// indices, exactly one of which (at `positive_slot`) is the query itself.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub query: usize,
    pub candidates: Vec<usize>,
    pub positive_slot: usize,
}

/// Draws `m − 1` distinct admissible negatives uniformly and inserts the
/// positive at a uniform slot.
pub fn sample_candidates<R: Rng + ?Sized>(
    positive: usize,
    pool: &[PoolItem],
    m: usize,
    mode: NegativeMode,
    buffer: f64,
    rng: &mut R,
) -> Result<Trial> {
    ensure_arg!(positive < pool.len(), "positive index {positive} outside pool");
    ensure_arg!(m >= 2, "need at least 2 candidates");
    let pos = &pool[positive];
    let admissible: Vec<usize> = (0..pool.len())
        .filter(|&j| j != positive && pool[j].admissible_negative(pos, mode, buffer))
        .collect();
    if admissible.len() < m - 1 {
        return Err(SimError::Argument(format!(
            "only {} admissible {mode} negatives for M = {m}: short by {}",
            admissible.len(),
            m - 1 - admissible.len()
        )));
    }
    let picks = rand::seq::index::sample(rng, admissible.len(), m - 1);
    let mut candidates: Vec<usize> = picks.iter().map(|i| admissible[i]).collect();
    let slot = rng.random_range(0..m);
    candidates.insert(slot, positive);
    Ok(Trial {
        query: positive,
        candidates,
        positive_slot: slot,
    })
}

/// `task.trials` trials with uniformly drawn positives; trial `t` uses rng
/// stream `(seed, t)`, so candidate sets depend only on the seed.
pub fn sample_trials(pool: &[PoolItem], task: &RetrievalTask, seed: u64) -> Result<Vec<Trial>> {
    task.validate()?;
    ensure_arg!(!pool.is_empty(), "empty retrieval pool");
    (0..task.trials)
        .map(|t| {
            let mut rng = stream(seed, &[0x7e1a, t as u64]);
            let positive = rng.random_range(0..pool.len());
            sample_candidates(positive, pool, task.m, task.mode, task.buffer_seconds, &mut rng)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ranking {
    /// Candidate indices by descending probability, ties to the lower index.
    pub order: Vec<usize>,
    pub probabilities: Vec<f64>,
}

impl Ranking {
    /// One-based rank of candidate `slot`.
    pub fn rank_of(&self, slot: usize) -> usize {
        self.order.iter().position(|&c| c == slot).expect("slot in ranking") + 1
    }
}

/// Softmax of cosine similarity over temperature, then a stable sort.
pub fn rank_candidates(query: ArrayView1<f64>, candidates: ArrayView2<f64>, tau: f64) -> Ranking {
    let sims: Vec<f64> = candidates.rows().into_iter().map(|c| c.dot(&query) / tau).collect();
    let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = sims.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probabilities: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    let mut order: Vec<usize> = (0..sims.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    Ranking { order, probabilities }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub k: usize,
    /// Percent of trials with rank ≤ K.
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval, in percent.
    pub ci: f64,
}

pub fn topk_accuracy(ranks: &[usize], k: usize) -> Result<Accuracy> {
    ensure_arg!(!ranks.is_empty(), "no trials");
    let n = ranks.len() as f64;
    let p = ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    Ok(Accuracy {
        k,
        mean: 100.0 * p,
        ci: 100.0 * 1.96 * (p * (1.0 - p) / n).sqrt(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub accuracy: Vec<Accuracy>,
    pub trials: usize,
    /// `rank_histogram[r − 1]` counts trials with rank `r`.
    pub rank_histogram: Vec<usize>,
    pub ranks: Vec<usize>,
}

impl RetrievalResult {
    pub fn top(&self, k: usize) -> Option<&Accuracy> {
        self.accuracy.iter().find(|a| a.k == k)
    }
}

/// Ranks every trial. Row `i` of `queries`/`candidates` holds pool item `i`'s
/// query-side and candidate-side embedding.
pub fn evaluate_trials(
    trials: &[Trial],
    queries: ArrayView2<f64>,
    candidates: ArrayView2<f64>,
    tau: f64,
    ks: &[usize],
) -> Result<RetrievalResult> {
    ensure_arg!(!trials.is_empty(), "no trials");
    ensure_arg!(tau > 0.0, "temperature must be positive");
    let m = trials[0].candidates.len();
    let mut ranks = Vec::with_capacity(trials.len());
    for t in trials {
        let cand = candidates.select(ndarray::Axis(0), &t.candidates);
        let ranking = rank_candidates(queries.row(t.query), cand.view(), tau);
        ranks.push(ranking.rank_of(t.positive_slot));
    }
    let mut rank_histogram = vec![0; m];
    for &r in &ranks {
        rank_histogram[r - 1] += 1;
    }
    let accuracy = ks
        .iter()
        .filter(|&&k| k >= 1)
        .map(|&k| topk_accuracy(&ranks, k))
        .collect::<Result<_>>()?;
    Ok(RetrievalResult {
        accuracy,
        trials: trials.len(),
        rank_histogram,
        ranks,
    })
}

pub fn write_results_csv<W: Write>(mut out: W, rows: &[(String, RetrievalTask, RetrievalResult)]) -> std::io::Result<()> {
    writeln!(out, "model,direction,mode,M,K,mean,ci,trials")?;
    for (model, task, res) in rows {
        for a in &res.accuracy {
            writeln!(
                out,
                "{model},{},{},{},{},{:.4},{:.4},{}",
                task.direction, task.mode, task.m, a.k, a.mean, a.ci, res.trials
            )?;
        }
    }
    Ok(())
}
