//! Seeded synthetic corpora with controllable sequence dependence.
//!
//! Scene labels follow a Markov chain that keeps the previous emotion with
//! probability `persistence` and otherwise jumps uniformly to another one.
//! An utterance carries a cue word of its emotion with probability
//! `signal_rate`; every other token is filler. Cue word vectors sit near a
//! per-emotion centroid, so an utterance without a cue can only be
//! classified from its neighbours.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{derived_utterance_id, Corpus, EmotionLabel, Episode, Scene, Utterance};
use crate::embeddings::{EmbeddingTable, OovPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub episodes: usize,
    pub scenes_per_episode: usize,
    /// Total scene count; when set, replaces `episodes` and the last
    /// episode holds the remainder.
    pub total_scenes: Option<usize>,
    pub min_scene_len: usize,
    pub max_scene_len: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Probability that an utterance repeats the previous emotion.
    pub persistence: f64,
    /// Probability that an utterance contains a cue word.
    pub signal_rate: f64,
    pub cue_words: usize,
    pub filler_words: usize,
    pub embedding_dim: usize,
    /// Standard deviation of cue vectors around their centroid.
    pub cue_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            episodes: 20,
            scenes_per_episode: 10,
            total_scenes: None,
            min_scene_len: 10,
            max_scene_len: 10,
            min_tokens: 3,
            max_tokens: 8,
            persistence: 0.85,
            signal_rate: 0.5,
            cue_words: 4,
            filler_words: 40,
            embedding_dim: 16,
            cue_noise: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        let probs = [
            ("persistence", self.persistence),
            ("signal_rate", self.signal_rate),
        ];
        if let Some((name, p)) = probs.iter().find(|(_, p)| !(0.0..=1.0).contains(p)) {
            return Err(format!("{name} must lie in [0, 1], got {p}"));
        }
        if self.episodes == 0 || self.scenes_per_episode == 0 || self.total_scenes == Some(0) {
            return Err("episodes, scenes_per_episode and total_scenes must be positive".into());
        }
        if self.min_scene_len == 0 || self.min_scene_len > self.max_scene_len {
            return Err("scene length range must satisfy 1 <= min <= max".into());
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return Err("token range must satisfy 1 <= min <= max".into());
        }
        if self.cue_words == 0 || self.filler_words == 0 || self.embedding_dim == 0 {
            return Err("cue_words, filler_words and embedding_dim must be positive".into());
        }
        if !(self.cue_noise.is_finite() && self.cue_noise >= 0.0) {
            return Err("cue_noise must be non-negative".into());
        }
        Ok(())
    }
}

/// A generated corpus (gold labels filled in) and matching embeddings.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub corpus: Corpus,
    pub embeddings: EmbeddingTable,
}

pub fn cue_word(label: EmotionLabel, j: usize) -> String {
    format!("{}{j}", label.name())
}

pub fn filler_word(j: usize) -> String {
    format!("w{j}")
}

fn next_label(prev: EmotionLabel, persistence: f64, rng: &mut ChaCha8Rng) -> EmotionLabel {
    if rng.random_bool(persistence) {
        return prev;
    }
    let others: Vec<EmotionLabel> = EmotionLabel::ALL
        .iter()
        .copied()
        .filter(|&l| l != prev)
        .collect();
    *others.choose(rng).expect("six other labels")
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput, String> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let dim = cfg.embedding_dim;
    let unit = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid normal");
    let noise = Normal::new(0.0, cfg.cue_noise.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut table = EmbeddingTable::new(dim, OovPolicy::Zero);
    for label in EmotionLabel::ALL {
        let centroid: Vec<f64> = (0..dim).map(|_| unit.sample(&mut rng)).collect();
        for j in 0..cfg.cue_words {
            let v = centroid
                .iter()
                .map(|c| c + noise.sample(&mut rng))
                .collect();
            table
                .insert(cue_word(label, j), v)
                .map_err(|e| e.to_string())?;
        }
    }
    for j in 0..cfg.filler_words {
        let v = (0..dim).map(|_| unit.sample(&mut rng)).collect();
        table.insert(filler_word(j), v).map_err(|e| e.to_string())?;
    }

    let total = cfg
        .total_scenes
        .unwrap_or(cfg.episodes * cfg.scenes_per_episode);
    let n_episodes = total.div_ceil(cfg.scenes_per_episode);
    let mut episodes = Vec::with_capacity(n_episodes);
    for e in 0..n_episodes {
        let ep_id = format!("e{e:03}");
        let in_episode = cfg
            .scenes_per_episode
            .min(total - e * cfg.scenes_per_episode);
        let mut scenes = Vec::with_capacity(in_episode);
        for s in 0..in_episode {
            let scene_id = format!("s{s:02}");
            let len = rng.random_range(cfg.min_scene_len..=cfg.max_scene_len);
            let mut label = *EmotionLabel::ALL.choose(&mut rng).expect("labels");
            let mut utterances = Vec::with_capacity(len);
            for i in 0..len {
                if i > 0 {
                    label = next_label(label, cfg.persistence, &mut rng);
                }
                let n = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
                let mut tokens: Vec<String> = (0..n)
                    .map(|_| filler_word(rng.random_range(0..cfg.filler_words)))
                    .collect();
                if rng.random_bool(cfg.signal_rate) {
                    let pos = rng.random_range(0..n);
                    tokens[pos] = cue_word(label, rng.random_range(0..cfg.cue_words));
                }
                utterances.push(Utterance {
                    id: derived_utterance_id(&ep_id, &scene_id, i),
                    index: i,
                    speaker: format!("speaker{}", i % 2),
                    tokens,
                    gold: Some(label),
                });
            }
            scenes.push(Scene {
                id: scene_id,
                utterances,
            });
        }
        episodes.push(Episode { id: ep_id, scenes });
    }
    Ok(SynthOutput {
        corpus: Corpus { episodes },
        embeddings: table,
    })
}
