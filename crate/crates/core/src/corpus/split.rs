//! Episode-preserving train/dev/test splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, EmotionLabel, Result};

/// Number of seeded candidate assignments scored by [`split_corpus`].
pub const SPLIT_CANDIDATES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Dev,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Dev, Partition::Test];

    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Dev => "dev",
            Partition::Test => "test",
        }
    }
}

impl std::str::FromStr for Partition {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "train" | "trn" => Ok(Partition::Train),
            "dev" => Ok(Partition::Dev),
            "test" | "tst" => Ok(Partition::Test),
            _ => Err(format!(
                "unknown partition `{s}` (expected train, dev or test)"
            )),
        }
    }
}

/// Disjoint episode partitions. Serializes as the split manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub seed: u64,
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl DataSplit {
    pub fn episodes(&self, partition: Partition) -> &[String] {
        match partition {
            Partition::Train => &self.train,
            Partition::Dev => &self.dev,
            Partition::Test => &self.test,
        }
    }

    /// Checks the split against a corpus: disjoint, exhaustive, known ids.
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for p in Partition::ALL {
            for id in self.episodes(p) {
                if corpus.episode(id).is_none() {
                    return Err(CorpusError::Integrity(format!(
                        "split names unknown episode `{id}`"
                    )));
                }
                if !seen.insert(id.as_str()) {
                    return Err(CorpusError::Integrity(format!(
                        "episode `{id}` appears in two partitions"
                    )));
                }
            }
        }
        if let Some(missing) = corpus
            .episodes
            .iter()
            .find(|e| !seen.contains(e.id.as_str()))
        {
            return Err(CorpusError::Integrity(format!(
                "episode `{}` is not assigned",
                missing.id
            )));
        }
        Ok(())
    }
}

/// Per-emotion gold counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct LabelDistribution {
    pub counts: [usize; EmotionLabel::COUNT],
}

impl LabelDistribution {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn count(&self, label: EmotionLabel) -> usize {
        self.counts[label.index()]
    }

    /// Ratios summing to one; all zero for an empty distribution.
    pub fn ratios(&self) -> [f64; EmotionLabel::COUNT] {
        let total = self.total();
        let mut out = [0.0; EmotionLabel::COUNT];
        if total > 0 {
            for (o, &c) in out.iter_mut().zip(&self.counts) {
                *o = c as f64 / total as f64;
            }
        }
        out
    }

    pub fn ratio(&self, label: EmotionLabel) -> f64 {
        self.ratios()[label.index()]
    }

    fn l1(&self, other: &[f64; EmotionLabel::COUNT]) -> f64 {
        self.ratios()
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// Gold label distribution over the whole corpus, or over the given episodes.
/// Every utterance in scope must be labeled.
pub fn label_distribution(
    corpus: &Corpus,
    episodes: Option<&[String]>,
) -> Result<LabelDistribution> {
    let mut dist = LabelDistribution::default();
    let mut unlabeled = Vec::new();
    let mut visit = |scene: &super::Scene| {
        for u in &scene.utterances {
            match u.gold {
                Some(l) => dist.counts[l.index()] += 1,
                None => unlabeled.push(u.id.clone()),
            }
        }
    };
    match episodes {
        Some(ids) => corpus.scenes_of(ids).for_each(&mut visit),
        None => corpus.scenes().for_each(&mut visit),
    }
    if !unlabeled.is_empty() {
        return Err(CorpusError::Unlabeled(unlabeled));
    }
    Ok(dist)
}

fn episode_distribution(episode: &super::Episode) -> LabelDistribution {
    let mut d = LabelDistribution::default();
    for u in episode.scenes.iter().flat_map(|s| &s.utterances) {
        if let Some(l) = u.gold {
            d.counts[l.index()] += 1;
        }
    }
    d
}

/// Splits whole episodes into partitions of `targets = (train, dev, test)`
/// episode counts.
///
/// [`SPLIT_CANDIDATES`] random assignments are drawn from a ChaCha8 stream
/// seeded with `seed`. Each is scored by the largest L1 distance between a
/// partition's emotion ratios and the corpus-wide ratios; the lowest score
/// wins, earliest candidate on ties. Unlabeled utterances are ignored for
/// scoring.
pub fn split_corpus(
    corpus: &Corpus,
    seed: u64,
    targets: (usize, usize, usize),
) -> Result<DataSplit> {
    let n = corpus.episodes.len();
    let (tr, dv, ts) = targets;
    if tr + dv + ts != n {
        return Err(CorpusError::Argument(format!(
            "split targets ({tr}, {dv}, {ts}) sum to {} but the corpus has {n} episodes",
            tr + dv + ts
        )));
    }
    let per_episode: Vec<LabelDistribution> =
        corpus.episodes.iter().map(episode_distribution).collect();
    let mut global = LabelDistribution::default();
    for d in &per_episode {
        for (g, c) in global.counts.iter_mut().zip(d.counts) {
            *g += c;
        }
    }
    let global_ratios = global.ratios();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..SPLIT_CANDIDATES {
        order.shuffle(&mut rng);
        let bounds = [(0, tr), (tr, tr + dv), (tr + dv, n)];
        let score = bounds
            .iter()
            .map(|&(lo, hi)| {
                let mut d = LabelDistribution::default();
                for &e in &order[lo..hi] {
                    for (acc, c) in d.counts.iter_mut().zip(per_episode[e].counts) {
                        *acc += c;
                    }
                }
                d.l1(&global_ratios)
            })
            .fold(0.0f64, f64::max);
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, order.clone()));
        }
    }
    let (score, order) = best.expect("at least one candidate");
    log::debug!("split seed {seed}: max partition L1 divergence {score:.6}");
    let ids = |range: std::ops::Range<usize>| -> Vec<String> {
        order[range]
            .iter()
            .map(|&e| corpus.episodes[e].id.clone())
            .collect()
    };
    Ok(DataSplit {
        seed,
        train: ids(0..tr),
        dev: ids(tr..tr + dv),
        test: ids(tr + dv..n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Episode, Scene, Utterance};

    fn corpus_with(
        episodes: usize,
        labels_per_episode: &dyn Fn(usize) -> Vec<EmotionLabel>,
    ) -> Corpus {
        Corpus {
            episodes: (0..episodes)
                .map(|e| Episode {
                    id: format!("e{e:03}"),
                    scenes: vec![Scene {
                        id: "c0".into(),
                        utterances: labels_per_episode(e)
                            .into_iter()
                            .enumerate()
                            .map(|(i, l)| Utterance {
                                id: format!("e{e:03}/c0/{i}"),
                                index: i,
                                speaker: "x".into(),
                                tokens: vec!["t".into()],
                                gold: Some(l),
                            })
                            .collect(),
                    }],
                })
                .collect(),
        }
    }

    fn varied(e: usize) -> Vec<EmotionLabel> {
        (0..(3 + e % 5))
            .map(|i| EmotionLabel::ALL[(e * 3 + i) % 7])
            .collect()
    }

    #[test]
    fn split_has_requested_sizes_and_is_exhaustive() {
        let c = corpus_with(97, &varied);
        let s = split_corpus(&c, 11, (77, 11, 9)).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (77, 11, 9));
        s.validate(&c).unwrap();
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let c = corpus_with(20, &varied);
        let a = split_corpus(&c, 5, (14, 3, 3)).unwrap();
        let b = split_corpus(&c, 5, (14, 3, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inconsistent_targets_are_rejected() {
        let c = corpus_with(2, &varied);
        assert!(matches!(
            split_corpus(&c, 0, (1, 1, 1)),
            Err(CorpusError::Argument(_))
        ));
    }

    #[test]
    fn chosen_split_beats_first_candidate() {
        // The selected candidate can never score worse than any other candidate,
        // in particular the first one drawn from the same stream.
        let c = corpus_with(30, &varied);
        let s = split_corpus(&c, 3, (20, 5, 5)).unwrap();
        let global = label_distribution(&c, None).unwrap().ratios();
        let score = |ids: &[String]| label_distribution(&c, Some(ids)).unwrap().l1(&global);
        let chosen = [&s.train, &s.dev, &s.test]
            .iter()
            .map(|p| score(p))
            .fold(0.0, f64::max);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut order: Vec<usize> = (0..30).collect();
        order.shuffle(&mut rng);
        let ids: Vec<String> = order.iter().map(|&e| c.episodes[e].id.clone()).collect();
        let first = [&ids[..20], &ids[20..25], &ids[25..]]
            .iter()
            .map(|p| score(p))
            .fold(0.0, f64::max);
        assert!(chosen <= first + 1e-12);
    }

    #[test]
    fn label_distribution_counts_and_ratios() {
        let c = corpus_with(1, &|_| vec![EmotionLabel::Joyful, EmotionLabel::Joyful]);
        let d = label_distribution(&c, None).unwrap();
        assert_eq!(d.total(), 2);
        assert_eq!(d.ratio(EmotionLabel::Joyful), 1.0);

        let c = corpus_with(9, &varied);
        let d = label_distribution(&c, None).unwrap();
        assert!((d.ratios().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unlabeled_utterances_are_listed() {
        let mut c = corpus_with(1, &|_| vec![EmotionLabel::Sad, EmotionLabel::Mad]);
        c.episodes[0].scenes[0].utterances[1].gold = None;
        match label_distribution(&c, None) {
            Err(CorpusError::Unlabeled(ids)) => assert_eq!(ids, vec!["e000/c0/1".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn manifest_round_trips_through_json() {
        let s = DataSplit {
            seed: 9,
            train: vec!["a".into()],
            dev: vec!["b".into()],
            test: vec![],
        };
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<DataSplit>(&json).unwrap(), s);
    }
}
