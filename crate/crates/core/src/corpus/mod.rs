//! Dialogue corpus: episodes, scenes and utterances.
//!
//! Order matters everywhere in this module. Utterances keep dialogue order
//! inside a scene because the sequence models read their history from it.

mod label;
mod split;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use label::{to_coarse, CoarseLabel, EmotionLabel, ParseLabelError};
pub use split::{
    label_distribution, split_corpus, DataSplit, LabelDistribution, Partition, SPLIT_CANDIDATES,
};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed transcript at byte {offset} (line {line}, column {column}): {message}")]
    Parse {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("corpus integrity: {0}")]
    Integrity(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("{} unlabeled utterance(s), first: {}", .0.len(), .0.first().map(String::as_str).unwrap_or(""))]
    Unlabeled(Vec<String>),
    #[error("gold sidecar line {line}: {message}")]
    Sidecar { line: u64, message: String },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    /// Corpus-wide unique identifier.
    pub id: String,
    /// 0-based position inside the scene.
    pub index: usize,
    pub speaker: String,
    pub tokens: Vec<String>,
    pub gold: Option<EmotionLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scene {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub id: String,
    pub scenes: Vec<Scene>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub episodes: Vec<Episode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CorpusCounts {
    pub episodes: usize,
    pub scenes: usize,
    pub utterances: usize,
}

// Wire format.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTranscript {
    episodes: Vec<RawEpisode>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEpisode {
    id: String,
    scenes: Vec<RawScene>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScene {
    id: String,
    utterances: Vec<RawUtterance>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUtterance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    speaker: String,
    tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emotion: Option<EmotionLabel>,
}

/// Identifier given to an utterance whose transcript entry has no `id`.
pub fn derived_utterance_id(episode: &str, scene: &str, index: usize) -> String {
    format!("{episode}/{scene}/{index}")
}

impl Corpus {
    pub fn counts(&self) -> CorpusCounts {
        CorpusCounts {
            episodes: self.episodes.len(),
            scenes: self.scenes().count(),
            utterances: self.utterances().count(),
        }
    }

    pub fn scenes(&self) -> impl Iterator<Item = &Scene> {
        self.episodes.iter().flat_map(|e| e.scenes.iter())
    }

    pub fn utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.scenes().flat_map(|s| s.utterances.iter())
    }

    pub fn episode(&self, id: &str) -> Option<&Episode> {
        self.episodes.iter().find(|e| e.id == id)
    }

    /// Scenes of the given episodes, in corpus order.
    pub fn scenes_of<'a>(
        &'a self,
        episode_ids: &'a [String],
    ) -> impl Iterator<Item = &'a Scene> + 'a {
        let wanted: HashSet<&str> = episode_ids.iter().map(String::as_str).collect();
        self.episodes
            .iter()
            .filter(move |e| wanted.contains(e.id.as_str()))
            .flat_map(|e| e.scenes.iter())
    }

    /// Parses a transcript document.
    pub fn from_json_str(text: &str) -> Result<Corpus> {
        let raw: RawTranscript = serde_json::from_str(text).map_err(|e| {
            let offset = byte_offset(text, e.line(), e.column());
            CorpusError::Parse {
                offset,
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            }
        })?;
        Corpus::from_raw(raw)
    }

    fn from_raw(raw: RawTranscript) -> Result<Corpus> {
        let mut seen_utterances = HashSet::new();
        let mut seen_episodes = HashSet::new();
        let mut episodes = Vec::with_capacity(raw.episodes.len());
        for ep in raw.episodes {
            if !seen_episodes.insert(ep.id.clone()) {
                return Err(CorpusError::Integrity(format!(
                    "duplicate episode id `{}`",
                    ep.id
                )));
            }
            if ep.scenes.is_empty() {
                return Err(CorpusError::Integrity(format!(
                    "episode `{}` has no scenes",
                    ep.id
                )));
            }
            let mut scenes = Vec::with_capacity(ep.scenes.len());
            for sc in ep.scenes {
                if sc.utterances.is_empty() {
                    return Err(CorpusError::Integrity(format!(
                        "scene `{}` of episode `{}` has no utterances",
                        sc.id, ep.id
                    )));
                }
                let mut utterances = Vec::with_capacity(sc.utterances.len());
                for (index, u) in sc.utterances.into_iter().enumerate() {
                    let id =
                        u.id.unwrap_or_else(|| derived_utterance_id(&ep.id, &sc.id, index));
                    if u.tokens.is_empty() {
                        return Err(CorpusError::Integrity(format!(
                            "utterance `{id}` has no tokens"
                        )));
                    }
                    if !seen_utterances.insert(id.clone()) {
                        return Err(CorpusError::Integrity(format!(
                            "duplicate utterance id `{id}`"
                        )));
                    }
                    utterances.push(Utterance {
                        id,
                        index,
                        speaker: u.speaker,
                        tokens: u.tokens,
                        gold: u.emotion,
                    });
                }
                scenes.push(Scene {
                    id: sc.id,
                    utterances,
                });
            }
            episodes.push(Episode { id: ep.id, scenes });
        }
        Ok(Corpus { episodes })
    }

    /// Serializes into the transcript format. Utterance ids are always written
    /// so that a reload reproduces them even if they were derived.
    pub fn to_json_string(&self) -> String {
        let raw = RawTranscript {
            episodes: self
                .episodes
                .iter()
                .map(|e| RawEpisode {
                    id: e.id.clone(),
                    scenes: e
                        .scenes
                        .iter()
                        .map(|s| RawScene {
                            id: s.id.clone(),
                            utterances: s
                                .utterances
                                .iter()
                                .map(|u| RawUtterance {
                                    id: Some(u.id.clone()),
                                    speaker: u.speaker.clone(),
                                    tokens: u.tokens.clone(),
                                    emotion: u.gold,
                                })
                                .collect(),
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("transcript serialization cannot fail")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json_string()).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Attaches gold labels from a `utterance_id,label` CSV (with header).
    pub fn apply_gold_csv(&mut self, text: &str) -> Result<usize> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut labels = std::collections::HashMap::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i as u64 + 2;
            let rec = rec.map_err(|e| CorpusError::Sidecar {
                line,
                message: e.to_string(),
            })?;
            if rec.len() < 2 {
                return Err(CorpusError::Sidecar {
                    line,
                    message: "expected utterance_id,label".into(),
                });
            }
            let label: EmotionLabel =
                rec[1]
                    .parse()
                    .map_err(|e: ParseLabelError| CorpusError::Sidecar {
                        line,
                        message: e.to_string(),
                    })?;
            labels.insert(rec[0].to_string(), label);
        }
        let mut applied = 0;
        for u in self
            .episodes
            .iter_mut()
            .flat_map(|e| e.scenes.iter_mut())
            .flat_map(|s| s.utterances.iter_mut())
        {
            if let Some(l) = labels.remove(&u.id) {
                u.gold = Some(l);
                applied += 1;
            }
        }
        if let Some(unknown) = labels.keys().min() {
            return Err(CorpusError::Integrity(format!(
                "gold label for unknown utterance `{unknown}`"
            )));
        }
        Ok(applied)
    }

    /// Ids of utterances without gold labels, in corpus order.
    pub fn unlabeled(&self) -> Vec<String> {
        self.utterances()
            .filter(|u| u.gold.is_none())
            .map(|u| u.id.clone())
            .collect()
    }
}

/// Loads a transcript file.
pub fn load_transcripts(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let corpus = Corpus::from_json_str(&text)?;
    let c = corpus.counts();
    log::info!(
        "loaded {}: {} episodes, {} scenes, {} utterances",
        path.display(),
        c.episodes,
        c.scenes,
        c.utterances
    );
    Ok(corpus)
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene_json(n: usize) -> String {
        let utts: Vec<String> = (0..n)
            .map(|i| format!(r#"{{"speaker":"S{i}","tokens":["w{i}","."]}}"#))
            .collect();
        format!(
            r#"{{"episodes":[{{"id":"e1","scenes":[{{"id":"c1","utterances":[{}]}}]}}]}}"#,
            utts.join(",")
        )
    }

    #[test]
    fn counts_are_preserved() {
        let c = Corpus::from_json_str(&scene_json(7)).unwrap();
        assert_eq!(
            c.counts(),
            CorpusCounts {
                episodes: 1,
                scenes: 1,
                utterances: 7
            }
        );
        let u = &c.episodes[0].scenes[0].utterances;
        assert_eq!(u[3].index, 3);
        assert_eq!(u[3].id, "e1/c1/3");
        assert_eq!(u[3].tokens, vec!["w3", "."]);
    }

    #[test]
    fn empty_scene_array_is_an_integrity_error() {
        let err = Corpus::from_json_str(r#"{"episodes":[{"id":"e1","scenes":[]}]}"#).unwrap_err();
        assert!(matches!(err, CorpusError::Integrity(_)), "{err}");
    }

    #[test]
    fn empty_tokens_and_empty_scenes_are_rejected() {
        let err = Corpus::from_json_str(
            r#"{"episodes":[{"id":"e1","scenes":[{"id":"c","utterances":[{"speaker":"a","tokens":[]}]}]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::Integrity(_)));
        let err = Corpus::from_json_str(
            r#"{"episodes":[{"id":"e1","scenes":[{"id":"c","utterances":[]}]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::Integrity(_)));
    }

    #[test]
    fn duplicate_utterance_id_is_an_integrity_error() {
        let text = r#"{"episodes":[{"id":"e1","scenes":[{"id":"c","utterances":[
            {"id":"x","speaker":"a","tokens":["hi"]},
            {"id":"x","speaker":"b","tokens":["yo"]}]}]}]}"#;
        let err = Corpus::from_json_str(text).unwrap_err();
        assert!(
            err.to_string().contains("duplicate utterance id `x`"),
            "{err}"
        );
    }

    #[test]
    fn malformed_document_reports_byte_offset() {
        let text = "{\"episodes\":[\n  {\"id\": 5}]}";
        match Corpus::from_json_str(text).unwrap_err() {
            CorpusError::Parse { offset, line, .. } => {
                assert_eq!(line, 2);
                assert!(offset > 13 && offset <= text.len(), "offset {offset}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn gold_sidecar_is_applied_and_unknown_ids_rejected() {
        let mut c = Corpus::from_json_str(&scene_json(2)).unwrap();
        let n = c
            .apply_gold_csv("utterance_id,label\ne1/c1/0,joyful\ne1/c1/1,sad\n")
            .unwrap();
        assert_eq!(n, 2);
        assert_eq!(
            c.episodes[0].scenes[0].utterances[1].gold,
            Some(EmotionLabel::Sad)
        );
        assert!(c.unlabeled().is_empty());

        let err = c
            .apply_gold_csv("utterance_id,label\nnope,sad\n")
            .unwrap_err();
        assert!(matches!(err, CorpusError::Integrity(_)));
        let err = c
            .apply_gold_csv("utterance_id,label\ne1/c1/0,happy\n")
            .unwrap_err();
        assert!(matches!(err, CorpusError::Sidecar { line: 2, .. }));
    }

    #[test]
    fn serialize_and_reload_is_identity() {
        let mut c = Corpus::from_json_str(&scene_json(4)).unwrap();
        c.episodes[0].scenes[0].utterances[2].gold = Some(EmotionLabel::Mad);
        let again = Corpus::from_json_str(&c.to_json_string()).unwrap();
        assert_eq!(c, again);
    }
}
