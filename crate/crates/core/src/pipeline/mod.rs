//! Training, evaluation and attention export.

mod attention;
mod metrics;
mod protocol;
mod train;

pub use attention::{export_attention, AttentionMap};
pub use metrics::{class_scores, coarsen, confusion, macro_f1, ClassScores, Metrics};
pub use protocol::{
    proportional_targets, run_protocol, DevRow, ProtocolConfig, ProtocolReport, TestRow,
};
pub use train::{train, EarlyStopping, EpochRecord, TrainConfig, TrainLog};

use std::path::Path;

use rayon::prelude::*;

use crate::autodiff::{softmax, Checkpoint, CheckpointError, Graph, Tensor, TensorError};
use crate::corpus::{Corpus, CorpusError, DataSplit, EmotionLabel, Partition, Scene};
use crate::embeddings::EmbeddingTable;
use crate::models::{CheckpointMeta, Model, ModelError, SceneContext};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("utterance `{0}` has no gold label")]
    Unlabeled(String),
    #[error("loss diverged at epoch {epoch}, utterance `{utterance}`: {detail}")]
    Divergence {
        epoch: usize,
        utterance: String,
        detail: String,
    },
    #[error("{0}")]
    Argument(String),
    #[error("checkpoint does not match the data: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl From<TensorError> for PipelineError {
    fn from(e: TensorError) -> Self {
        PipelineError::Model(ModelError::Tensor(e))
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// One embedded utterance.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    /// `t × m` input matrix.
    pub x: Tensor,
    pub gold: Option<EmotionLabel>,
}

/// The utterances of one scene in dialogue order.
#[derive(Debug, Clone)]
pub struct SceneData {
    pub id: String,
    pub examples: Vec<Example>,
}

/// Embedded scenes ready for the models.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub scenes: Vec<SceneData>,
}

impl Dataset {
    pub fn from_scenes<'a>(
        scenes: impl IntoIterator<Item = &'a Scene>,
        table: &EmbeddingTable,
        t: usize,
    ) -> Self {
        let scenes = scenes
            .into_iter()
            .map(|s| SceneData {
                id: s.id.clone(),
                examples: s
                    .utterances
                    .iter()
                    .map(|u| Example {
                        id: u.id.clone(),
                        x: table.embed_utterance(&u.tokens, t),
                        gold: u.gold,
                    })
                    .collect(),
            })
            .collect();
        Dataset { scenes }
    }

    /// Scenes of every episode in `partition`, in manifest order.
    pub fn from_partition(
        corpus: &Corpus,
        split: &DataSplit,
        partition: Partition,
        table: &EmbeddingTable,
        t: usize,
    ) -> Result<Self> {
        split.validate(corpus)?;
        Ok(Dataset::from_scenes(
            corpus.scenes_of(split.episodes(partition)),
            table,
            t,
        ))
    }

    pub fn len(&self) -> usize {
        self.scenes.iter().map(|s| s.examples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn examples(&self) -> impl Iterator<Item = &Example> {
        self.scenes.iter().flat_map(|s| s.examples.iter())
    }

    pub fn require_labels(&self) -> Result<()> {
        match self.examples().find(|e| e.gold.is_none()) {
            Some(e) => Err(PipelineError::Unlabeled(e.id.clone())),
            None => Ok(()),
        }
    }
}

/// Model output for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub gold: Option<EmotionLabel>,
    pub predicted: EmotionLabel,
    pub probabilities: Vec<f64>,
}

fn check_model(model: &Model, data: &Dataset) -> Result<()> {
    let cfg = model.config();
    if cfg.classes != EmotionLabel::COUNT {
        return Err(PipelineError::Mismatch(format!(
            "model predicts {} classes, labels have {}",
            cfg.classes,
            EmotionLabel::COUNT
        )));
    }
    if let Some(e) = data.examples().next() {
        if e.x.shape() != [cfg.max_tokens, cfg.embedding_dim] {
            return Err(PipelineError::Mismatch(format!(
                "inputs are {:?} but the model expects [{}, {}]",
                e.x.shape(),
                cfg.max_tokens,
                cfg.embedding_dim
            )));
        }
    }
    Ok(())
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn predict_scene(model: &Model, scene: &SceneData) -> Result<Vec<Prediction>> {
    let mut ctx = SceneContext::new(model.config().window);
    let mut out = Vec::with_capacity(scene.examples.len());
    for ex in &scene.examples {
        let mut g = Graph::new();
        let f = model.forward(&mut g, &ex.x, ctx.history())?;
        let probabilities = softmax(g.value(f.logits).data());
        let predicted = EmotionLabel::from_index(argmax(&probabilities)).expect("7 classes");
        out.push(Prediction {
            id: ex.id.clone(),
            gold: ex.gold,
            predicted,
            probabilities,
        });
        ctx.push(g.value(f.h).clone());
    }
    Ok(out)
}

/// Predictions grouped by scene; scenes run in parallel, each in dialogue
/// order.
pub fn predict(model: &Model, data: &Dataset) -> Result<Vec<Vec<Prediction>>> {
    check_model(model, data)?;
    data.scenes
        .par_iter()
        .map(|s| predict_scene(model, s))
        .collect()
}

/// 7×7 gold-by-predicted counts.
pub fn prediction_confusion(model: &Model, data: &Dataset) -> Result<[[usize; 7]; 7]> {
    data.require_labels()?;
    let per_scene = predict(model, data)?;
    Ok(confusion(
        per_scene
            .iter()
            .flatten()
            .map(|p| (p.gold.expect("labelled"), p.predicted)),
    ))
}

pub fn evaluate(model: &Model, data: &Dataset) -> Result<Metrics> {
    Ok(Metrics::from_confusion(prediction_confusion(model, data)?))
}

/// Hex form of [`EmbeddingTable::fingerprint`] as stored in checkpoints.
pub fn embedding_fingerprint(table: &EmbeddingTable) -> String {
    format!("{:016x}", table.fingerprint())
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    table: &EmbeddingTable,
    provenance: serde_json::Value,
) -> Result<()> {
    let ck = model.to_checkpoint(Some(embedding_fingerprint(table)), provenance)?;
    std::fs::write(path, ck.to_bytes()).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(Model::from_checkpoint(&Checkpoint::from_bytes(&bytes)?)?)
}

/// Rejects an embedding table other than the one the checkpoint was
/// trained with.
pub fn check_embeddings(meta: &CheckpointMeta, table: &EmbeddingTable) -> Result<()> {
    if table.dim() != meta.model.embedding_dim {
        return Err(PipelineError::Mismatch(format!(
            "embedding width {} but the model expects {}",
            table.dim(),
            meta.model.embedding_dim
        )));
    }
    if let Some(fp) = &meta.embedding_fingerprint {
        let actual = embedding_fingerprint(table);
        if *fp != actual {
            return Err(PipelineError::Mismatch(format!(
                "embedding fingerprint {actual} differs from the trained {fp}"
            )));
        }
    }
    Ok(())
}
