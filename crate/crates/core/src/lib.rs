//! Emotion detection on multiparty dialogue: crowd-label aggregation,
//! inter-annotator agreement, and sequence-based CNN classifiers trained
//! with a small reverse-mode autodiff engine.

pub mod agreement;
pub mod autodiff;
pub mod corpus;
pub mod embeddings;
pub mod models;
pub mod pipeline;
pub mod synth;

pub use agreement::{AgreementReport, AnnotationItem, FoldClass, GoldAssignment};
pub use autodiff::{Checkpoint, Tensor};
pub use corpus::{CoarseLabel, Corpus, DataSplit, EmotionLabel, Partition};
pub use embeddings::{EmbeddingTable, OovPolicy};
pub use models::{Architecture, Model, ModelConfig};
pub use pipeline::{Dataset, Metrics, ProtocolConfig, ProtocolReport, TrainConfig, TrainLog};
pub use synth::SynthConfig;
