use std::path::PathBuf;

use emoseq::agreement::AgreementError;
use emoseq::autodiff::TensorError;
use emoseq::corpus::CorpusError;
use emoseq::embeddings::EmbeddingError;
use emoseq::models::ModelError;
use emoseq::pipeline::PipelineError;

/// Process exit codes.
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERIC,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { path, source } => CliError::Io { path, source },
            CorpusError::Argument(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<AgreementError> for CliError {
    fn from(e: AgreementError) -> Self {
        match e {
            AgreementError::Argument(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        match e {
            EmbeddingError::Io { path, source } => CliError::Io { path, source },
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(m) => CliError::Usage(format!("invalid model configuration: {m}")),
            ModelError::Tensor(TensorError::NonFinite { op }) => {
                CliError::Numerical(format!("non-finite value produced by {op}"))
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Divergence { .. } => CliError::Numerical(e.to_string()),
            PipelineError::Argument(m) => CliError::Usage(m),
            PipelineError::Model(m) => m.into(),
            PipelineError::Corpus(c) => c.into(),
            PipelineError::Io { path, source } => CliError::Io {
                path: path.into(),
                source,
            },
            other => CliError::Data(other.to_string()),
        }
    }
}
