use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrexError {
    #[error("malformed SMILES `{smiles}` at byte {pos}: {reason}")]
    MalformedSmiles {
        smiles: String,
        pos: usize,
        reason: String,
    },
    #[error("unsupported arity: {0}")]
    UnsupportedArity(String),
    #[error("incomplete atom mapping: {0}")]
    IncompleteMapping(String),
    #[error("atoms {0} and {1} are not bonded")]
    NotABond(usize, usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("name must not be empty")]
    EmptyName,
    #[error("name resolver unavailable: {0}")]
    ResolverUnavailable(String),
    #[error("description provider error: {0}")]
    ProviderError(String),
    #[error("corrupt cache entry: {0}")]
    CacheCorrupt(String),
    #[error("text encoder failure: {0}")]
    EncoderFailure(String),
    #[error("no description for cache key `{0}`")]
    MissingDescription(String),
    #[error("no gold reactants for `{0}`")]
    MissingGold(String),
    #[error("cannot read {path}: {source}")]
    FileUnreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("test split is empty")]
    EmptySplit,
    #[error("missing upstream checkpoint: {0}")]
    MissingUpstream(String),
    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("generation stuck: {0}")]
    GenerationStuck(String),
    #[error("canonicalizer error: {0}")]
    Canonicalizer(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<TrexError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl TrexError {
    pub(crate) fn smiles(smiles: &str, pos: usize, reason: impl Into<String>) -> Self {
        TrexError::MalformedSmiles {
            smiles: smiles.to_string(),
            pos,
            reason: reason.into(),
        }
    }

    /// Attributes an error to a pipeline stage.
    pub fn in_stage(self, stage: &'static str) -> Self {
        TrexError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The error beneath any stage attribution.
    pub fn root(&self) -> &TrexError {
        match self {
            TrexError::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, TrexError>;
