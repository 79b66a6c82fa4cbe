//! One handle over every trained model kind.

use std::io::{BufRead, Read, Write};

use crate::models::{load_model, save_model, LoadedModel, ModelError, ModelKind};
use crate::numerics::NumericsError;
use crate::prediction::Prediction;
use crate::retrieval::{ground_retrieval, DfTable, RetrievalConfig, RetrievalError};
use crate::snapshot::PageSnapshot;

#[derive(Debug, thiserror::Error)]
pub enum GroundError {
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A ready-to-query model: a DF table for retrieval, or restored parameters.
// Few grounders exist at a time; boxing buys nothing.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
pub enum Grounder {
    Retrieval { df: DfTable, config: RetrievalConfig },
    Neural(LoadedModel),
}

impl Grounder {
    pub fn kind(&self) -> ModelKind {
        match self {
            Grounder::Retrieval { .. } => ModelKind::Retrieval,
            Grounder::Neural(m) => m.kind(),
        }
    }

    pub fn predict(&self, page: &PageSnapshot, command: &str) -> Result<Prediction, GroundError> {
        Ok(match self {
            Grounder::Retrieval { df, config } => ground_retrieval(page, command, df, config)?,
            Grounder::Neural(m) => m.predict(page, command)?,
        })
    }

    /// Writes the DF table or the checkpoint, whichever this model needs.
    pub fn write<W: Write>(&self, out: W, seed: u64) -> Result<(), NumericsError> {
        match self {
            Grounder::Retrieval { df, .. } => Ok(df.write(out)?),
            Grounder::Neural(LoadedModel::Embedding(m, s)) => save_model(out, m, s, seed),
            Grounder::Neural(LoadedModel::Alignment(m, s)) => save_model(out, m, s, seed),
        }
    }

    pub fn read_retrieval<R: BufRead>(input: R, config: RetrievalConfig) -> Result<Self, RetrievalError> {
        Ok(Grounder::Retrieval {
            df: DfTable::read(input)?,
            config,
        })
    }

    pub fn read_checkpoint<R: Read>(input: R) -> Result<Self, ModelError> {
        Ok(Grounder::Neural(load_model(input)?))
    }
}
