use thiserror::Error;

use crate::ceat::CeatError;
use crate::corpus::CorpusError;
use crate::debias::DebiasError;
use crate::embed::EmbedError;
use crate::lexicon::LexiconError;
use crate::pipeline::PipelineError;

/// Coarse failure classes, used by the command line tool to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Malformed input or a violated invariant.
    Validation,
    /// Missing or unreadable data.
    Data,
    /// Degenerate or non-finite numerics.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Ceat(#[from] CeatError),
    #[error(transparent)]
    Debias(#[from] DebiasError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Lexicon(e) => e.category(),
            Error::Corpus(e) => e.category(),
            Error::Embed(e) => e.category(),
            Error::Ceat(e) => e.category(),
            Error::Debias(e) => e.category(),
            Error::Pipeline(e) => e.category(),
        }
    }
}
