//! Stereotype-content bias measurement and removal for contextual encoders.
//!
//! The crate is organised as a pipeline:
//!
//! * [`lexicon`]: target (identity) and attribute (warmth / competence) term sets,
//!   frequency-based attribute selection and disjointness audits.
//! * [`corpus`]: stimulus-keyed sentence pools extracted from comment dumps.
//! * [`embed`]: the encoder backend contract, stimulus pooling, attribute
//!   directions and a small differentiable toy encoder.
//! * [`ceat`]: WEAT effect sizes, permutation p-values and the random-effects
//!   combination of sampled effect sizes.
//! * [`debias`]: the projection / regularisation objective and its training loop.
//! * [`pipeline`]: measurement runs, before/after reports, projection plots and
//!   run manifests.
//! * [`planted`]: a synthetic corpus with a known bias, for end-to-end checks.
//! * [`seed`]: named random substreams and config hashing.

pub mod ceat;
pub mod corpus;
pub mod debias;
pub mod embed;
mod error;
pub mod lexicon;
pub mod pipeline;
pub mod planted;
pub mod seed;

pub use error::{Error, ErrorCategory};
