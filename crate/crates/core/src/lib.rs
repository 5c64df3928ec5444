//! Modelling temporal drift in word embeddings.
//!
//! The pipeline generates drifting corpora ([`corpus_synth`], [`data_ingest`]),
//! trains per-timestep skip-gram embeddings ([`embed`]), learns predictors that
//! map one timestep's embedding matrix to the next ([`drift_model`]) and scores
//! the predictions directly and on a downstream classifier ([`eval`],
//! [`downstream`]).

pub mod corpus_synth;
pub mod data_ingest;
pub mod downstream;
pub mod drift_model;
pub mod embed;
pub mod error;
pub mod eval;
pub mod fsio;
pub mod numeric;
pub mod seed;

pub use error::{Error, Result};
