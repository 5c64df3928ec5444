//! Skip-gram embeddings: vocabulary building, training, persistence and
//! vocabulary alignment across timesteps.

mod align;
mod set;
mod sgns;
mod vocab;

pub use align::{intersect_align, Aligned, SmallContext};
pub use set::{EmbeddingMeta, EmbeddingSet, DEFAULT_DIM};
pub use sgns::{train_sgns, SgnsParams};
pub use vocab::{build_vocab, Vocabulary};

use crate::corpus_synth::Corpus;
use crate::error::Result;

/// Builds the vocabulary and trains in one go.
pub fn embed_corpus(corpus: &Corpus, params: &SgnsParams, seed: u64, corpus_id: &str) -> Result<EmbeddingSet> {
    let vocab = build_vocab(corpus, params.min_count)?;
    let mut e = train_sgns(corpus, &vocab, params, seed)?;
    e.meta.corpus_id = corpus_id.to_string();
    Ok(e)
}
