//! Precomputed per-sentence training inputs.
//!
//! Noun tagging, noun embedding, and centroid computation happen once per
//! corpus instead of once per epoch; the results are immutable during
//! training.

use crate::data::{encode, SentenceIds, TokenCorpus, Vocabulary};
use crate::error::Result;
use crate::lexical::{centroid, embed_nouns, tag_nouns, EmbeddingTable, TagLexicon, EMBEDDING_DIM};

/// One training sentence with everything the losses need.
#[derive(Debug, Clone)]
pub struct PreparedSentence {
    pub ids: SentenceIds,
    /// Embedding vectors of the sentence's nouns that are present in the
    /// table, in sentence order.
    pub noun_vectors: Vec<Vec<f64>>,
    /// Mean of `noun_vectors`; `None` when the sentence has no embeddable
    /// nouns.
    pub centroid: Option<Vec<f64>>,
}

pub fn prepare_corpus(
    corpus: &TokenCorpus,
    vocab: &Vocabulary,
    lexicon: &TagLexicon,
    table: &EmbeddingTable,
) -> Result<Vec<PreparedSentence>> {
    corpus
        .sentences
        .iter()
        .map(|tokens| {
            let ids = encode(tokens, vocab)?;
            let nouns = tag_nouns(tokens, lexicon);
            let embedded = embed_nouns(&nouns, table);
            let centroid = centroid(&embedded.vectors);
            Ok(PreparedSentence {
                ids,
                noun_vectors: embedded.vectors,
                centroid,
            })
        })
        .collect()
}

/// Pretrained embedding rows aligned with the model vocabulary, for the
/// differentiable noun-preservation path. Row `v` holds the embedding of
/// vocabulary token `v` when that token is a lexicon noun present in the
/// table, and zeros otherwise; `is_noun[v]` marks exactly those rows.
#[derive(Debug, Clone)]
pub struct GloveVocab {
    /// Flattened [vocab, EMBEDDING_DIM] matrix.
    pub matrix: Vec<f64>,
    pub is_noun: Vec<bool>,
}

impl GloveVocab {
    pub fn rows(&self) -> usize {
        self.is_noun.len()
    }
}

pub fn build_glove_vocab(
    vocab: &Vocabulary,
    lexicon: &TagLexicon,
    table: &EmbeddingTable,
) -> GloveVocab {
    let v = vocab.len();
    let mut matrix = vec![0.0; v * EMBEDDING_DIM];
    let mut is_noun = vec![false; v];
    for (i, token) in vocab.tokens().iter().enumerate() {
        if lexicon.is_noun(token) {
            if let Some(e) = table.get(token) {
                matrix[i * EMBEDDING_DIM..(i + 1) * EMBEDDING_DIM].copy_from_slice(e);
                is_noun[i] = true;
            }
        }
    }
    GloveVocab { matrix, is_noun }
}
