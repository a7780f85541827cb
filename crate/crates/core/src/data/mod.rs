//! Text data pipeline: corpora, vocabulary, sentence framing, and the
//! synthetic two-style corpus generator.

pub mod corpus;
pub mod synth;
pub mod vocab;

pub use corpus::{encode_corpus, load_corpus, Corpus, Split, StyleLabel, TokenCorpus};
pub use synth::{generate, write_files, NounClass, SynthOutput, SynthSpec};
pub use vocab::{
    decode, encode, SentenceIds, Vocabulary, BOS, BOS_TOKEN, EOS, EOS_TOKEN, FRAME_LEN,
    MAX_CONTENT_TOKENS, PAD, PAD_TOKEN, UNK, UNK_TOKEN,
};
