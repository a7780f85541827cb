//! Corpus files: one whitespace-tokenized sentence per line, UTF-8, LF.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::vocab::{encode, SentenceIds, Vocabulary, MAX_CONTENT_TOKENS};
use crate::error::{Error, Result};

/// The two style domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleLabel {
    X,
    Y,
}

impl StyleLabel {
    pub fn other(self) -> StyleLabel {
        match self {
            StyleLabel::X => StyleLabel::Y,
            StyleLabel::Y => StyleLabel::X,
        }
    }

    /// 0 for X, 1 for Y; used to index logits and one-hot targets.
    pub fn index(self) -> usize {
        match self {
            StyleLabel::X => 0,
            StyleLabel::Y => 1,
        }
    }

    pub fn parse(s: &str) -> Result<StyleLabel> {
        match s {
            "x" | "X" => Ok(StyleLabel::X),
            "y" | "Y" => Ok(StyleLabel::Y),
            other => Err(Error::contract(format!(
                "unknown style {other:?}, expected x or y"
            ))),
        }
    }
}

impl std::fmt::Display for StyleLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StyleLabel::X => write!(f, "x"),
            StyleLabel::Y => write!(f, "y"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// Tokenized sentences before vocabulary lookup.
#[derive(Debug, Clone)]
pub struct TokenCorpus {
    pub sentences: Vec<Vec<String>>,
    pub style: StyleLabel,
    pub split: Split,
    /// Lines dropped for exceeding [`MAX_CONTENT_TOKENS`].
    pub dropped_overlong: usize,
}

/// Id-encoded sentences.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub sentences: Vec<SentenceIds>,
    pub style: StyleLabel,
    pub split: Split,
}

/// Reads a corpus file, splitting each line on whitespace. Lines with more
/// than [`MAX_CONTENT_TOKENS`] tokens are dropped and counted.
pub fn load_corpus(path: &Path, style: StyleLabel, split: Split) -> Result<TokenCorpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut sentences = Vec::new();
    let mut dropped = 0usize;
    for line in text.lines() {
        let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if tokens.len() > MAX_CONTENT_TOKENS {
            dropped += 1;
        } else {
            sentences.push(tokens);
        }
    }
    Ok(TokenCorpus {
        sentences,
        style,
        split,
        dropped_overlong: dropped,
    })
}

/// Frames every sentence of a token corpus with an existing vocabulary.
pub fn encode_corpus(tokens: &TokenCorpus, vocab: &Vocabulary) -> Result<Corpus> {
    let sentences = tokens
        .sentences
        .iter()
        .map(|s| encode(s, vocab))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        sentences,
        style: tokens.style,
        split: tokens.split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn load_drops_and_counts_overlong_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "a b c").unwrap();
        writeln!(f, "{}", vec!["w"; MAX_CONTENT_TOKENS + 1].join(" ")).unwrap();
        writeln!(f, "d  e\tf ").unwrap();
        drop(f);

        let corpus = load_corpus(&path, StyleLabel::X, Split::Train).unwrap();
        assert_eq!(corpus.sentences.len(), 2);
        assert_eq!(corpus.dropped_overlong, 1);
        assert_eq!(corpus.sentences[1], vec!["d", "e", "f"]);
    }

    #[test]
    fn load_missing_file_is_io_error() {
        let err = load_corpus(Path::new("/nonexistent/x.txt"), StyleLabel::X, Split::Train)
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn style_label_round_trip() {
        assert_eq!(StyleLabel::parse("x").unwrap(), StyleLabel::X);
        assert_eq!(StyleLabel::parse("Y").unwrap(), StyleLabel::Y);
        assert!(StyleLabel::parse("z").is_err());
        assert_eq!(StyleLabel::X.other(), StyleLabel::Y);
        assert_eq!(StyleLabel::Y.other().index(), 0);
    }
}
