//! Noun tagging and pretrained word embeddings.
//!
//! The tagger is lexicon-first: a token is a noun when the lexicon says so,
//! otherwise optional suffix rules (applied in order, first match wins)
//! decide, otherwise it is not a noun. Reserved sentinel tokens are never
//! nouns. On synthetic corpora the lexicon is exhaustive by construction,
//! so tagging agrees exactly with the generator's annotations; for real
//! corpora a per-sentence annotation file can override the lexicon.
//!
//! Embeddings use the GloVe text format: one `token v1 .. v100` line per
//! word. Absent tokens are reported, never silently zeroed, because zero
//! vectors have no direction and break cosine similarity.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::data::{BOS_TOKEN, EOS_TOKEN, PAD_TOKEN, UNK_TOKEN};
use crate::error::{Error, Result};

/// Dimension every embedding vector must have.
pub const EMBEDDING_DIM: usize = 100;

const RESERVED: [&str; 4] = [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN];

/// Noun lexicon plus optional suffix fallback rules.
#[derive(Debug, Clone, Default)]
pub struct TagLexicon {
    nouns: HashSet<String>,
    /// (suffix, is_noun) pairs tried in order for tokens not in the lexicon.
    suffix_rules: Vec<(String, bool)>,
}

impl TagLexicon {
    pub fn from_nouns<I, S>(nouns: I) -> TagLexicon
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        TagLexicon {
            nouns: nouns.into_iter().map(Into::into).collect(),
            suffix_rules: Vec::new(),
        }
    }

    /// Loads a lexicon file of `token<TAB>NOUN` lines. Only nouns are
    /// listed; any other tag is rejected.
    pub fn load(path: &Path) -> Result<TagLexicon> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut nouns = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (token, tag) = match (parts.next(), parts.next(), parts.next()) {
                (Some(token), Some(tag), None) => (token, tag),
                _ => {
                    return Err(Error::format(
                        path,
                        i + 1,
                        format!("expected token<TAB>NOUN, found {line:?}"),
                    ))
                }
            };
            if tag != "NOUN" {
                return Err(Error::format(
                    path,
                    i + 1,
                    format!("unsupported tag {tag:?}; only NOUN entries are allowed"),
                ));
            }
            nouns.insert(token.to_string());
        }
        Ok(TagLexicon {
            nouns,
            suffix_rules: Vec::new(),
        })
    }

    pub fn with_suffix_rule(mut self, suffix: impl Into<String>, is_noun: bool) -> TagLexicon {
        self.suffix_rules.push((suffix.into(), is_noun));
        self
    }

    pub fn is_noun(&self, token: &str) -> bool {
        if RESERVED.contains(&token) {
            return false;
        }
        if self.nouns.contains(token) {
            return true;
        }
        for (suffix, is_noun) in &self.suffix_rules {
            if token.ends_with(suffix.as_str()) {
                return *is_noun;
            }
        }
        false
    }

    pub fn len(&self) -> usize {
        self.nouns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nouns.is_empty()
    }
}

/// Nouns of one sentence in positional order, duplicates kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NounSet {
    pub tokens: Vec<String>,
    /// Position of each noun within the sentence.
    pub indices: Vec<usize>,
}

impl NounSet {
    pub fn count(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Classifies every sentence token with the lexicon; pure and order-preserving.
pub fn tag_nouns<S: AsRef<str>>(sentence: &[S], lex: &TagLexicon) -> NounSet {
    let mut tokens = Vec::new();
    let mut indices = Vec::new();
    for (i, token) in sentence.iter().enumerate() {
        if lex.is_noun(token.as_ref()) {
            tokens.push(token.as_ref().to_string());
            indices.push(i);
        }
    }
    NounSet { tokens, indices }
}

/// Builds a noun set from an explicit annotation (noun tokens in order),
/// locating each annotated token left-to-right in the sentence.
pub fn noun_set_from_annotation<S: AsRef<str>>(sentence: &[S], nouns: &[String]) -> Result<NounSet> {
    let mut indices = Vec::with_capacity(nouns.len());
    let mut cursor = 0usize;
    for noun in nouns {
        let found = sentence[cursor.min(sentence.len())..]
            .iter()
            .position(|t| t.as_ref() == noun.as_str())
            .map(|p| p + cursor);
        match found {
            Some(i) => {
                indices.push(i);
                cursor = i + 1;
            }
            None => {
                return Err(Error::contract(format!(
                    "annotated noun {noun:?} not found in sentence (in order)"
                )))
            }
        }
    }
    Ok(NounSet {
        tokens: nouns.to_vec(),
        indices,
    })
}

/// Parses a `sentence-index<TAB>space-separated nouns` annotation file.
pub fn load_annotations(path: &Path) -> Result<BTreeMap<usize, Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (index, rest) = line.split_once('\t').ok_or_else(|| {
            Error::format(path, i + 1, "expected sentence-index<TAB>nouns".to_string())
        })?;
        let index: usize = index
            .parse()
            .map_err(|_| Error::format(path, i + 1, format!("bad sentence index {index:?}")))?;
        let nouns: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
        if map.insert(index, nouns).is_some() {
            return Err(Error::format(
                path,
                i + 1,
                format!("duplicate annotation for sentence {index}"),
            ));
        }
    }
    Ok(map)
}

/// Token-to-vector store with a fixed dimension.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    /// Tokens that appeared more than once while loading (last line won).
    pub duplicate_tokens: Vec<String>,
}

impl EmbeddingTable {
    pub fn from_entries<I, S>(dim: usize, entries: I) -> Result<EmbeddingTable>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut vectors = HashMap::new();
        for (token, v) in entries {
            if v.len() != dim {
                return Err(Error::contract(format!(
                    "embedding has {} dims, expected {dim}",
                    v.len()
                )));
            }
            vectors.insert(token.into(), v);
        }
        Ok(EmbeddingTable {
            dim,
            vectors,
            duplicate_tokens: Vec::new(),
        })
    }

    /// Loads a GloVe-format text file; every line must carry exactly
    /// 100 floats. Duplicate tokens are recorded and the last line wins.
    pub fn load(path: &Path) -> Result<EmbeddingTable> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut vectors: HashMap<String, Vec<f64>> = HashMap::new();
        let mut duplicate_tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().expect("non-empty line has a first field");
            let values: Vec<f64> = parts
                .map(|p| {
                    p.parse::<f64>().map_err(|_| {
                        Error::format(path, i + 1, format!("bad float {p:?}"))
                    })
                })
                .collect::<Result<_>>()?;
            if values.len() != EMBEDDING_DIM {
                return Err(Error::format(
                    path,
                    i + 1,
                    format!(
                        "expected {EMBEDDING_DIM} dims at line {}, found {}",
                        i + 1,
                        values.len()
                    ),
                ));
            }
            if vectors.insert(token.to_string(), values).is_some() {
                duplicate_tokens.push(token.to_string());
            }
        }
        Ok(EmbeddingTable {
            dim: EMBEDDING_DIM,
            vectors,
            duplicate_tokens,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Cosine similarity a.b / (|a||b|); zero vectors are rejected because
/// they carry no direction.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            op: "cosine",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::contract("cosine of a zero vector is undefined"));
    }
    Ok(dot / (na * nb))
}

/// Noun vectors looked up from a table; absent nouns are dropped and their
/// positions reported.
#[derive(Debug, Clone)]
pub struct EmbeddedNouns {
    pub vectors: Vec<Vec<f64>>,
    /// Sentence positions of the kept nouns.
    pub kept_indices: Vec<usize>,
    /// Sentence positions of nouns missing from the table.
    pub dropped_indices: Vec<usize>,
}

pub fn embed_nouns(nouns: &NounSet, table: &EmbeddingTable) -> EmbeddedNouns {
    let mut vectors = Vec::new();
    let mut kept_indices = Vec::new();
    let mut dropped_indices = Vec::new();
    for (token, &index) in nouns.tokens.iter().zip(&nouns.indices) {
        match table.get(token) {
            Some(v) => {
                vectors.push(v.to_vec());
                kept_indices.push(index);
            }
            None => dropped_indices.push(index),
        }
    }
    EmbeddedNouns {
        vectors,
        kept_indices,
        dropped_indices,
    }
}

/// Arithmetic mean of the vectors; `None` when the list is empty.
pub fn centroid(vectors: &[Vec<f64>]) -> Option<Vec<f64>> {
    let first = vectors.first()?;
    let mut mean = vec![0.0; first.len()];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let n = vectors.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    Some(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SynthSpec};

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn tags_single_noun() {
        let lex = TagLexicon::from_nouns(["food"]);
        let set = tag_nouns(&toks("the food is great"), &lex);
        assert_eq!(set.tokens, vec!["food"]);
        assert_eq!(set.indices, vec![1]);
        assert_eq!(set.count(), 1);
    }

    #[test]
    fn tags_nouns_in_order_keeping_duplicates() {
        let lex = TagLexicon::from_nouns(["food", "service"]);
        let set = tag_nouns(&toks("the food and the service and the food"), &lex);
        assert_eq!(set.tokens, vec!["food", "service", "food"]);
        assert_eq!(set.indices, vec![1, 4, 7]);
    }

    #[test]
    fn no_nouns_gives_empty_set() {
        let lex = TagLexicon::from_nouns(["food"]);
        assert!(tag_nouns(&toks("it was great"), &lex).is_empty());
    }

    #[test]
    fn reserved_tokens_are_never_nouns() {
        let lex = TagLexicon::from_nouns(["<UNK>", "<PAD>", "food"]);
        let set = tag_nouns(&toks("<PAD> <UNK> food"), &lex);
        assert_eq!(set.tokens, vec!["food"]);
    }

    #[test]
    fn lexicon_beats_suffix_rules_which_beat_default() {
        let lex = TagLexicon::from_nouns(["runner"])
            .with_suffix_rule("ner", false)
            .with_suffix_rule("tion", true);
        assert!(lex.is_noun("runner"), "lexicon entry wins");
        assert!(!lex.is_noun("dinner"), "suffix rule can deny");
        assert!(lex.is_noun("station"), "suffix rule can affirm");
        assert!(!lex.is_noun("table"), "unknown tokens default to non-noun");
    }

    #[test]
    fn lexicon_file_round_trip_and_bad_tag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lexicon.tsv");
        std::fs::write(&path, "food\tNOUN\nservice\tNOUN\n").unwrap();
        let lex = TagLexicon::load(&path).unwrap();
        assert_eq!(lex.len(), 2);
        assert!(lex.is_noun("service"));

        std::fs::write(&path, "food\tNOUN\ngreat\tADJ\n").unwrap();
        let err = TagLexicon::load(&path).unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("ADJ"), "{err}");
    }

    fn embedding_line(token: &str, fill: f64) -> String {
        let vals: Vec<String> = (0..EMBEDDING_DIM).map(|_| fill.to_string()).collect();
        format!("{token} {}", vals.join(" "))
    }

    #[test]
    fn embedding_loader_counts_and_rejects_wrong_dim() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embeddings.txt");
        std::fs::write(
            &path,
            format!("{}\n{}\n", embedding_line("food", 0.5), embedding_line("service", 1.0)),
        )
        .unwrap();
        let table = EmbeddingTable::load(&path).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table.dim(), EMBEDDING_DIM);
        assert_eq!(table.get("food").unwrap()[0], 0.5);
        assert!(table.get("absent").is_none());

        let short: Vec<String> = (0..EMBEDDING_DIM - 1).map(|_| "0.1".to_string()).collect();
        std::fs::write(
            &path,
            format!("{}\nbad {}\n", embedding_line("food", 0.5), short.join(" ")),
        )
        .unwrap();
        let err = EmbeddingTable::load(&path).unwrap_err().to_string();
        assert!(err.contains("expected 100 dims at line 2"), "{err}");
    }

    #[test]
    fn duplicate_embedding_token_last_wins_and_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embeddings.txt");
        std::fs::write(
            &path,
            format!("{}\n{}\n", embedding_line("food", 0.5), embedding_line("food", 2.0)),
        )
        .unwrap();
        let table = EmbeddingTable::load(&path).unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(table.get("food").unwrap()[0], 2.0);
        assert_eq!(table.duplicate_tokens, vec!["food"]);
    }

    #[test]
    fn cosine_identities() {
        let v = vec![1.0, 2.0, 3.0];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine(&v, &neg).unwrap() + 1.0).abs() < 1e-12);
        let e1 = vec![1.0, 0.0];
        let e2 = vec![0.0, 1.0];
        assert!(cosine(&e1, &e2).unwrap().abs() < 1e-12);
    }

    #[test]
    fn cosine_is_scale_invariant_and_rejects_zero() {
        let a = vec![0.3, -1.2, 0.7];
        let b = vec![1.5, 0.4, -0.2];
        let scaled: Vec<f64> = a.iter().map(|x| 7.5 * x).collect();
        let plain = cosine(&a, &b).unwrap();
        assert!((cosine(&scaled, &b).unwrap() - plain).abs() < 1e-12);
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn embed_nouns_drops_absent_and_centroid_is_mean() {
        let table = EmbeddingTable::from_entries(
            3,
            [
                ("food", vec![1.0, 0.0, 0.0]),
                ("service", vec![0.0, 2.0, 0.0]),
            ],
        )
        .unwrap();
        let nouns = NounSet {
            tokens: vec!["food".into(), "ghost".into(), "service".into()],
            indices: vec![1, 3, 5],
        };
        let embedded = embed_nouns(&nouns, &table);
        assert_eq!(embedded.vectors.len(), 2);
        assert_eq!(embedded.kept_indices, vec![1, 5]);
        assert_eq!(embedded.dropped_indices, vec![3]);
        let c = centroid(&embedded.vectors).unwrap();
        assert_eq!(c, vec![0.5, 1.0, 0.0]);
        assert!(centroid(&[]).is_none());
    }

    #[test]
    fn tagger_matches_generator_annotations_exactly() {
        let mut spec = SynthSpec::default_spec();
        spec.sentences_per_style = 60;
        let out = generate(&spec).unwrap();
        let lex = TagLexicon::from_nouns(out.lexicon.iter().cloned());
        for corpus in &out.corpora {
            for (sentence, truth) in corpus.sentences.iter().zip(&corpus.nouns) {
                let tagged = tag_nouns(sentence, &lex);
                assert_eq!(&tagged.tokens, truth, "sentence {sentence:?}");
            }
        }
    }

    #[test]
    fn annotation_file_round_trip_and_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("annotations.tsv");
        std::fs::write(&path, "0\tfood service\n2\t\n").unwrap();
        let map = load_annotations(&path).unwrap();
        assert_eq!(map[&0], vec!["food", "service"]);
        assert!(map[&2].is_empty());

        let sentence = toks("the food and the service");
        let set = noun_set_from_annotation(&sentence, &map[&0]).unwrap();
        assert_eq!(set.indices, vec![1, 4]);
        assert!(noun_set_from_annotation(&sentence, &[
            "ghost".to_string()
        ])
        .is_err());

        std::fs::write(&path, "0\tfood\n0\tservice\n").unwrap();
        assert!(load_annotations(&path).is_err());
    }
}
