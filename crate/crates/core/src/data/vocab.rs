//! Vocabulary construction and fixed-length sentence framing.
//!
//! Four ids are reserved: `<PAD>`=0, `<BOS>`=1, `<EOS>`=2, `<UNK>`=3.
//! Content words get ids from 4 upward ordered by descending training
//! frequency, ties broken lexicographically, which makes vocabulary
//! construction deterministic for a given corpus. A framed sentence always
//! occupies [`FRAME_LEN`] slots: BOS, up to [`MAX_CONTENT_TOKENS`] content
//! ids, EOS, then PAD.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

pub const PAD_TOKEN: &str = "<PAD>";
pub const BOS_TOKEN: &str = "<BOS>";
pub const EOS_TOKEN: &str = "<EOS>";
pub const UNK_TOKEN: &str = "<UNK>";

/// Maximum number of content tokens per sentence.
pub const MAX_CONTENT_TOKENS: usize = 15;

/// Fixed frame length: BOS + content + EOS, padded to this size.
pub const FRAME_LEN: usize = MAX_CONTENT_TOKENS + 2;

/// Token frequency threshold: a token enters the vocabulary only if its
/// training frequency strictly exceeds this value.
pub const DEFAULT_MIN_COUNT: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from training sentences. Tokens with frequency
    /// `<= min_count` are excluded and will encode as `<UNK>`.
    pub fn build<'a, I>(sentences: I, min_count: usize) -> Vocabulary
    where
        I: IntoIterator<Item = &'a Vec<String>>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for sentence in sentences {
            for token in sentence {
                *counts.entry(token.as_str()).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(tok, count)| *count > min_count && !is_reserved_token(tok))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut tokens: Vec<String> = [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN]
            .iter()
            .map(|s| s.to_string())
            .collect();
        tokens.extend(kept.into_iter().map(|(tok, _)| tok.to_string()));
        Vocabulary::from_tokens(tokens).expect("construction satisfies the reserved prefix")
    }

    /// Rebuilds a vocabulary from an id-ordered token list (checkpoints).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocabulary> {
        let reserved = [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN];
        if tokens.len() < reserved.len()
            || tokens[..reserved.len()]
                .iter()
                .zip(reserved)
                .any(|(a, b)| a != b)
        {
            return Err(Error::contract(
                "vocabulary must start with <PAD>, <BOS>, <EOS>, <UNK>",
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::contract(format!("duplicate vocabulary token {tok}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id for a token, falling back to `<UNK>`.
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or_else(|| {
                Error::contract(format!(
                    "token id {id} out of range for vocabulary of {}",
                    self.tokens.len()
                ))
            })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

fn is_reserved_token(tok: &str) -> bool {
    matches!(tok, PAD_TOKEN | BOS_TOKEN | EOS_TOKEN | UNK_TOKEN)
}

/// A framed sentence: `<BOS> w1 .. wn <EOS> <PAD>*` in exactly
/// [`FRAME_LEN`] slots. `true_length` counts BOS + content + EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceIds {
    pub(crate) ids: Vec<u32>,
    pub(crate) true_length: usize,
}

impl SentenceIds {
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn true_length(&self) -> usize {
        self.true_length
    }

    pub fn content_len(&self) -> usize {
        self.true_length - 2
    }

    /// Content ids between BOS and EOS.
    pub fn content(&self) -> &[u32] {
        &self.ids[1..self.true_length - 1]
    }
}

/// Frames a tokenized sentence. Unknown tokens map to `<UNK>`; more than
/// [`MAX_CONTENT_TOKENS`] tokens is a contract error.
pub fn encode(tokens: &[String], vocab: &Vocabulary) -> Result<SentenceIds> {
    if tokens.len() > MAX_CONTENT_TOKENS {
        return Err(Error::contract(format!(
            "sentence has {} tokens, limit is {MAX_CONTENT_TOKENS}",
            tokens.len()
        )));
    }
    let mut ids = Vec::with_capacity(FRAME_LEN);
    ids.push(BOS);
    ids.extend(tokens.iter().map(|t| vocab.id(t)));
    ids.push(EOS);
    let true_length = ids.len();
    ids.resize(FRAME_LEN, PAD);
    Ok(SentenceIds { ids, true_length })
}

/// Inverse of [`encode`] modulo `<UNK>`: strips BOS, EOS, and padding.
/// Returns the content tokens and a count of PAD ids found *inside* the
/// content region (between BOS and EOS), which callers may report.
pub fn decode(ids: &[u32], vocab: &Vocabulary) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut pad_inside = 0usize;
    for (i, &id) in ids.iter().enumerate() {
        if i == 0 && id == BOS {
            continue;
        }
        match id {
            EOS => break,
            PAD => pad_inside += 1,
            BOS => {}
            other => tokens.push(vocab.token(other)?.to_string()),
        }
    }
    // PAD after EOS is ordinary padding; only PAD before EOS was counted.
    Ok((tokens, pad_inside))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    fn small_vocab() -> Vocabulary {
        // "the" x7, "cat" x7, "sat" x6, "mat" x6, "rare" x5 (dropped).
        let mut sentences = Vec::new();
        for _ in 0..6 {
            sentences.push(s(&["the", "cat", "sat", "mat"]));
        }
        sentences.push(s(&["the", "cat"]));
        for _ in 0..5 {
            sentences.push(s(&["rare"]));
        }
        Vocabulary::build(&sentences, DEFAULT_MIN_COUNT)
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = small_vocab();
        assert_eq!(v.id(PAD_TOKEN), PAD);
        assert_eq!(v.id(BOS_TOKEN), BOS);
        assert_eq!(v.id(EOS_TOKEN), EOS);
        assert_eq!(v.id(UNK_TOKEN), UNK);
        assert_eq!(v.token(0).unwrap(), PAD_TOKEN);
        assert_eq!(v.token(3).unwrap(), UNK_TOKEN);
    }

    #[test]
    fn frequency_threshold_is_strict() {
        let v = small_vocab();
        // freq 5 == min_count -> excluded; freq 6 -> kept.
        assert!(!v.contains("rare"));
        assert!(v.contains("sat"));
        assert_eq!(v.id("rare"), UNK);
    }

    #[test]
    fn ids_ordered_by_frequency_then_token() {
        let v = small_vocab();
        // cat=7, the=7 (tie: lexicographic), then mat=6, sat=6.
        assert_eq!(v.token(4).unwrap(), "cat");
        assert_eq!(v.token(5).unwrap(), "the");
        assert_eq!(v.token(6).unwrap(), "mat");
        assert_eq!(v.token(7).unwrap(), "sat");
        assert_eq!(v.len(), 8);
    }

    #[test]
    fn build_is_deterministic() {
        let a = small_vocab();
        let b = small_vocab();
        assert_eq!(a, b);
    }

    #[test]
    fn encode_frames_sentence() {
        let v = small_vocab();
        let enc = encode(&s(&["the", "cat", "zzz"]), &v).unwrap();
        assert_eq!(enc.ids().len(), FRAME_LEN);
        assert_eq!(enc.true_length(), 5);
        assert_eq!(enc.ids()[0], BOS);
        assert_eq!(enc.ids()[enc.true_length() - 1], EOS);
        assert_eq!(enc.ids()[2], v.id("cat"));
        assert_eq!(enc.ids()[3], UNK);
        assert!(enc.ids()[enc.true_length()..].iter().all(|&i| i == PAD));
        assert_eq!(enc.content_len(), 3);
    }

    #[test]
    fn encode_rejects_overlong() {
        let v = small_vocab();
        let long = vec!["the".to_string(); MAX_CONTENT_TOKENS + 1];
        assert!(encode(&long, &v).is_err());
    }

    #[test]
    fn decode_strips_framing_and_flags_inner_pad() {
        let v = small_vocab();
        let enc = encode(&s(&["the", "cat"]), &v).unwrap();
        let (tokens, pad_inside) = decode(enc.ids(), &v).unwrap();
        assert_eq!(tokens, s(&["the", "cat"]));
        assert_eq!(pad_inside, 0);

        let weird = vec![BOS, v.id("the"), PAD, v.id("cat"), EOS, PAD];
        let (tokens, pad_inside) = decode(&weird, &v).unwrap();
        assert_eq!(tokens, s(&["the", "cat"]));
        assert_eq!(pad_inside, 1);
    }

    #[test]
    fn decode_rejects_out_of_range_id() {
        let v = small_vocab();
        assert!(decode(&[BOS, 999, EOS], &v).is_err());
    }

    #[test]
    fn from_tokens_requires_reserved_prefix() {
        assert!(Vocabulary::from_tokens(vec!["a".into(), "b".into()]).is_err());
        let good = vec![
            PAD_TOKEN.to_string(),
            BOS_TOKEN.to_string(),
            EOS_TOKEN.to_string(),
            UNK_TOKEN.to_string(),
            "word".to_string(),
        ];
        assert!(Vocabulary::from_tokens(good).is_ok());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(
            words in proptest::collection::vec(
                prop_oneof!["cat", "the", "sat", "mat"].prop_map(String::from),
                0..=MAX_CONTENT_TOKENS,
            )
        ) {
            let v = small_vocab();
            let enc = encode(&words, &v).unwrap();
            prop_assert_eq!(enc.ids().len(), FRAME_LEN);
            prop_assert_eq!(enc.true_length() - 2, words.len());
            prop_assert_eq!(enc.ids()[0], BOS);
            prop_assert_eq!(enc.ids()[enc.true_length() - 1], EOS);
            let (back, pad_inside) = decode(enc.ids(), &v).unwrap();
            prop_assert_eq!(back, words);
            prop_assert_eq!(pad_inside, 0);
        }
    }
}
