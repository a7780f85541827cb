//! Deterministic synthetic two-style corpus generator.
//!
//! A spec lists noun classes (each a set of synonyms), two disjoint
//! style-word sets, and sentence templates with `{noun}` and `{style}`
//! slots. Every generated sentence instantiates one template, so it
//! contains at least one lexicon noun and exactly one style word. The
//! generator also emits the noun lexicon and a 100-dimensional embedding
//! file in which synonyms within a class have pairwise cosine >= 0.8 while
//! nouns from different classes have cosine <= 0.2 (classes occupy
//! disjoint coordinate blocks: a shared centroid axis plus one small
//! perturbation axis per synonym).
//!
//! Output is a pure function of the spec, including its seed: rerunning
//! yields byte-identical files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::corpus::{Split, StyleLabel};
use crate::data::vocab::MAX_CONTENT_TOKENS;
use crate::error::{Error, Result};
use crate::tensor::Rng;

/// Dimension of generated embedding vectors.
pub const EMBEDDING_DIM: usize = 100;

/// Perturbation magnitude: within-class cosine is 1/(1+eps^2) ~= 0.917.
const PERTURBATION: f64 = 0.3;

const NOUN_SLOT: &str = "{noun}";
const STYLE_SLOT: &str = "{style}";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NounClass {
    pub name: String,
    pub synonyms: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub noun_classes: Vec<NounClass>,
    pub style_words_x: Vec<String>,
    pub style_words_y: Vec<String>,
    /// Whitespace-tokenized templates containing `{noun}` slots (at least
    /// one) and exactly one `{style}` slot.
    pub templates: Vec<String>,
    /// Total sentences generated per style, split 70/10/20 into
    /// train/valid/test (rounded down, remainder to train).
    pub sentences_per_style: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn load(path: &Path) -> Result<SynthSpec> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SynthSpec = serde_json::from_str(&text)
            .map_err(|e| Error::format(path, e.line(), e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sentences_per_style == 0 {
            return Err(Error::contract("sentences_per_style must be positive"));
        }
        if self.noun_classes.is_empty() || self.templates.is_empty() {
            return Err(Error::contract(
                "spec needs at least one noun class and one template",
            ));
        }
        if self.style_words_x.is_empty() || self.style_words_y.is_empty() {
            return Err(Error::contract("both style-word sets must be non-empty"));
        }
        for x in &self.style_words_x {
            if self.style_words_y.contains(x) {
                return Err(Error::contract(format!(
                    "style-word sets must be disjoint; {x:?} appears in both"
                )));
            }
        }
        let mut seen_nouns = std::collections::HashSet::new();
        for class in &self.noun_classes {
            if class.synonyms.is_empty() {
                return Err(Error::contract(format!(
                    "noun class {:?} has no synonyms",
                    class.name
                )));
            }
            for noun in &class.synonyms {
                if !seen_nouns.insert(noun.clone()) {
                    return Err(Error::contract(format!(
                        "noun {noun:?} appears in more than one class"
                    )));
                }
                if self.style_words_x.contains(noun) || self.style_words_y.contains(noun) {
                    return Err(Error::contract(format!(
                        "{noun:?} cannot be both a noun and a style word"
                    )));
                }
            }
        }
        let axes: usize = self.noun_classes.iter().map(|c| 1 + c.synonyms.len()).sum();
        if axes > EMBEDDING_DIM {
            return Err(Error::contract(format!(
                "noun classes need {axes} embedding axes, only {EMBEDDING_DIM} available"
            )));
        }
        for template in &self.templates {
            let tokens: Vec<&str> = template.split_whitespace().collect();
            if tokens.len() > MAX_CONTENT_TOKENS {
                return Err(Error::contract(format!(
                    "template {template:?} exceeds {MAX_CONTENT_TOKENS} tokens"
                )));
            }
            let nouns = tokens.iter().filter(|t| **t == NOUN_SLOT).count();
            let styles = tokens.iter().filter(|t| **t == STYLE_SLOT).count();
            if nouns == 0 {
                return Err(Error::contract(format!(
                    "template {template:?} has no {NOUN_SLOT} slot"
                )));
            }
            if styles != 1 {
                return Err(Error::contract(format!(
                    "template {template:?} must have exactly one {STYLE_SLOT} slot"
                )));
            }
        }
        Ok(())
    }

    /// Built-in spec: 3 noun classes x 4 synonyms, 8 style words per side,
    /// 19 templates — roughly 80 distinct surface tokens.
    pub fn default_spec() -> SynthSpec {
        let class = |name: &str, syns: &[&str]| NounClass {
            name: name.to_string(),
            synonyms: syns.iter().map(|s| s.to_string()).collect(),
        };
        let words = |ws: &[&str]| ws.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        SynthSpec {
            noun_classes: vec![
                class("food", &["pizza", "burger", "pasta", "salad"]),
                class("staff", &["waiter", "manager", "chef", "host"]),
                class("venue", &["patio", "lobby", "garden", "terrace"]),
            ],
            style_words_x: words(&[
                "great",
                "tasty",
                "lovely",
                "superb",
                "friendly",
                "spotless",
                "charming",
                "delightful",
            ]),
            style_words_y: words(&[
                "awful", "bland", "dreary", "rude", "filthy", "shabby", "dismal", "grim",
            ]),
            templates: [
                "the {noun} was {style}",
                "that {noun} is {style}",
                "a truly {style} {noun}",
                "our {noun} looked {style} today",
                "honestly the {noun} felt {style}",
                "such a {style} {noun} indeed",
                "the {noun} near the {noun} seemed {style}",
                "folks say the {noun} is {style}",
                "what a {style} {noun} that was",
                "my friends found the {noun} {style}",
                "everyone agreed the {noun} was {style}",
                "frankly this {noun} and that {noun} were {style}",
                "the {style} {noun} stood out tonight",
                "we thought the {noun} was rather {style}",
                "reviews called the {noun} quite {style}",
                "overall the {noun} remains {style} here",
                "people mention the {noun} became {style} lately",
                "both the {noun} and the {noun} turned {style}",
                "visitors described the {noun} as {style}",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            sentences_per_style: 2000,
            seed: 13,
        }
    }
}

/// One generated corpus file plus ground-truth noun annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCorpus {
    pub style: StyleLabel,
    pub split: Split,
    pub sentences: Vec<Vec<String>>,
    /// Nouns inserted into each sentence, in slot order.
    pub nouns: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    /// Six corpora: X/Y crossed with train/valid/test.
    pub corpora: Vec<GeneratedCorpus>,
    /// Noun lexicon tokens in class/synonym order.
    pub lexicon: Vec<String>,
    /// Token plus 100-dim vector, in lexicon order.
    pub embeddings: Vec<(String, Vec<f64>)>,
}

/// Generates all corpora, the lexicon, and the embedding file contents.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let n = spec.sentences_per_style;
    let n_valid = n / 10;
    let n_test = n / 5;
    let n_train = n - n_valid - n_test;

    let mut corpora = Vec::new();
    for style in [StyleLabel::X, StyleLabel::Y] {
        let mut rng = root.derive(&format!("synth/{style}"));
        let style_words = match style {
            StyleLabel::X => &spec.style_words_x,
            StyleLabel::Y => &spec.style_words_y,
        };
        let mut sentences = Vec::with_capacity(n);
        let mut nouns = Vec::with_capacity(n);
        for _ in 0..n {
            let template = &spec.templates[rng.range(spec.templates.len())];
            let mut sentence = Vec::new();
            let mut sentence_nouns = Vec::new();
            for token in template.split_whitespace() {
                match token {
                    NOUN_SLOT => {
                        let class = &spec.noun_classes[rng.range(spec.noun_classes.len())];
                        let noun = &class.synonyms[rng.range(class.synonyms.len())];
                        sentence.push(noun.clone());
                        sentence_nouns.push(noun.clone());
                    }
                    STYLE_SLOT => sentence.push(style_words[rng.range(style_words.len())].clone()),
                    word => sentence.push(word.to_string()),
                }
            }
            sentences.push(sentence);
            nouns.push(sentence_nouns);
        }
        let mut offset = 0;
        for (split, count) in [
            (Split::Train, n_train),
            (Split::Valid, n_valid),
            (Split::Test, n_test),
        ] {
            corpora.push(GeneratedCorpus {
                style,
                split,
                sentences: sentences[offset..offset + count].to_vec(),
                nouns: nouns[offset..offset + count].to_vec(),
            });
            offset += count;
        }
    }

    let lexicon: Vec<String> = spec
        .noun_classes
        .iter()
        .flat_map(|c| c.synonyms.iter().cloned())
        .collect();

    let mut embeddings = Vec::with_capacity(lexicon.len());
    let mut axis = 0usize;
    for class in &spec.noun_classes {
        let centroid_axis = axis;
        for (j, noun) in class.synonyms.iter().enumerate() {
            let mut v = vec![0.0; EMBEDDING_DIM];
            v[centroid_axis] = 1.0;
            v[centroid_axis + 1 + j] = PERTURBATION;
            embeddings.push((noun.clone(), v));
        }
        axis += 1 + class.synonyms.len();
    }

    Ok(SynthOutput {
        corpora,
        lexicon,
        embeddings,
    })
}

/// Writes the six corpus files (`x.train.txt`, ...), `lexicon.tsv`, and
/// `embeddings.txt` into an existing directory.
pub fn write_files(out: &SynthOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for corpus in &out.corpora {
        let path = dir.join(format!("{}.{}.txt", corpus.style, corpus.split.name()));
        let mut body = String::new();
        for sentence in &corpus.sentences {
            body.push_str(&sentence.join(" "));
            body.push('\n');
        }
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }

    let path = dir.join("lexicon.tsv");
    let mut body = String::new();
    for noun in &out.lexicon {
        body.push_str(noun);
        body.push_str("\tNOUN\n");
    }
    fs::write(&path, body).map_err(|e| Error::io(&path, e))?;

    let path = dir.join("embeddings.txt");
    let mut body = String::new();
    for (token, vector) in &out.embeddings {
        body.push_str(token);
        for v in vector {
            body.push(' ');
            body.push_str(&v.to_string());
        }
        body.push('\n');
    }
    fs::write(&path, body).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn default_spec_validates() {
        SynthSpec::default_spec().validate().unwrap();
    }

    #[test]
    fn split_sizes_are_70_10_20_with_remainder_to_train() {
        let mut spec = SynthSpec::default_spec();
        spec.sentences_per_style = 37;
        let out = generate(&spec).unwrap();
        let sizes: Vec<(StyleLabel, Split, usize)> = out
            .corpora
            .iter()
            .map(|c| (c.style, c.split, c.sentences.len()))
            .collect();
        for style in [StyleLabel::X, StyleLabel::Y] {
            assert!(sizes.contains(&(style, Split::Train, 27)));
            assert!(sizes.contains(&(style, Split::Valid, 3)));
            assert!(sizes.contains(&(style, Split::Test, 7)));
        }
    }

    #[test]
    fn every_sentence_has_a_noun_and_one_style_word() {
        let mut spec = SynthSpec::default_spec();
        spec.sentences_per_style = 50;
        let out = generate(&spec).unwrap();
        for corpus in &out.corpora {
            let style_words = match corpus.style {
                StyleLabel::X => &spec.style_words_x,
                StyleLabel::Y => &spec.style_words_y,
            };
            let other_words = match corpus.style {
                StyleLabel::X => &spec.style_words_y,
                StyleLabel::Y => &spec.style_words_x,
            };
            for (sentence, nouns) in corpus.sentences.iter().zip(&corpus.nouns) {
                assert!(!nouns.is_empty());
                assert!(sentence.len() <= MAX_CONTENT_TOKENS);
                for noun in nouns {
                    assert!(out.lexicon.contains(noun));
                }
                let styled = sentence
                    .iter()
                    .filter(|t| style_words.contains(t))
                    .count();
                assert_eq!(styled, 1, "{sentence:?}");
                assert!(sentence.iter().all(|t| !other_words.contains(t)));
            }
        }
    }

    #[test]
    fn generation_is_byte_identical_across_runs() {
        let spec = {
            let mut s = SynthSpec::default_spec();
            s.sentences_per_style = 40;
            s
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        write_files(&generate(&spec).unwrap(), dir_a.path()).unwrap();
        write_files(&generate(&spec).unwrap(), dir_b.path()).unwrap();
        for name in [
            "x.train.txt",
            "x.valid.txt",
            "x.test.txt",
            "y.train.txt",
            "y.valid.txt",
            "y.test.txt",
            "lexicon.tsv",
            "embeddings.txt",
        ] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "file {name} differs between runs");
            assert!(!a.is_empty());
        }
    }

    #[test]
    fn different_seeds_differ() {
        let mut a = SynthSpec::default_spec();
        a.sentences_per_style = 40;
        let mut b = a.clone();
        b.seed = a.seed + 1;
        assert_ne!(generate(&a).unwrap(), generate(&b).unwrap());
    }

    #[test]
    fn embedding_cosine_bands_hold() {
        let spec = SynthSpec::default_spec();
        let out = generate(&spec).unwrap();
        let vec_of = |noun: &str| -> &Vec<f64> {
            &out.embeddings.iter().find(|(t, _)| t == noun).unwrap().1
        };
        for class in &spec.noun_classes {
            for a in &class.synonyms {
                for b in &class.synonyms {
                    if a != b {
                        let c = cosine(vec_of(a), vec_of(b));
                        assert!(c >= 0.8, "within-class cosine {c} for {a}/{b}");
                    }
                }
            }
        }
        for ca in &spec.noun_classes {
            for cb in &spec.noun_classes {
                if ca.name == cb.name {
                    continue;
                }
                for a in &ca.synonyms {
                    for b in &cb.synonyms {
                        let c = cosine(vec_of(a), vec_of(b));
                        assert!(c <= 0.2, "cross-class cosine {c} for {a}/{b}");
                    }
                }
            }
        }
    }

    #[test]
    fn lexicon_covers_all_nouns_in_order() {
        let out = generate(&SynthSpec::default_spec()).unwrap();
        assert_eq!(out.lexicon.len(), 12);
        assert_eq!(out.lexicon[0], "pizza");
        assert_eq!(out.embeddings.len(), 12);
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut overlap = SynthSpec::default_spec();
        overlap.style_words_y.push("great".to_string());
        assert!(overlap.validate().is_err());

        let mut no_noun = SynthSpec::default_spec();
        no_noun.templates.push("nothing to see {style}".to_string());
        assert!(no_noun.validate().is_err());

        let mut two_styles = SynthSpec::default_spec();
        two_styles
            .templates
            .push("{style} {noun} {style}".to_string());
        assert!(two_styles.validate().is_err());

        let mut dup = SynthSpec::default_spec();
        dup.noun_classes[1].synonyms.push("pizza".to_string());
        assert!(dup.validate().is_err());

        let mut long = SynthSpec::default_spec();
        long.templates
            .push(format!("{} {{noun}} {{style}}", vec!["w"; 14].join(" ")));
        assert!(long.validate().is_err());
    }
}
