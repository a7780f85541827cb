//! The four loss terms and their weighted composite, built per sentence on
//! a tape: reconstruction, style-classifier feedback, noun preservation,
//! and language-model smoothness.

use crate::data::{SentenceIds, StyleLabel, BOS};
use crate::error::{Error, Result};
use crate::lexical::{cosine, EMBEDDING_DIM};
use crate::model::{
    classify_soft, classify_tokens, decode_soft, decode_teacher_forced, encode, lm_init_state,
    lm_next, lm_teacher_nll, one_hot, Encoding, GumbelNoise, LmInput, ModelVars, SoftDecodeOpts,
    SoftSequence,
};
use crate::tensor::{Tape, Var};
use crate::training::config::LossWeights;
use crate::training::prep::{GloveVocab, PreparedSentence};

/// Count-mismatch weight: 1 + (max(c_x, c_y) − min(c_x, c_y)) / c_x.
/// Always ≥ 1, with equality exactly when the counts agree.
pub fn gamma(c_x: usize, c_y: usize) -> Result<f64> {
    if c_x == 0 {
        return Err(Error::contract(
            "noun weight is undefined for a noun-free input (c_x = 0)",
        ));
    }
    let diff = c_x.max(c_y) - c_x.min(c_y);
    Ok(1.0 + diff as f64 / c_x as f64)
}

/// One matched noun pair: input noun `input` paired with the generated
/// noun `generated` most similar to it, at cosine distance `distance`.
#[derive(Debug, Clone, PartialEq)]
pub struct NounMatch {
    pub input: usize,
    pub generated: usize,
    pub distance: f64,
}

/// Pairs the first min(c_x, c_y) input nouns, in order, each with its
/// most-cosine-similar generated noun (ties broken toward the smallest
/// index). Matching is with replacement: two input nouns may share a
/// generated noun.
pub fn match_nouns(input: &[Vec<f64>], generated: &[Vec<f64>]) -> Result<Vec<NounMatch>> {
    let n = input.len().min(generated.len());
    let mut out = Vec::with_capacity(n);
    for (i, e) in input.iter().take(n).enumerate() {
        let mut best_j = 0usize;
        let mut best_cos = f64::NEG_INFINITY;
        for (j, g) in generated.iter().enumerate() {
            let c = cosine(e, g)?;
            if c > best_cos {
                best_cos = c;
                best_j = j;
            }
        }
        out.push(NounMatch {
            input: i,
            generated: best_j,
            distance: 1.0 - best_cos,
        });
    }
    Ok(out)
}

/// Noun-preservation distance for one sentence pair, with edge cases
/// flagged rather than scored.
#[derive(Debug, Clone)]
pub struct PosDistance {
    /// γ · Σ d_i; 0 when either side has no nouns.
    pub value: f64,
    /// `value / c_x`, the per-input-noun normalization (reported, never
    /// optimized); 0 when `value` is 0.
    pub normalized: f64,
    /// γ as computed, or 0 when the input is noun-free.
    pub gamma: f64,
    pub matches: Vec<NounMatch>,
    /// The input had no embeddable nouns, so the distance is undefined.
    pub noun_free: bool,
    /// The input had nouns but the generated side had none.
    pub count_mismatch: bool,
}

impl PosDistance {
    fn inactive() -> PosDistance {
        PosDistance {
            value: 0.0,
            normalized: 0.0,
            gamma: 0.0,
            matches: Vec::new(),
            noun_free: true,
            count_mismatch: false,
        }
    }
}

/// Discrete-path distance between an input noun vector list and a
/// generated one.
pub fn pos_distance(input: &[Vec<f64>], generated: &[Vec<f64>]) -> Result<PosDistance> {
    if input.is_empty() {
        return Ok(PosDistance::inactive());
    }
    let g = gamma(input.len(), generated.len())?;
    if generated.is_empty() {
        return Ok(PosDistance {
            value: 0.0,
            normalized: 0.0,
            gamma: g,
            matches: Vec::new(),
            noun_free: false,
            count_mismatch: true,
        });
    }
    let matches = match_nouns(input, generated)?;
    let sum: f64 = matches.iter().map(|m| m.distance).sum();
    let value = g * sum;
    Ok(PosDistance {
        value,
        normalized: value / input.len() as f64,
        gamma: g,
        matches,
        noun_free: false,
        count_mismatch: false,
    })
}

/// cos(a, b) on the tape: a·b / sqrt((a·a)(b·b)).
fn tape_cosine(t: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let ab = t.dot(a, b)?;
    let aa = t.dot(a, a)?;
    let bb = t.dot(b, b)?;
    let prod = t.mul(aa, bb)?;
    let denom = t.sqrt(prod)?;
    t.div(ab, denom)
}

/// Differentiable noun-preservation term for one relaxed decode.
pub struct SoftPos {
    /// γ · Σ d_i as a tape node; a constant 0 when either side is
    /// noun-free.
    pub loss: Var,
    /// Value-level record mirroring [`pos_distance`].
    pub record: PosDistance,
}

/// Builds the noun-preservation loss on the tape. Generated nouns are the
/// relaxed steps whose argmax token is a lexicon noun; each contributes
/// its probability-weighted pretrained embedding, so the distance carries
/// gradient into the token distributions. Matching itself follows the
/// discrete rule on current values.
pub fn pos_loss_soft(
    t: &mut Tape,
    seq: &SoftSequence,
    glove: &GloveVocab,
    input_nouns: &[Vec<f64>],
) -> Result<SoftPos> {
    if input_nouns.is_empty() {
        return Ok(SoftPos {
            loss: t.leaf_scalar(0.0)?,
            record: PosDistance::inactive(),
        });
    }
    let noun_steps: Vec<usize> = seq
        .argmax
        .iter()
        .enumerate()
        .filter(|(_, &id)| glove.is_noun[id as usize])
        .map(|(s, _)| s)
        .collect();
    let g = gamma(input_nouns.len(), noun_steps.len())?;
    if noun_steps.is_empty() {
        return Ok(SoftPos {
            loss: t.leaf_scalar(0.0)?,
            record: PosDistance {
                value: 0.0,
                normalized: 0.0,
                gamma: g,
                matches: Vec::new(),
                noun_free: false,
                count_mismatch: true,
            },
        });
    }

    let matrix = t.leaf(&[glove.rows(), EMBEDDING_DIM], &glove.matrix)?;
    let mut generated_vars = Vec::with_capacity(noun_steps.len());
    let mut generated_values = Vec::with_capacity(noun_steps.len());
    for &s in &noun_steps {
        let vec = t.matmul(seq.probs[s], matrix)?;
        generated_values.push(t.value(vec).to_vec());
        generated_vars.push(vec);
    }

    let matches = match_nouns(input_nouns, &generated_values)?;
    let mut sum: Option<Var> = None;
    for m in &matches {
        let e = t.leaf(&[EMBEDDING_DIM], &input_nouns[m.input])?;
        let cos = tape_cosine(t, e, generated_vars[m.generated])?;
        let one = t.leaf_scalar(1.0)?;
        let d = t.sub(one, cos)?;
        sum = Some(match sum {
            None => d,
            Some(prev) => t.add(prev, d)?,
        });
    }
    let loss = t.scale(sum.expect("at least one match"), g)?;
    let value: f64 = g * matches.iter().map(|m| m.distance).sum::<f64>();
    Ok(SoftPos {
        loss,
        record: PosDistance {
            value,
            normalized: value / input_nouns.len() as f64,
            gamma: g,
            matches,
            noun_free: false,
            count_mismatch: false,
        },
    })
}

/// Teacher-forced per-token mean NLL of reproducing `x` from its encoding
/// in the given style.
pub fn reconstruction_loss(
    t: &mut Tape,
    vars: &ModelVars,
    enc: &Encoding,
    style: Var,
    x: &SentenceIds,
) -> Result<Var> {
    let tf = decode_teacher_forced(t, vars, enc, style, x)?;
    let vocab = t.shape_of(vars.embedding)[0];
    let mut total: Option<Var> = None;
    for (k, &logits) in tf.logits.iter().enumerate() {
        let target = one_hot(t, vocab, x.ids[k + 1])?;
        let nll = t.cross_entropy(logits, target)?;
        total = Some(match total {
            None => nll,
            Some(prev) => t.add(prev, nll)?,
        });
    }
    let total = total.expect("framed sentences predict at least EOS");
    t.scale(total, 1.0 / tf.logits.len() as f64)
}

/// Cross-entropy of the feedback classifier on a relaxed decode against
/// the intended target style.
pub fn classifier_feedback_loss(
    t: &mut Tape,
    vars: &ModelVars,
    seq: &SoftSequence,
    target: StyleLabel,
) -> Result<Var> {
    let logits = classify_soft(t, &vars.classifier, vars.classifier_embedding, &seq.probs)?;
    let label = one_hot(t, 2, target.index() as u32)?;
    t.cross_entropy(logits, label)
}

/// Σ_t H(p̃ᵗ, p̂ᵗ): cross-entropy of the language model's next-token
/// prediction against each relaxed output step, summed over steps. The
/// language model consumes the relaxed outputs as soft embeddings, so
/// gradients reach the generator through both the targets and the inputs.
pub fn lm_generated_loss(
    t: &mut Tape,
    vars: &ModelVars,
    seq: &SoftSequence,
    centroid: Option<&[f64]>,
    target_style: Var,
) -> Result<Var> {
    if seq.is_empty() {
        return Err(Error::contract(
            "cannot score an empty relaxed sequence under the language model",
        ));
    }
    let style = target_style;
    let mut state = lm_init_state(t, &vars.lm, centroid, style)?;
    let mut input = LmInput::Token(BOS);
    let mut total: Option<Var> = None;
    for &u in &seq.probs {
        let step = lm_next(t, &vars.lm, state, input)?;
        state = step.state;
        let ce = t.cross_entropy(step.logits, u)?;
        total = Some(match total {
            None => ce,
            Some(prev) => t.add(prev, ce)?,
        });
        input = LmInput::Soft(u);
    }
    Ok(total.expect("sequence is nonempty"))
}

/// Phase-1 objective for one sentence: per-token mean NLL under the
/// language model conditioned on the sentence's own nouns and style.
pub fn lm_pretrain_loss(
    t: &mut Tape,
    vars: &ModelVars,
    sent: &PreparedSentence,
    style: StyleLabel,
) -> Result<Var> {
    let style_var = vars.style(style);
    let h0 = lm_init_state(t, &vars.lm, sent.centroid.as_deref(), style_var)?;
    let (nll, count) = lm_teacher_nll(t, &vars.lm, h0, &sent.ids)?;
    t.scale(nll, 1.0 / count as f64)
}

/// Phase-2 objective for one sentence: cross-entropy of the feedback and
/// evaluation classifiers (in that order) against the true style. The two
/// classifiers may see different token lists: the feedback classifier is
/// trained on a word-dropout view so that deleting the distinctive words
/// of a sentence leaves it uncertain rather than flipping its verdict,
/// while the evaluation classifier sees the sentence as written.
pub fn classifier_pretrain_loss(
    t: &mut Tape,
    vars: &ModelVars,
    fb_ids: &[u32],
    ev_ids: &[u32],
    style: StyleLabel,
) -> Result<(Var, Var)> {
    let label = one_hot(t, 2, style.index() as u32)?;
    let fb_logits = classify_tokens(t, &vars.classifier, vars.classifier_embedding, fb_ids)?;
    let fb = t.cross_entropy(fb_logits, label)?;
    let ev_logits = classify_tokens(t, &vars.eval_classifier, vars.eval_embedding, ev_ids)?;
    let ev = t.cross_entropy(ev_logits, label)?;
    Ok((fb, ev))
}

/// Per-sentence composite loss: every term as a tape node plus the
/// value-level records the training log needs. Terms whose weight is zero
/// are skipped entirely and reported as constant 0.
pub struct JointParts {
    pub res: Var,
    pub class: Var,
    pub pos: Var,
    pub lm: Var,
    /// res + α·class + β·pos + η·lm on the tape.
    pub total: Var,
    /// Noun record of the relaxed decode; `None` when the term was
    /// skipped (β = 0).
    pub pos_record: Option<PosDistance>,
    /// Steps emitted by the relaxed decode (0 when no term needed it).
    pub soft_len: usize,
}

/// Builds the full training objective for one sentence: teacher-forced
/// reconstruction in the source style, then a relaxed decode toward the
/// opposite style scored by the feedback classifier, the noun term, and
/// the language model (conditioned on the source nouns and target style).
pub fn joint_sentence_loss(
    t: &mut Tape,
    vars: &ModelVars,
    sent: &PreparedSentence,
    source: StyleLabel,
    glove: &GloveVocab,
    weights: &LossWeights,
    opts: &SoftDecodeOpts,
    noise: &mut GumbelNoise,
) -> Result<JointParts> {
    let target = source.other();
    let src_style = vars.style(source);
    let tgt_style = vars.style(target);

    let enc = encode(t, vars, &sent.ids, src_style)?;
    let res = reconstruction_loss(t, vars, &enc, src_style, &sent.ids)?;

    let need_soft = weights.classifier > 0.0 || weights.pos > 0.0 || weights.lm > 0.0;
    let seq = if need_soft {
        Some(decode_soft(t, vars, &enc, tgt_style, noise, opts)?)
    } else {
        None
    };
    let soft_len = seq.as_ref().map_or(0, SoftSequence::len);

    let zero = |t: &mut Tape| t.leaf_scalar(0.0);
    let class = match &seq {
        Some(seq) if weights.classifier > 0.0 => classifier_feedback_loss(t, vars, seq, target)?,
        _ => zero(t)?,
    };
    let (pos, pos_record) = match &seq {
        Some(seq) if weights.pos > 0.0 => {
            let soft = pos_loss_soft(t, seq, glove, &sent.noun_vectors)?;
            (soft.loss, Some(soft.record))
        }
        _ => (zero(t)?, None),
    };
    // The language-model score is summed over steps; dividing by the
    // step count puts it on the same per-token scale as the
    // reconstruction term, so one weight setting balances sentences of
    // any length.
    let lm = match &seq {
        Some(seq) if weights.lm > 0.0 => {
            let total = lm_generated_loss(t, vars, seq, sent.centroid.as_deref(), tgt_style)?;
            t.scale(total, 1.0 / seq.len() as f64)?
        }
        _ => zero(t)?,
    };

    let mut total = res;
    for (term, weight) in [
        (class, weights.classifier),
        (pos, weights.pos),
        (lm, weights.lm),
    ] {
        if weight > 0.0 {
            let scaled = t.scale(term, weight)?;
            total = t.add(total, scaled)?;
        }
    }

    Ok(JointParts {
        res,
        class,
        pos,
        lm,
        total,
        pos_record,
        soft_len,
    })
}
