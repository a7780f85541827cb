//! Sequence passes: style-conditioned encoding, attentional decoding
//! (teacher-forced, relaxed, and greedy), and the Gumbel-softmax step.

use crate::data::{SentenceIds, BOS, EOS};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tape, Var};
use crate::model::{gru_step, AttentionVars, ModelVars, MAX_DECODE_STEPS};

/// Encoder output: one annotation per non-PAD position.
pub struct Encoding {
    /// Annotation per position, BOS through EOS: the token embedding
    /// concatenated with the recurrent state at that position. Exposing
    /// the raw embedding lets the attention context carry token identity
    /// in a form the output layer can decode with one linear map.
    pub rows: Vec<Var>,
    /// Same annotations stacked as a [T, embedding + hidden] matrix.
    pub matrix: Var,
    /// Final recurrent state: the content summary fed to the decoder.
    pub content: Var,
}

/// Runs the encoder over the non-PAD frame with the style vector appended
/// to every token embedding.
pub fn encode(t: &mut Tape, vars: &ModelVars, x: &SentenceIds, style: Var) -> Result<Encoding> {
    if x.true_length < 2 {
        return Err(Error::contract(
            "cannot encode a sentence with no non-PAD tokens",
        ));
    }
    let hidden = t.shape_of(vars.dec_init.w)[0];
    let width = t.shape_of(vars.embedding)[1] + hidden;
    let mut h = t.leaf(&[hidden], &vec![0.0; hidden])?;
    let mut rows = Vec::with_capacity(x.true_length);
    for &id in &x.ids[..x.true_length] {
        let emb = t.row(vars.embedding, id as usize)?;
        let input = t.concat(&[emb, style])?;
        h = gru_step(t, &vars.encoder, input, h)?;
        // Style carriers have gate 0: their embeddings are erased from the
        // annotation, so the only channel that can emit them downstream is
        // the style-conditioned output block, not the copy path.
        let gate = t.value(vars.copy_gate)[id as usize];
        let gated = t.scale(emb, gate)?;
        rows.push(t.concat(&[gated, h])?);
    }
    let flat = t.concat(&rows)?;
    let matrix = t.reshape(flat, &[rows.len(), width])?;
    Ok(Encoding {
        matrix,
        content: h,
        rows,
    })
}

/// Additive attention over the encoder states; returns the context vector
/// and the normalized weights (which sum to 1 over non-PAD positions by
/// construction, since PAD states are never encoded).
pub fn attend(
    t: &mut Tape,
    attn: &AttentionVars,
    enc: &Encoding,
    query: Var,
) -> Result<(Var, Var)> {
    let mut scores = Vec::with_capacity(enc.rows.len());
    for &state in &enc.rows {
        let joint = t.concat(&[query, state])?;
        let wj = t.matmul(attn.w, joint)?;
        let pre = t.add(wj, attn.b)?;
        let hidden = t.tanh(pre)?;
        scores.push(t.dot(attn.v, hidden)?);
    }
    let scores = t.concat(&scores)?;
    let weights = t.softmax(scores)?;
    let context = t.matmul(weights, enc.matrix)?;
    Ok((context, weights))
}

fn decoder_start(t: &mut Tape, vars: &ModelVars, content: Var) -> Result<Var> {
    let projected = vars.dec_init.apply(t, content)?;
    t.tanh(projected)
}

fn decoder_step(
    t: &mut Tape,
    vars: &ModelVars,
    enc: &Encoding,
    style: Var,
    input_emb: Var,
    h: Var,
) -> Result<(Var, Var, Var)> {
    let (context, weights) = attend(t, &vars.attention, enc, h)?;
    let input = t.concat(&[input_emb, context])?;
    let h = gru_step(t, &vars.decoder, input, h)?;
    // Deep output: the attention context and style vector feed the
    // vocabulary head directly. The style vector enters word choice only
    // here — never the recurrent state — so flipping it for transfer
    // re-biases the output distribution without knocking the hidden
    // trajectory or the attention path off the manifold that copying
    // depends on.
    let readout = t.concat(&[h, context, style])?;
    let raw = vars.dec_out.apply(t, readout)?;
    let logits = t.scale(raw, crate::model::READOUT_GAIN)?;
    Ok((h, logits, weights))
}

/// Teacher-forced decode of a framed target sentence.
pub struct TeacherForced {
    /// Next-token logits for positions 1..true_length (content and EOS).
    pub logits: Vec<Var>,
    /// Attention weights per step, for inspection.
    pub attn_weights: Vec<Var>,
}

pub fn decode_teacher_forced(
    t: &mut Tape,
    vars: &ModelVars,
    enc: &Encoding,
    style: Var,
    target: &SentenceIds,
) -> Result<TeacherForced> {
    let mut h = decoder_start(t, vars, enc.content)?;
    let mut logits = Vec::with_capacity(target.true_length - 1);
    let mut attn_weights = Vec::with_capacity(target.true_length - 1);
    for &id in &target.ids[..target.true_length - 1] {
        let emb = t.row(vars.embedding, id as usize)?;
        let (next_h, step_logits, weights) = decoder_step(t, vars, enc, style, emb, h)?;
        h = next_h;
        logits.push(step_logits);
        attn_weights.push(weights);
    }
    Ok(TeacherForced {
        logits,
        attn_weights,
    })
}

/// Relaxed one-sample step: softmax((logits + g) / tau), identical to
/// softmax((log softmax(logits) + g) / tau) because softmax ignores
/// constant shifts of its input.
pub fn gumbel_softmax_step(t: &mut Tape, logits: Var, tau: f64, g: &[f64]) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::contract(format!(
            "gumbel-softmax temperature must be positive, got {tau}"
        )));
    }
    let n = t.shape_of(logits)[0];
    if g.len() != n {
        return Err(Error::contract(format!(
            "noise length {} does not match logits length {n}",
            g.len()
        )));
    }
    let noise = t.leaf(&[n], g)?;
    let noisy = t.add(logits, noise)?;
    let scaled = t.scale(noisy, 1.0 / tau)?;
    t.softmax(scaled)
}

/// Source of per-step Gumbel noise vectors.
pub enum GumbelNoise {
    /// Fresh draws from a seeded stream.
    Seeded(Rng),
    /// Pre-drawn table, one vector per step (for finite-difference tests,
    /// where noise must not change under parameter perturbation).
    Fixed(Vec<Vec<f64>>),
    /// No noise: the relaxed step becomes a plain tempered softmax.
    Zero,
}

impl GumbelNoise {
    fn draw(&mut self, step: usize, n: usize) -> Result<Vec<f64>> {
        match self {
            GumbelNoise::Seeded(rng) => Ok(rng.gumbel_vec(n)),
            GumbelNoise::Fixed(table) => {
                let row = table.get(step).ok_or_else(|| {
                    Error::contract(format!("fixed noise table has no row for step {step}"))
                })?;
                if row.len() != n {
                    return Err(Error::contract(format!(
                        "fixed noise row {step} has length {}, expected {n}",
                        row.len()
                    )));
                }
                Ok(row.clone())
            }
            GumbelNoise::Zero => Ok(vec![0.0; n]),
        }
    }
}

/// Options for [`decode_soft`].
pub struct SoftDecodeOpts {
    pub tau: f64,
    /// Hard cap on emitted steps.
    pub max_steps: usize,
    /// Stop once a step's argmax is EOS. Disabled for gradient checks,
    /// where the step count must not depend on parameter perturbations.
    pub stop_at_eos: bool,
}

impl SoftDecodeOpts {
    pub fn new(tau: f64) -> SoftDecodeOpts {
        SoftDecodeOpts {
            tau,
            max_steps: MAX_DECODE_STEPS,
            stop_at_eos: true,
        }
    }
}

/// Relaxed autoregressive output: per-step probability vectors plus their
/// argmax ids, ending at the first EOS argmax or the step cap.
pub struct SoftSequence {
    pub probs: Vec<Var>,
    pub argmax: Vec<u32>,
    pub tau: f64,
}

impl SoftSequence {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Autoregressive relaxed decoding: each step's input embedding is the
/// probability-weighted average of the embedding rows under the previous
/// step's output distribution.
pub fn decode_soft(
    t: &mut Tape,
    vars: &ModelVars,
    enc: &Encoding,
    style: Var,
    noise: &mut GumbelNoise,
    opts: &SoftDecodeOpts,
) -> Result<SoftSequence> {
    let vocab = t.shape_of(vars.embedding)[0];
    let mut h = decoder_start(t, vars, enc.content)?;
    let mut input_emb = t.row(vars.embedding, BOS as usize)?;
    let mut probs = Vec::new();
    let mut argmaxes = Vec::new();
    for step in 0..opts.max_steps {
        let (next_h, logits, _) = decoder_step(t, vars, enc, style, input_emb, h)?;
        h = next_h;
        let g = noise.draw(step, vocab)?;
        let u = gumbel_softmax_step(t, logits, opts.tau, &g)?;
        let top = argmax(t.value(u)) as u32;
        probs.push(u);
        argmaxes.push(top);
        if opts.stop_at_eos && top == EOS {
            break;
        }
        input_emb = t.matmul(u, vars.embedding)?;
    }
    Ok(SoftSequence {
        probs,
        argmax: argmaxes,
        tau: opts.tau,
    })
}

/// Deterministic argmax decoding used for transfer and evaluation: no
/// Gumbel noise, no temperature, discrete feedback of the argmax token.
/// Returns content token ids (EOS excluded).
pub fn greedy_decode(
    t: &mut Tape,
    vars: &ModelVars,
    enc: &Encoding,
    style: Var,
) -> Result<Vec<u32>> {
    let mut h = decoder_start(t, vars, enc.content)?;
    let mut input = BOS;
    let mut out = Vec::new();
    for _ in 0..MAX_DECODE_STEPS {
        let emb = t.row(vars.embedding, input as usize)?;
        let (next_h, logits, _) = decoder_step(t, vars, enc, style, emb, h)?;
        h = next_h;
        let top = argmax(t.value(logits)) as u32;
        if top == EOS {
            break;
        }
        out.push(top);
        input = top;
    }
    out.truncate(crate::data::MAX_CONTENT_TOKENS);
    Ok(out)
}
