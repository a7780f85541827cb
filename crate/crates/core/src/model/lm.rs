//! Content-conditional GRU language model.
//!
//! The initial hidden state is a learned function of the sentence's noun
//! centroid and a style vector, so the model scores fluency conditioned on
//! what the sentence talks about and which style it should carry. Inputs
//! may be discrete tokens or relaxed probability vectors; a one-hot
//! probability vector produces exactly the same step as its token id.

use crate::data::SentenceIds;
use crate::error::{Error, Result};
use crate::lexical::EMBEDDING_DIM;
use crate::tensor::{Tape, Var};
use crate::model::{gru_step, one_hot, GruVars, LinearVars};

/// Relative slack when checking that a soft input sums to one.
const DISTRIBUTION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct LmVars {
    /// The model's own word embeddings (not the generator's).
    pub emb: Var,
    pub init: LinearVars,
    pub gru: GruVars,
    pub out: LinearVars,
}

/// One step's input: a discrete token id or a probability vector over the
/// vocabulary.
pub enum LmInput {
    Token(u32),
    Soft(Var),
}

/// Recurrent state threaded through [`lm_next`] calls.
#[derive(Debug, Clone, Copy)]
pub struct LmState {
    pub h: Var,
    /// Conditioning vector [noun centroid; style], read by the output
    /// layer at every step so conditioning never fades from the
    /// recurrent state.
    pub cond: Var,
}

/// Output of [`lm_next`].
pub struct LmStep {
    pub state: LmState,
    pub logits: Var,
    /// softmax(logits); sums to 1 within 1e-9.
    pub probs: Var,
}

/// h = tanh(W·[noun centroid; style] + b). An empty noun set passes the
/// zero centroid.
pub fn lm_init_state(
    t: &mut Tape,
    lm: &LmVars,
    centroid: Option<&[f64]>,
    style: Var,
) -> Result<LmState> {
    let zero;
    let c = match centroid {
        Some(c) => {
            if c.len() != EMBEDDING_DIM {
                return Err(Error::contract(format!(
                    "noun centroid has dimension {}, expected {EMBEDDING_DIM}",
                    c.len()
                )));
            }
            c
        }
        None => {
            zero = vec![0.0; EMBEDDING_DIM];
            &zero
        }
    };
    let cv = t.leaf(&[EMBEDDING_DIM], c)?;
    let joint = t.concat(&[cv, style])?;
    let pre = lm.init.apply(t, joint)?;
    let h = t.tanh(pre)?;
    Ok(LmState { h, cond: joint })
}

/// One recurrence step.
pub fn lm_next(t: &mut Tape, lm: &LmVars, state: LmState, input: LmInput) -> Result<LmStep> {
    let x = match input {
        LmInput::Token(id) => t.row(lm.emb, id as usize)?,
        LmInput::Soft(u) => {
            let sum: f64 = t.value(u).iter().sum();
            if (sum - 1.0).abs() > DISTRIBUTION_TOL {
                return Err(Error::contract(format!(
                    "language model soft input is not a distribution (sum = {sum})"
                )));
            }
            t.matmul(u, lm.emb)?
        }
    };
    let h = gru_step(t, &lm.gru, x, state.h)?;
    // Deep output: the current input embedding and the conditioning vector
    // feed the vocabulary head directly, so local word-to-word structure is
    // one linear map away instead of having to pass through the recurrence.
    let readout = t.concat(&[h, x, state.cond])?;
    let raw = lm.out.apply(t, readout)?;
    let logits = t.scale(raw, crate::model::READOUT_GAIN)?;
    let probs = t.softmax(logits)?;
    Ok(LmStep {
        state: LmState { h, cond: state.cond },
        logits,
        probs,
    })
}

/// Teacher-forced negative log-likelihood of a framed sentence: predicts
/// ids[1..true_length] (content plus EOS) from the preceding tokens.
/// Returns the summed NLL and the number of predicted tokens.
pub fn lm_teacher_nll(
    t: &mut Tape,
    lm: &LmVars,
    start: LmState,
    sentence: &SentenceIds,
) -> Result<(Var, usize)> {
    if sentence.true_length < 2 {
        return Err(Error::contract(
            "cannot score a sentence with no non-PAD tokens",
        ));
    }
    let vocab = t.shape_of(lm.emb)[0];
    let mut state = start;
    let mut total: Option<Var> = None;
    for step in 0..sentence.true_length - 1 {
        let input = sentence.ids[step];
        let target = sentence.ids[step + 1];
        let out = lm_next(t, lm, state, LmInput::Token(input))?;
        state = out.state;
        let target_dist = one_hot(t, vocab, target)?;
        let nll = t.cross_entropy(out.logits, target_dist)?;
        total = Some(match total {
            None => nll,
            Some(prev) => t.add(prev, nll)?,
        });
    }
    Ok((
        total.expect("true_length >= 2 yields at least one step"),
        sentence.true_length - 1,
    ))
}
