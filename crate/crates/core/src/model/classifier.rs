//! Convolutional sentence classifier over token embeddings.
//!
//! For each kernel width w in {3, 4, 5}, a filter bank scores every
//! window of w consecutive token vectors (ReLU), features are max-pooled
//! over time, the three pooled blocks are concatenated, and a final
//! linear layer yields the two style logits. Sequences shorter than the
//! widest kernel are left-padded with the PAD embedding.

use crate::data::PAD;
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tape, Tensor, Var};
use crate::model::{Linear, LinearVars, KERNEL_WIDTHS, MIN_CLASSIFIER_LEN};

#[derive(Debug, Clone)]
pub struct TextCnn {
    pub conv3: Linear,
    pub conv4: Linear,
    pub conv5: Linear,
    pub out: Linear,
}

impl TextCnn {
    pub fn init(rng: &mut Rng, embedding: usize, filters: usize) -> TextCnn {
        let conv = |rng: &mut Rng, width: usize| {
            let fan_in = width * embedding;
            let bound = (6.0 / (fan_in + filters) as f64).sqrt();
            let data: Vec<f64> = (0..filters * fan_in)
                .map(|_| rng.uniform_in(-bound, bound))
                .collect();
            Linear {
                w: Tensor::from_vec(&[filters, fan_in], data).expect("length matches shape"),
                b: Tensor::zeros(&[filters]),
            }
        };
        TextCnn {
            conv3: conv(rng, 3),
            conv4: conv(rng, 4),
            conv5: conv(rng, 5),
            out: Linear {
                w: Tensor::zeros(&[2, 3 * filters]),
                b: Tensor::zeros(&[2]),
            },
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(&'static str, &Tensor)> {
        let names = Self::names(prefix);
        vec![
            (names[0], &self.conv3.w),
            (names[1], &self.conv3.b),
            (names[2], &self.conv4.w),
            (names[3], &self.conv4.b),
            (names[4], &self.conv5.w),
            (names[5], &self.conv5.b),
            (names[6], &self.out.w),
            (names[7], &self.out.b),
        ]
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(&'static str, &mut Tensor)> {
        let names = Self::names(prefix);
        vec![
            (names[0], &mut self.conv3.w),
            (names[1], &mut self.conv3.b),
            (names[2], &mut self.conv4.w),
            (names[3], &mut self.conv4.b),
            (names[4], &mut self.conv5.w),
            (names[5], &mut self.conv5.b),
            (names[6], &mut self.out.w),
            (names[7], &mut self.out.b),
        ]
    }

    fn names(prefix: &str) -> [&'static str; 8] {
        match prefix {
            "classifier" => [
                "classifier.conv3.w",
                "classifier.conv3.b",
                "classifier.conv4.w",
                "classifier.conv4.b",
                "classifier.conv5.w",
                "classifier.conv5.b",
                "classifier.out.w",
                "classifier.out.b",
            ],
            "eval_classifier" => [
                "eval_classifier.conv3.w",
                "eval_classifier.conv3.b",
                "eval_classifier.conv4.w",
                "eval_classifier.conv4.b",
                "eval_classifier.conv5.w",
                "eval_classifier.conv5.b",
                "eval_classifier.out.w",
                "eval_classifier.out.b",
            ],
            other => panic!("unknown classifier prefix {other:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TextCnnVars {
    pub conv3: LinearVars,
    pub conv4: LinearVars,
    pub conv5: LinearVars,
    pub out: LinearVars,
}

/// Elementwise maximum via max(a, b) = b + relu(a - b).
fn elementwise_max(t: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let diff = t.sub(a, b)?;
    let pos = t.relu(diff)?;
    t.add(b, pos)
}

/// Classifies a sequence of token representation vectors (each of the
/// embedding dimension). Pads on the left with the PAD embedding row of
/// `embedding` until the widest kernel fits.
pub fn classify_reps(
    t: &mut Tape,
    cnn: &TextCnnVars,
    embedding: Var,
    reps: Vec<Var>,
) -> Result<Var> {
    if reps.is_empty() {
        return Err(Error::contract("cannot classify an empty sequence"));
    }
    let mut padded = reps;
    while padded.len() < MIN_CLASSIFIER_LEN {
        let pad = t.row(embedding, PAD as usize)?;
        padded.insert(0, pad);
    }
    let mut pooled_blocks = Vec::with_capacity(KERNEL_WIDTHS.len());
    for (width, conv) in KERNEL_WIDTHS
        .iter()
        .zip([&cnn.conv3, &cnn.conv4, &cnn.conv5])
    {
        let mut pooled: Option<Var> = None;
        for start in 0..=padded.len() - width {
            let window = t.concat(&padded[start..start + width])?;
            let scored = conv.apply(t, window)?;
            let features = t.relu(scored)?;
            pooled = Some(match pooled {
                None => features,
                Some(prev) => elementwise_max(t, prev, features)?,
            });
        }
        pooled_blocks.push(pooled.expect("at least one window after padding"));
    }
    let joined = t.concat(&pooled_blocks)?;
    let raw = cnn.out.apply(t, joined)?;
    t.scale(raw, crate::model::READOUT_GAIN)
}

/// Classifies discrete token ids (each embedded by row lookup).
pub fn classify_tokens(
    t: &mut Tape,
    cnn: &TextCnnVars,
    embedding: Var,
    ids: &[u32],
) -> Result<Var> {
    let mut reps = Vec::with_capacity(ids.len());
    for &id in ids {
        reps.push(t.row(embedding, id as usize)?);
    }
    classify_reps(t, cnn, embedding, reps)
}

/// Classifies a relaxed sequence: each step's representation is the
/// probability-weighted average of embedding rows.
pub fn classify_soft(
    t: &mut Tape,
    cnn: &TextCnnVars,
    embedding: Var,
    probs: &[Var],
) -> Result<Var> {
    let mut reps = Vec::with_capacity(probs.len());
    for &u in probs {
        reps.push(t.matmul(u, embedding)?);
    }
    classify_reps(t, cnn, embedding, reps)
}
