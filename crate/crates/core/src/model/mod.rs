//! Model parameters and forward passes.
//!
//! Components: a style-conditioned GRU encoder, an attentional GRU decoder
//! whose relaxed output feeds back as soft embeddings, a convolutional
//! style classifier used for training feedback, an independent evaluation
//! classifier with its own embedding matrix, and a content-conditional GRU
//! language model.
//!
//! One word-embedding matrix is shared by the encoder, the decoder's soft
//! input, the feedback classifier, and the language model input. The
//! evaluation classifier deliberately owns a separate embedding so that
//! measurement stays independent of the parameters being optimized.
//!
//! Parameters live in plain [`Tensor`]s; each forward pass binds them onto
//! a fresh [`Tape`] and builds the graph per sentence.

use serde::{Deserialize, Serialize};

use crate::data::StyleLabel;
use crate::data::MAX_CONTENT_TOKENS;
use crate::error::{Error, Result};
use crate::lexical::EMBEDDING_DIM;
use crate::tensor::{Rng, Tape, Tensor, Var};

pub mod classifier;
pub mod gru;
pub mod lm;
pub mod seq;

pub use classifier::{classify_reps, classify_soft, classify_tokens, TextCnn, TextCnnVars};
pub use gru::{gru_step, Gru, GruVars};
pub use lm::{lm_init_state, lm_next, lm_teacher_nll, LmInput, LmStep, LmVars};
pub use seq::{
    attend, decode_soft, decode_teacher_forced, encode, greedy_decode, gumbel_softmax_step,
    Encoding, GumbelNoise, SoftDecodeOpts, SoftSequence, TeacherForced,
};

/// Convolution kernel widths of both classifiers.
pub const KERNEL_WIDTHS: [usize; 3] = [3, 4, 5];

/// Classifier inputs are left-padded with the PAD embedding to this length.
pub const MIN_CLASSIFIER_LEN: usize = 5;

/// Generation cap: content budget plus the EOS step.
pub const MAX_DECODE_STEPS: usize = MAX_CONTENT_TOKENS + 1;

/// Fixed multiplier on every readout layer's logits (decoder vocabulary
/// head, language-model head, both classifier heads). Those layers start
/// at zero and Adam moves each weight by at most the learning rate per
/// step, so in a short desk-scale run the raw logits stay within a few
/// hundredths of the origin; the gain lets that small displacement still
/// express confident distributions. Inference applies the same constant,
/// so checkpoints are unaffected.
pub const READOUT_GAIN: f64 = 32.0;

/// Layer sizes. `vocab` comes from the corpus; the rest default to desk
/// scale so the full pipeline runs in minutes on one CPU core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDims {
    /// Vocabulary size including the four reserved tokens; filled in from
    /// the training corpus when zero.
    pub vocab: usize,
    pub embedding: usize,
    pub style: usize,
    pub hidden: usize,
    pub attention: usize,
    /// Filters per kernel width in each classifier.
    pub clf_filters: usize,
    pub lm_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            vocab: 0,
            embedding: 24,
            style: 16,
            hidden: 48,
            attention: 24,
            clf_filters: 64,
            lm_hidden: 32,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 5 {
            return Err(Error::contract(format!(
                "vocab size {} leaves no room beyond the 4 reserved tokens",
                self.vocab
            )));
        }
        for (name, v) in [
            ("embedding", self.embedding),
            ("style", self.style),
            ("hidden", self.hidden),
            ("attention", self.attention),
            ("clf_filters", self.clf_filters),
            ("lm_hidden", self.lm_hidden),
        ] {
            if v == 0 {
                return Err(Error::contract(format!("dimension {name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Dense layer y = W·x + b.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    fn xavier(rng: &mut Rng, out_dim: usize, in_dim: usize) -> Linear {
        Linear {
            w: uniform(rng, &[out_dim, in_dim], xavier_bound(in_dim, out_dim)),
            b: Tensor::zeros(&[out_dim]),
        }
    }

    /// All-zero layer: outputs start at the origin so early training signal
    /// is not fighting random logits.
    fn zeroed(out_dim: usize, in_dim: usize) -> Linear {
        Linear {
            w: Tensor::zeros(&[out_dim, in_dim]),
            b: Tensor::zeros(&[out_dim]),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

impl LinearVars {
    pub fn apply(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let wx = t.matmul(self.w, x)?;
        t.add(wx, self.b)
    }
}

/// Additive attention: score(q, s) = v · tanh(W·[q; s] + b).
#[derive(Debug, Clone)]
pub struct Attention {
    pub w: Tensor,
    pub b: Tensor,
    pub v: Tensor,
}

impl Attention {
    fn init(rng: &mut Rng, dim: usize, in_dim: usize) -> Attention {
        Attention {
            w: uniform(rng, &[dim, in_dim], xavier_bound(in_dim, dim)),
            b: Tensor::zeros(&[dim]),
            v: uniform(rng, &[dim], xavier_bound(dim, 1)),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub w: Var,
    pub b: Var,
    pub v: Var,
}

/// Which training phase owns a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Encoder, decoder, attention, shared embedding, style vectors.
    Generator,
    /// Feedback classifier giving gradients to the generator.
    Classifier,
    /// Held-out measuring classifier, never part of the joint objective.
    EvalClassifier,
    /// Content-conditional language model.
    LanguageModel,
    /// Set once from corpus statistics; no phase ever steps it.
    Fixed,
}

pub fn group_of(name: &str) -> ParamGroup {
    if name == "copy_gate" {
        ParamGroup::Fixed
    } else if name.starts_with("eval_classifier.") {
        ParamGroup::EvalClassifier
    } else if name.starts_with("classifier.") {
        ParamGroup::Classifier
    } else if name.starts_with("lm.") {
        ParamGroup::LanguageModel
    } else {
        ParamGroup::Generator
    }
}

/// All trainable parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub dims: ModelDims,
    /// Shared word embeddings, vocab x embedding.
    pub embedding: Tensor,
    pub style_x: Tensor,
    pub style_y: Tensor,
    pub encoder: Gru,
    /// Projects the content representation into the decoder's start state.
    pub dec_init: Linear,
    pub decoder: Gru,
    pub attention: Attention,
    pub dec_out: Linear,
    /// The feedback classifier's own word embeddings, trained with it and
    /// frozen afterwards so the generator cannot shift its input space
    /// instead of changing its outputs.
    pub classifier_embedding: Tensor,
    pub classifier: TextCnn,
    pub eval_embedding: Tensor,
    pub eval_classifier: TextCnn,
    /// The language model's own word embeddings, trained with it and
    /// frozen afterwards so later phases cannot shift its input space.
    pub lm_embedding: Tensor,
    /// Builds h from [noun centroid; style vector].
    pub lm_init: Linear,
    pub lm: Gru,
    pub lm_out: Linear,
    /// Per-token multiplier on the embedding half of each encoder
    /// annotation. Tokens whose corpus frequency is heavily one-sided
    /// between the styles are style carriers: gating them out of the
    /// copyable content makes the style-conditioned output block the only
    /// channel that can emit them, which is what lets flipping the style
    /// vector swap them. Set from corpus statistics before training and
    /// never optimized.
    pub copy_gate: Tensor,
}

fn uniform(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.uniform_in(-bound, bound)).collect();
    Tensor::from_vec(shape, data).expect("shape/product computed together")
}

fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl Model {
    pub fn init(dims: ModelDims, rng: &Rng) -> Result<Model> {
        dims.validate()?;
        let v = dims.vocab;
        let e = dims.embedding;
        let s = dims.style;
        let h = dims.hidden;

        let mut r_emb = rng.derive("init/embedding");
        let mut r_style = rng.derive("init/style");
        let mut r_enc = rng.derive("init/encoder");
        let mut r_dec = rng.derive("init/decoder");
        let mut r_clf = rng.derive("init/classifier");
        let mut r_eval = rng.derive("init/eval_classifier");
        let mut r_lm = rng.derive("init/lm");

        let embedding = uniform(&mut r_emb, &[v, e], 0.1);

        // The output head starts as a content copier: the block of columns
        // that reads the embedding part of the attention context is set to
        // a scaled copy of the embedding matrix, so whichever token the
        // decoder attends to is already its most likely output (the scale
        // puts a sharply attended token near probability one under the
        // readout gain). Training then only has to refine alignment and
        // style-dependent word choice instead of discovering copying from
        // scratch.
        let mut dec_out = Linear::zeroed(v, e + 2 * h + s);
        {
            let row = e + 2 * h + s;
            let w = dec_out.w.data_mut();
            for tok in 0..v {
                for j in 0..e {
                    w[tok * row + h + j] = 3.0 * embedding.data()[tok * e + j];
                }
            }
        }

        Ok(Model {
            dims,
            embedding,
            // A wide gap between the two style vectors gives the decoder a
            // strong conditioning signal from the very first joint step.
            style_x: uniform(&mut r_style, &[s], 0.5),
            style_y: uniform(&mut r_style, &[s], 0.5),
            encoder: Gru::init(&mut r_enc, e + s, h),
            dec_init: Linear::xavier(&mut r_dec, h, h),
            decoder: Gru::init(&mut r_dec, 2 * e + h, h),
            attention: Attention::init(&mut r_dec, dims.attention, e + 2 * h),
            dec_out,
            classifier_embedding: uniform(&mut r_clf, &[v, e], 0.02),
            classifier: TextCnn::init(&mut r_clf, e, dims.clf_filters),
            eval_embedding: uniform(&mut r_eval, &[v, e], 0.02),
            eval_classifier: TextCnn::init(&mut r_eval, e, dims.clf_filters),
            lm_embedding: uniform(&mut r_lm, &[v, e], 0.1),
            lm_init: Linear::xavier(&mut r_lm, dims.lm_hidden, EMBEDDING_DIM + s),
            lm: Gru::init(&mut r_lm, e, dims.lm_hidden),
            lm_out: Linear::zeroed(v, dims.lm_hidden + e + EMBEDDING_DIM + s),
            copy_gate: Tensor::from_vec(&[v], vec![1.0; v]).expect("vector shape"),
        })
    }

    /// Overwrites the copy gate (one multiplier per vocabulary token).
    pub fn set_copy_gate(&mut self, gate: &[f64]) -> Result<()> {
        if gate.len() != self.dims.vocab {
            return Err(Error::contract(format!(
                "copy gate has {} entries for a vocabulary of {}",
                gate.len(),
                self.dims.vocab
            )));
        }
        self.copy_gate.data_mut().copy_from_slice(gate);
        Ok(())
    }

    /// Named views of every parameter, in the canonical checkpoint order.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        let Model {
            dims: _,
            embedding,
            style_x,
            style_y,
            encoder,
            dec_init,
            decoder,
            attention,
            dec_out,
            classifier_embedding,
            classifier,
            eval_embedding,
            eval_classifier,
            lm_embedding,
            lm_init,
            lm,
            lm_out,
            copy_gate,
        } = self;
        let mut out: Vec<(&'static str, &Tensor)> = vec![
            ("embedding.weight", embedding),
            ("style.x", style_x),
            ("style.y", style_y),
            ("encoder.w_ih", &encoder.w_ih),
            ("encoder.w_hh", &encoder.w_hh),
            ("encoder.b_ih", &encoder.b_ih),
            ("encoder.b_hh", &encoder.b_hh),
            ("decoder.init.w", &dec_init.w),
            ("decoder.init.b", &dec_init.b),
            ("decoder.w_ih", &decoder.w_ih),
            ("decoder.w_hh", &decoder.w_hh),
            ("decoder.b_ih", &decoder.b_ih),
            ("decoder.b_hh", &decoder.b_hh),
            ("decoder.attn.w", &attention.w),
            ("decoder.attn.b", &attention.b),
            ("decoder.attn.v", &attention.v),
            ("decoder.out.w", &dec_out.w),
            ("decoder.out.b", &dec_out.b),
        ];
        out.push(("classifier.embedding", classifier_embedding));
        out.extend(classifier.named("classifier"));
        out.push(("eval_classifier.embedding", eval_embedding));
        out.extend(eval_classifier.named("eval_classifier"));
        out.extend([
            ("lm.embedding", lm_embedding),
            ("lm.init.w", &lm_init.w),
            ("lm.init.b", &lm_init.b),
            ("lm.w_ih", &lm.w_ih),
            ("lm.w_hh", &lm.w_hh),
            ("lm.b_ih", &lm.b_ih),
            ("lm.b_hh", &lm.b_hh),
            ("lm.out.w", &lm_out.w),
            ("lm.out.b", &lm_out.b),
        ]);
        out.push(("copy_gate", copy_gate));
        out
    }

    /// Mutable variant of [`Model::named_tensors`], same order.
    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let Model {
            dims: _,
            embedding,
            style_x,
            style_y,
            encoder,
            dec_init,
            decoder,
            attention,
            dec_out,
            classifier_embedding,
            classifier,
            eval_embedding,
            eval_classifier,
            lm_embedding,
            lm_init,
            lm,
            lm_out,
            copy_gate,
        } = self;
        let mut out: Vec<(&'static str, &mut Tensor)> = vec![
            ("embedding.weight", embedding),
            ("style.x", style_x),
            ("style.y", style_y),
            ("encoder.w_ih", &mut encoder.w_ih),
            ("encoder.w_hh", &mut encoder.w_hh),
            ("encoder.b_ih", &mut encoder.b_ih),
            ("encoder.b_hh", &mut encoder.b_hh),
            ("decoder.init.w", &mut dec_init.w),
            ("decoder.init.b", &mut dec_init.b),
            ("decoder.w_ih", &mut decoder.w_ih),
            ("decoder.w_hh", &mut decoder.w_hh),
            ("decoder.b_ih", &mut decoder.b_ih),
            ("decoder.b_hh", &mut decoder.b_hh),
            ("decoder.attn.w", &mut attention.w),
            ("decoder.attn.b", &mut attention.b),
            ("decoder.attn.v", &mut attention.v),
            ("decoder.out.w", &mut dec_out.w),
            ("decoder.out.b", &mut dec_out.b),
        ];
        out.push(("classifier.embedding", classifier_embedding));
        out.extend(classifier.named_mut("classifier"));
        out.push(("eval_classifier.embedding", eval_embedding));
        out.extend(eval_classifier.named_mut("eval_classifier"));
        out.extend([
            ("lm.embedding", lm_embedding),
            ("lm.init.w", &mut lm_init.w),
            ("lm.init.b", &mut lm_init.b),
            ("lm.w_ih", &mut lm.w_ih),
            ("lm.w_hh", &mut lm.w_hh),
            ("lm.b_ih", &mut lm.b_ih),
            ("lm.b_hh", &mut lm.b_hh),
            ("lm.out.w", &mut lm_out.w),
            ("lm.out.b", &mut lm_out.b),
        ]);
        out.push(("copy_gate", copy_gate));
        out
    }

    /// Copies every parameter onto a tape as leaves, in canonical order.
    pub fn bind(&self, t: &mut Tape) -> Result<ModelVars> {
        let mut vars = Vec::with_capacity(self.named_tensors().len());
        for (_, tensor) in self.named_tensors() {
            vars.push(t.leaf_tensor(tensor)?);
        }
        let mut it = vars.into_iter();
        let mut next = || it.next().expect("var count matches tensor count");
        let out = ModelVars {
            embedding: next(),
            style_x: next(),
            style_y: next(),
            encoder: GruVars {
                w_ih: next(),
                w_hh: next(),
                b_ih: next(),
                b_hh: next(),
            },
            dec_init: LinearVars { w: next(), b: next() },
            decoder: GruVars {
                w_ih: next(),
                w_hh: next(),
                b_ih: next(),
                b_hh: next(),
            },
            attention: AttentionVars {
                w: next(),
                b: next(),
                v: next(),
            },
            dec_out: LinearVars { w: next(), b: next() },
            classifier_embedding: next(),
            classifier: TextCnnVars {
                conv3: LinearVars { w: next(), b: next() },
                conv4: LinearVars { w: next(), b: next() },
                conv5: LinearVars { w: next(), b: next() },
                out: LinearVars { w: next(), b: next() },
            },
            eval_embedding: next(),
            eval_classifier: TextCnnVars {
                conv3: LinearVars { w: next(), b: next() },
                conv4: LinearVars { w: next(), b: next() },
                conv5: LinearVars { w: next(), b: next() },
                out: LinearVars { w: next(), b: next() },
            },
            lm: LmVars {
                emb: next(),
                init: LinearVars { w: next(), b: next() },
                gru: GruVars {
                    w_ih: next(),
                    w_hh: next(),
                    b_ih: next(),
                    b_hh: next(),
                },
                out: LinearVars { w: next(), b: next() },
            },
            copy_gate: next(),
        };
        debug_assert!(it.next().is_none(), "all bound vars consumed");
        Ok(out)
    }

    /// Adds `scale` times each tape gradient into the matching tensor's
    /// gradient buffer.
    pub fn accumulate_grads(&mut self, tape: &Tape, vars: &ModelVars, scale: f64) -> Result<()> {
        let var_list = vars.in_order();
        for ((name, tensor), var) in self.named_tensors_mut().into_iter().zip(var_list) {
            tape.accumulate_grad(var, scale, tensor).map_err(|e| {
                Error::contract(format!("gradient accumulation failed for {name}: {e}"))
            })?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for (_, tensor) in self.named_tensors_mut() {
            tensor.zero_grad();
        }
    }
}

/// Tape handles for every parameter, produced by [`Model::bind`].
#[derive(Debug, Clone, Copy)]
pub struct ModelVars {
    pub embedding: Var,
    pub style_x: Var,
    pub style_y: Var,
    pub encoder: GruVars,
    pub dec_init: LinearVars,
    pub decoder: GruVars,
    pub attention: AttentionVars,
    pub dec_out: LinearVars,
    pub classifier_embedding: Var,
    pub classifier: TextCnnVars,
    pub eval_embedding: Var,
    pub eval_classifier: TextCnnVars,
    pub lm: LmVars,
    pub copy_gate: Var,
}

impl ModelVars {
    pub fn style(&self, label: StyleLabel) -> Var {
        match label {
            StyleLabel::X => self.style_x,
            StyleLabel::Y => self.style_y,
        }
    }

    /// Vars in the same canonical order as [`Model::named_tensors`].
    pub fn in_order(&self) -> Vec<Var> {
        let ModelVars {
            embedding,
            style_x,
            style_y,
            encoder,
            dec_init,
            decoder,
            attention,
            dec_out,
            classifier_embedding,
            classifier,
            eval_embedding,
            eval_classifier,
            lm,
            copy_gate,
        } = self;
        let gru = |g: &GruVars| [g.w_ih, g.w_hh, g.b_ih, g.b_hh];
        let lin = |l: &LinearVars| [l.w, l.b];
        let cnn = |c: &TextCnnVars| {
            let mut v = Vec::with_capacity(8);
            v.extend(lin(&c.conv3));
            v.extend(lin(&c.conv4));
            v.extend(lin(&c.conv5));
            v.extend(lin(&c.out));
            v
        };
        let mut out = Vec::with_capacity(46);
        out.push(*embedding);
        out.push(*style_x);
        out.push(*style_y);
        out.extend(gru(encoder));
        out.extend(lin(dec_init));
        out.extend(gru(decoder));
        out.extend([attention.w, attention.b, attention.v]);
        out.extend(lin(dec_out));
        out.push(*classifier_embedding);
        out.extend(cnn(classifier));
        out.push(*eval_embedding);
        out.extend(cnn(eval_classifier));
        out.push(lm.emb);
        out.extend(lin(&lm.init));
        out.extend(gru(&lm.gru));
        out.extend(lin(&lm.out));
        out.push(*copy_gate);
        out
    }
}

/// One-hot distribution over `n` entries as a tape leaf.
pub fn one_hot(t: &mut Tape, n: usize, id: u32) -> Result<Var> {
    if id as usize >= n {
        return Err(Error::contract(format!(
            "one-hot index {id} out of range for size {n}"
        )));
    }
    let mut data = vec![0.0; n];
    data[id as usize] = 1.0;
    t.leaf(&[n], &data)
}
