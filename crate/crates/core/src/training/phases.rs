//! The three-phase schedule: language-model pretraining, classifier
//! pretraining, and joint generator training with the pretrained parts
//! frozen. Phases chain through checkpoints on disk, so running them
//! in one process or as separate invocations produces identical bytes.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_corpus, Split, StyleLabel, Vocabulary};
use crate::error::{Error, Result};
use crate::lexical::{EmbeddingTable, TagLexicon};
use crate::model::{
    classify_soft, classify_tokens, group_of, GumbelNoise, Model, ModelDims, ParamGroup,
    SoftDecodeOpts,
};
use crate::tensor::{Adam, Rng, Tape, Tensor};
use crate::training::checkpoint::{Checkpoint, PhaseFlags};
use crate::training::config::{LossWeights, TrainConfig};
use crate::training::loss::{classifier_pretrain_loss, joint_sentence_loss, lm_pretrain_loss};
use crate::training::prep::{build_glove_vocab, prepare_corpus, GloveVocab, PreparedSentence};

/// Probability that a token is hidden from the feedback classifier during
/// its pretraining. See `classifier_epoch` for why this matters.
const CLASSIFIER_WORD_DROPOUT: f64 = 0.2;

/// One stage of the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Lm,
    Classifier,
    Joint,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Lm => "lm",
            Phase::Classifier => "classifier",
            Phase::Joint => "joint",
        }
    }

    pub fn parse(s: &str) -> Result<Phase> {
        match s {
            "lm" => Ok(Phase::Lm),
            "classifier" => Ok(Phase::Classifier),
            "joint" => Ok(Phase::Joint),
            other => Err(Error::contract(format!(
                "unknown phase {other:?}; expected lm, classifier, or joint"
            ))),
        }
    }
}

/// Corpora, vocabulary, and lexical resources loaded from the data
/// directory and prepared for training.
pub struct LoadedData {
    pub vocab: Vocabulary,
    pub lexicon: TagLexicon,
    pub table: EmbeddingTable,
    pub glove: GloveVocab,
    /// Train split per style, indexed by `StyleLabel::index()`.
    pub train: [Vec<PreparedSentence>; 2],
    /// Validation split per style, same indexing.
    pub valid: [Vec<PreparedSentence>; 2],
}

fn style_prefix(style: StyleLabel) -> &'static str {
    match style {
        StyleLabel::X => "x",
        StyleLabel::Y => "y",
    }
}

/// Reads the corpus files, builds the vocabulary from the training split
/// only, and precomputes per-sentence noun data.
pub fn load_data(config: &TrainConfig) -> Result<LoadedData> {
    let dir = &config.paths.data_dir;
    let load = |style: StyleLabel, split: Split| {
        let path = dir.join(format!("{}.{}.txt", style_prefix(style), split.name()));
        load_corpus(&path, style, split)
    };
    let train_x = load(StyleLabel::X, Split::Train)?;
    let train_y = load(StyleLabel::Y, Split::Train)?;
    for corpus in [&train_x, &train_y] {
        if corpus.sentences.is_empty() {
            return Err(Error::contract(format!(
                "training corpus for style {} is empty",
                style_prefix(corpus.style)
            )));
        }
    }
    let valid_x = load(StyleLabel::X, Split::Valid)?;
    let valid_y = load(StyleLabel::Y, Split::Valid)?;

    let vocab = Vocabulary::build(
        train_x.sentences.iter().chain(train_y.sentences.iter()),
        config.min_count,
    );
    let lexicon = TagLexicon::load(&dir.join("lexicon.tsv"))?;
    let table = EmbeddingTable::load(&dir.join("embeddings.txt"))?;
    let glove = build_glove_vocab(&vocab, &lexicon, &table);

    let prep = |corpus: &crate::data::TokenCorpus| prepare_corpus(corpus, &vocab, &lexicon, &table);
    let train = [prep(&train_x)?, prep(&train_y)?];
    let valid = [prep(&valid_x)?, prep(&valid_y)?];
    Ok(LoadedData {
        vocab,
        lexicon,
        table,
        glove,
        train,
        valid,
    })
}

/// One training-log line; the noun term is reported both raw (as
/// optimized) and per-input-noun normalized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogLine {
    pub epoch: usize,
    pub step: usize,
    pub tau: f64,
    #[serde(rename = "L_res")]
    pub res: f64,
    #[serde(rename = "L_class")]
    pub class: f64,
    #[serde(rename = "L_pos")]
    pub pos: f64,
    #[serde(rename = "L_lm")]
    pub lm: f64,
    #[serde(rename = "L_total")]
    pub total: f64,
    #[serde(rename = "L_pos_norm")]
    pub pos_norm: f64,
}

struct TrainLogger {
    out: BufWriter<fs::File>,
    path: PathBuf,
}

impl TrainLogger {
    /// Opens the log; the first phase truncates, later phases append, so
    /// a full run leaves one file covering all phases.
    fn open(path: &Path, truncate: bool) -> Result<TrainLogger> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let mut opts = fs::OpenOptions::new();
        opts.create(true);
        if truncate {
            opts.write(true).truncate(true);
        } else {
            opts.append(true);
        }
        let file = opts.open(path).map_err(|e| Error::io(path, e))?;
        Ok(TrainLogger {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        })
    }

    fn log(&mut self, line: &LogLine) -> Result<()> {
        serde_json::to_writer(&mut self.out, line)
            .map_err(|e| Error::contract(format!("could not serialize log line: {e}")))?;
        self.out
            .write_all(b"\n")
            .map_err(|e| Error::io(&self.path, e))
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.flush()
    }
}

/// Balanced step ranges: each step takes the same index range from both
/// style corpora, so every batch holds equally many X and Y sentences.
fn balanced_steps(nx: usize, ny: usize, batch_size: usize) -> Vec<(usize, usize)> {
    let half = batch_size / 2;
    let n = nx.min(ny);
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + half).min(n);
        out.push((start, end));
        start = end;
    }
    out
}

fn shuffled_indices(rng: &mut Rng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    idx
}

fn group_params<'m>(
    model: &'m mut Model,
    groups: &[ParamGroup],
) -> Vec<(&'m str, &'m mut Tensor)> {
    model
        .named_tensors_mut()
        .into_iter()
        .filter(|(name, _)| groups.contains(&group_of(name)))
        .map(|(name, tensor)| (name as &str, tensor))
        .collect()
}

/// Result of one completed phase.
#[derive(Debug)]
pub struct PhaseOutcome {
    pub phase: Phase,
    /// The phase's final checkpoint.
    pub checkpoint: PathBuf,
    /// Held-out accuracy after the classifier phase, as
    /// (feedback classifier, evaluation classifier).
    pub held_out_accuracy: Option<(f64, f64)>,
}

struct Trainer<'a> {
    config: &'a TrainConfig,
    data: &'a LoadedData,
    model: Model,
    flags: PhaseFlags,
    logger: TrainLogger,
    root: Rng,
    ckpt_dir: PathBuf,
}

impl Trainer<'_> {
    fn save_checkpoint(&self, name: &str, epoch: usize) -> Result<PathBuf> {
        let mut config = self.config.clone();
        config.dims = self.model.dims.clone();
        let ckpt = Checkpoint {
            config,
            epoch,
            flags: self.flags,
            vocab: self.data.vocab.clone(),
            model: self.model.clone(),
        };
        let path = self.ckpt_dir.join(name);
        ckpt.save(&path)?;
        Ok(path)
    }

    /// Runs one epoch body; if it fails on a non-finite value, the current
    /// parameters are dumped next to the regular checkpoints for
    /// postmortem inspection.
    fn guarded_epoch(
        &mut self,
        phase: Phase,
        epoch: usize,
        body: impl FnOnce(&mut Self) -> Result<()>,
    ) -> Result<()> {
        let outcome = body(self);
        // Flush even on failure so the log shows how far the epoch got.
        self.logger.flush()?;
        match outcome {
            Ok(()) => {
                self.save_checkpoint(&format!("{}-epoch-{epoch}.ckpt", phase.name()), epoch)?;
                Ok(())
            }
            Err(e) => {
                if matches!(e, Error::NonFinite { .. }) {
                    let _ = self.save_checkpoint(&format!("{}-abort.ckpt", phase.name()), epoch);
                }
                Err(e)
            }
        }
    }

    fn run_lm(&mut self) -> Result<PathBuf> {
        let mut adam = Adam::default();
        let epochs = self.config.epochs.lm;
        for epoch in 0..epochs {
            self.guarded_epoch(Phase::Lm, epoch, |s| s.lm_epoch(epoch, &mut adam))?;
        }
        self.flags.lm = true;
        self.save_checkpoint("lm-final.ckpt", epochs.saturating_sub(1))
    }

    fn lm_epoch(&mut self, epoch: usize, adam: &mut Adam) -> Result<()> {
        let mut rng = self.root.derive(&format!("lm/epoch/{epoch}"));
        let order_x = shuffled_indices(&mut rng, self.data.train[0].len());
        let order_y = shuffled_indices(&mut rng, self.data.train[1].len());
        let steps = balanced_steps(order_x.len(), order_y.len(), self.config.batch_size);
        for (step, &(lo, hi)) in steps.iter().enumerate() {
            let batch_n = 2 * (hi - lo);
            let inv = 1.0 / batch_n as f64;
            self.model.zero_grads();
            let mut sum = 0.0;
            for (style, order) in [(StyleLabel::X, &order_x), (StyleLabel::Y, &order_y)] {
                for &i in &order[lo..hi] {
                    let sent = &self.data.train[style.index()][i];
                    let mut tape = Tape::new();
                    let vars = self.model.bind(&mut tape)?;
                    let loss = lm_pretrain_loss(&mut tape, &vars, sent, style)?;
                    sum += tape.scalar_value(loss);
                    tape.backward(loss)?;
                    self.model.accumulate_grads(&tape, &vars, inv)?;
                }
            }
            adam.step(
                group_params(&mut self.model, &[ParamGroup::LanguageModel]),
                self.config.learning_rate,
            )?;
            let mean = sum * inv;
            self.logger.log(&LogLine {
                epoch,
                step,
                tau: self.config.temperature.initial,
                res: 0.0,
                class: 0.0,
                pos: 0.0,
                lm: mean,
                total: mean,
                pos_norm: 0.0,
            })?;
        }
        Ok(())
    }

    fn run_classifier(&mut self) -> Result<(PathBuf, (f64, f64))> {
        let mut adam = Adam::default();
        let epochs = self.config.epochs.classifier;
        for epoch in 0..epochs {
            self.guarded_epoch(Phase::Classifier, epoch, |s| {
                s.classifier_epoch(epoch, &mut adam)
            })?;
        }
        self.flags.classifier = true;
        let path = self.save_checkpoint("classifier-final.ckpt", epochs.saturating_sub(1))?;
        let feedback = classifier_accuracy(&self.model, self.data, false)?;
        let eval = classifier_accuracy(&self.model, self.data, true)?;
        Ok((path, (feedback, eval)))
    }

    fn classifier_epoch(&mut self, epoch: usize, adam: &mut Adam) -> Result<()> {
        let mut rng = self.root.derive(&format!("classifier/epoch/{epoch}"));
        let mut drop_rng = self.root.derive(&format!("classifier/dropout/{epoch}"));
        let order_x = shuffled_indices(&mut rng, self.data.train[0].len());
        let order_y = shuffled_indices(&mut rng, self.data.train[1].len());
        let steps = balanced_steps(order_x.len(), order_y.len(), self.config.batch_size);
        for (step, &(lo, hi)) in steps.iter().enumerate() {
            // Each drawn pair contributes an X sentence, a Y sentence, and
            // one mixture example built from the two.
            let batch_n = 3 * (hi - lo);
            let inv = 1.0 / batch_n as f64;
            self.model.zero_grads();
            let mut sum = 0.0;
            for (style, order) in [(StyleLabel::X, &order_x), (StyleLabel::Y, &order_y)] {
                for &i in &order[lo..hi] {
                    let sent = &self.data.train[style.index()][i];
                    let ids = &sent.ids.ids[1..sent.ids.true_length];
                    // Word-dropout view for the feedback classifier: with
                    // the style-bearing word occasionally missing under
                    // both labels, style-free text lands near even odds,
                    // so a transfer that merely deletes the source style
                    // word keeps paying feedback loss until it inserts a
                    // target-style word instead.
                    let kept: Vec<u32> = ids
                        .iter()
                        .copied()
                        .filter(|_| drop_rng.uniform01() >= CLASSIFIER_WORD_DROPOUT)
                        .collect();
                    let fb_ids: &[u32] = if kept.is_empty() { ids } else { &kept };
                    let mut tape = Tape::new();
                    let vars = self.model.bind(&mut tape)?;
                    let (fb, ev) = classifier_pretrain_loss(&mut tape, &vars, fb_ids, ids, style)?;
                    let loss = tape.add(fb, ev)?;
                    sum += tape.scalar_value(loss);
                    tape.backward(loss)?;
                    self.model.accumulate_grads(&tape, &vars, inv)?;
                }
            }
            // Mixture view for the feedback classifier: a convex blend of an
            // X and a Y sentence, labelled by its blend fraction. The relaxed
            // decodes this classifier scores later are exactly such soft
            // sequences, and training only on one-hot rows leaves that space
            // free for the generator to exploit instead of changing words.
            let v = self.model.dims.vocab;
            for k in lo..hi {
                let sx = &self.data.train[0][order_x[k]];
                let sy = &self.data.train[1][order_y[k]];
                let ix = &sx.ids.ids[1..sx.ids.true_length];
                let iy = &sy.ids.ids[1..sy.ids.true_length];
                let len = ix.len().min(iy.len());
                let lambda = drop_rng.uniform01();
                let mut tape = Tape::new();
                let vars = self.model.bind(&mut tape)?;
                let mut rows = Vec::with_capacity(len);
                for pos in 0..len {
                    let mut row = vec![0.0; v];
                    row[ix[pos] as usize] += lambda;
                    row[iy[pos] as usize] += 1.0 - lambda;
                    rows.push(tape.leaf(&[v], &row)?);
                }
                let logits = classify_soft(
                    &mut tape,
                    &vars.classifier,
                    vars.classifier_embedding,
                    &rows,
                )?;
                let target = tape.leaf(&[2], &[lambda, 1.0 - lambda])?;
                let loss = tape.cross_entropy(logits, target)?;
                sum += tape.scalar_value(loss);
                tape.backward(loss)?;
                self.model.accumulate_grads(&tape, &vars, inv)?;
            }
            adam.step(
                group_params(
                    &mut self.model,
                    &[ParamGroup::Classifier, ParamGroup::EvalClassifier],
                ),
                self.config.learning_rate,
            )?;
            let mean = sum * inv;
            self.logger.log(&LogLine {
                epoch,
                step,
                tau: self.config.temperature.initial,
                res: 0.0,
                class: mean,
                pos: 0.0,
                lm: 0.0,
                total: mean,
                pos_norm: 0.0,
            })?;
        }
        Ok(())
    }

    fn run_joint(&mut self) -> Result<PathBuf> {
        let mut adam = Adam::default();
        let epochs = self.config.epochs.joint;
        for epoch in 0..epochs {
            self.guarded_epoch(Phase::Joint, epoch, |s| s.joint_epoch(epoch, &mut adam))?;
        }
        self.flags.joint = true;
        self.save_checkpoint("joint-final.ckpt", epochs.saturating_sub(1))
    }

    fn joint_epoch(&mut self, epoch: usize, adam: &mut Adam) -> Result<()> {
        let tau = self.config.temperature.tau(epoch);
        let opts = SoftDecodeOpts::new(tau);
        // During the warmup window only the reconstruction term is active,
        // so the auto-encoder establishes copying before the relaxed-path
        // terms start reshaping its output.
        let off = LossWeights {
            classifier: 0.0,
            pos: 0.0,
            lm: 0.0,
        };
        let weights = if epoch < self.config.aux_warmup_epochs {
            &off
        } else {
            &self.config.weights
        };
        let mut rng = self.root.derive(&format!("joint/epoch/{epoch}"));
        let mut noise = GumbelNoise::Seeded(self.root.derive(&format!("joint/noise/{epoch}")));
        let order_x = shuffled_indices(&mut rng, self.data.train[0].len());
        let order_y = shuffled_indices(&mut rng, self.data.train[1].len());
        let steps = balanced_steps(order_x.len(), order_y.len(), self.config.batch_size);
        for (step, &(lo, hi)) in steps.iter().enumerate() {
            let batch_n = 2 * (hi - lo);
            let inv = 1.0 / batch_n as f64;
            self.model.zero_grads();
            let (mut res, mut class, mut pos, mut lm, mut pos_norm) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (style, order) in [(StyleLabel::X, &order_x), (StyleLabel::Y, &order_y)] {
                for &i in &order[lo..hi] {
                    let sent = &self.data.train[style.index()][i];
                    let mut tape = Tape::new();
                    let vars = self.model.bind(&mut tape)?;
                    let parts = joint_sentence_loss(
                        &mut tape,
                        &vars,
                        sent,
                        style,
                        &self.data.glove,
                        weights,
                        &opts,
                        &mut noise,
                    )?;
                    res += tape.scalar_value(parts.res);
                    class += tape.scalar_value(parts.class);
                    pos += tape.scalar_value(parts.pos);
                    lm += tape.scalar_value(parts.lm);
                    if let Some(record) = &parts.pos_record {
                        pos_norm += record.normalized;
                    }
                    tape.backward(parts.total)?;
                    self.model.accumulate_grads(&tape, &vars, inv)?;
                }
            }
            adam.step(
                group_params(&mut self.model, &[ParamGroup::Generator]),
                self.config.learning_rate,
            )?;
            let (res, class, pos, lm) = (res * inv, class * inv, pos * inv, lm * inv);
            let total =
                res + weights.classifier * class + weights.pos * pos + weights.lm * lm;
            self.logger.log(&LogLine {
                epoch,
                step,
                tau,
                res,
                class,
                pos,
                lm,
                total,
                pos_norm: pos_norm * inv,
            })?;
        }
        Ok(())
    }
}

/// Argmax style prediction accuracy of one classifier over the validation
/// split.
fn classifier_accuracy(model: &Model, data: &LoadedData, use_eval: bool) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for style in [StyleLabel::X, StyleLabel::Y] {
        for sent in &data.valid[style.index()] {
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape)?;
            let ids = &sent.ids.ids[1..sent.ids.true_length];
            let logits = if use_eval {
                classify_tokens(&mut tape, &vars.eval_classifier, vars.eval_embedding, ids)?
            } else {
                classify_tokens(&mut tape, &vars.classifier, vars.classifier_embedding, ids)?
            };
            let v = tape.value(logits);
            let predicted = if v[0] >= v[1] {
                StyleLabel::X
            } else {
                StyleLabel::Y
            };
            correct += usize::from(predicted == style);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::contract(
            "cannot compute held-out accuracy on an empty validation split",
        ));
    }
    Ok(correct as f64 / total as f64)
}

fn require_checkpoint(path: &Path, hint: &str) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::contract(format!(
            "missing prerequisite checkpoint {}; {hint}",
            path.display()
        )));
    }
    Checkpoint::load(path)
}

fn check_vocab(ckpt: &Vocabulary, data: &Vocabulary) -> Result<()> {
    if ckpt.tokens() != data.tokens() {
        return Err(Error::contract(format!(
            "training data vocabulary ({} tokens) does not match the checkpoint vocabulary \
             ({} tokens); regenerate the data or restart from the lm phase",
            data.len(),
            ckpt.len()
        )));
    }
    Ok(())
}

fn check_dims(requested: &ModelDims, loaded: &ModelDims) -> Result<()> {
    let same = (requested.vocab == 0 || requested.vocab == loaded.vocab)
        && requested.embedding == loaded.embedding
        && requested.style == loaded.style
        && requested.hidden == loaded.hidden
        && requested.attention == loaded.attention
        && requested.clf_filters == loaded.clf_filters
        && requested.lm_hidden == loaded.lm_hidden;
    if !same {
        return Err(Error::contract(
            "model dimensions in the config do not match the checkpoint; \
             pass the same config used for earlier phases",
        ));
    }
    Ok(())
}

/// Runs one phase: loads data, initializes the model (phase `lm`) or
/// loads the previous phase's final checkpoint, trains, and writes
/// per-epoch plus final checkpoints. The training log is truncated by
/// the `lm` phase and appended to by the others.
pub fn run_phase(config: &TrainConfig, phase: Phase) -> Result<PhaseOutcome> {
    config.validate()?;
    let data = load_data(config)?;
    let ckpt_dir = config.paths.checkpoint_dir.clone();

    let (model, flags) = match phase {
        Phase::Lm => {
            let mut dims = config.dims.clone();
            dims.vocab = data.vocab.len();
            dims.validate()?;
            let rng = Rng::new(config.seed).derive("model");
            (Model::init(dims, &rng)?, PhaseFlags::default())
        }
        Phase::Classifier => {
            let ckpt = require_checkpoint(
                &ckpt_dir.join("lm-final.ckpt"),
                "run --phase lm first",
            )?;
            if !ckpt.flags.lm {
                return Err(Error::contract(
                    "the language-model phase did not finish in this checkpoint; rerun --phase lm",
                ));
            }
            check_vocab(&ckpt.vocab, &data.vocab)?;
            check_dims(&config.dims, &ckpt.model.dims)?;
            (ckpt.model, ckpt.flags)
        }
        Phase::Joint => {
            let ckpt = require_checkpoint(
                &ckpt_dir.join("classifier-final.ckpt"),
                "run --phase classifier first",
            )?;
            if !(ckpt.flags.lm && ckpt.flags.classifier) {
                return Err(Error::contract(
                    "the classifier phase did not finish in this checkpoint; rerun --phase classifier",
                ));
            }
            check_vocab(&ckpt.vocab, &data.vocab)?;
            check_dims(&config.dims, &ckpt.model.dims)?;
            (ckpt.model, ckpt.flags)
        }
    };

    let logger = TrainLogger::open(&config.paths.log_file, phase == Phase::Lm)?;
    let mut trainer = Trainer {
        config,
        data: &data,
        model,
        flags,
        logger,
        root: Rng::new(config.seed),
        ckpt_dir,
    };
    let (checkpoint, held_out_accuracy) = match phase {
        Phase::Lm => (trainer.run_lm()?, None),
        Phase::Classifier => {
            let (path, acc) = trainer.run_classifier()?;
            (path, Some(acc))
        }
        Phase::Joint => (trainer.run_joint()?, None),
    };
    trainer.logger.finish()?;
    Ok(PhaseOutcome {
        phase,
        checkpoint,
        held_out_accuracy,
    })
}

/// Runs all three phases in order, chaining through the on-disk
/// checkpoints exactly as three separate invocations would.
pub fn run_all(config: &TrainConfig) -> Result<Vec<PhaseOutcome>> {
    Ok(vec![
        run_phase(config, Phase::Lm)?,
        run_phase(config, Phase::Classifier)?,
        run_phase(config, Phase::Joint)?,
    ])
}
