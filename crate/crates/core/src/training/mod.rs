//! Training: configuration, loss terms, checkpointing, and the
//! three-phase schedule (language model, classifiers, joint).

pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod phases;
pub mod prep;

pub use checkpoint::{Checkpoint, PhaseFlags};
pub use config::{DataPaths, LossWeights, PhaseEpochs, TemperatureSchedule, TrainConfig};
pub use loss::{
    classifier_feedback_loss, classifier_pretrain_loss, gamma, joint_sentence_loss,
    lm_generated_loss, lm_pretrain_loss, match_nouns, pos_distance, pos_loss_soft,
    reconstruction_loss, JointParts, NounMatch, PosDistance, SoftPos,
};
pub use phases::{load_data, run_all, run_phase, LoadedData, Phase, PhaseOutcome};
pub use prep::{build_glove_vocab, prepare_corpus, GloveVocab, PreparedSentence};
