//! Training configuration: hyperparameters, schedule, and file layout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelDims;

/// Weights of the three auxiliary loss terms; the reconstruction term
/// always has weight 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Style-classifier feedback term.
    pub classifier: f64,
    /// Noun-preservation (POS distance) term.
    pub pos: f64,
    /// Conditional language-model fluency term.
    pub lm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            classifier: 0.2,
            pos: 0.1,
            lm: 0.5,
        }
    }
}

/// Gumbel-softmax temperature: held at `initial` for `pretrain_epochs`
/// joint epochs, then multiplied by `decay` each epoch, never below
/// `floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemperatureSchedule {
    pub initial: f64,
    pub decay: f64,
    pub floor: f64,
    pub pretrain_epochs: usize,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        TemperatureSchedule {
            initial: 1.0,
            decay: 0.5,
            floor: 0.001,
            pretrain_epochs: 1,
        }
    }
}

impl TemperatureSchedule {
    /// Temperature for 0-based joint epoch `epoch`.
    pub fn tau(&self, epoch: usize) -> f64 {
        let steps = epoch.saturating_sub(self.pretrain_epochs);
        (self.initial * self.decay.powi(steps as i32)).max(self.floor)
    }
}

/// Epoch budget per phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseEpochs {
    pub lm: usize,
    pub classifier: usize,
    pub joint: usize,
}

impl Default for PhaseEpochs {
    fn default() -> Self {
        PhaseEpochs {
            lm: 3,
            classifier: 3,
            joint: 10,
        }
    }
}

/// Where data lives and where artifacts go.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    /// Directory holding `{x,y}.{train,valid,test}.txt`, `lexicon.tsv`,
    /// and `embeddings.txt`.
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    /// JSON-lines training log. The lm phase (or a full run) truncates it;
    /// later phases append.
    pub log_file: PathBuf,
}

impl Default for DataPaths {
    fn default() -> Self {
        DataPaths {
            data_dir: PathBuf::from("data"),
            checkpoint_dir: PathBuf::from("checkpoints"),
            log_file: PathBuf::from("checkpoints/train.log.jsonl"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: PhaseEpochs,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// A token enters the vocabulary when its training-corpus frequency
    /// strictly exceeds this count.
    pub min_count: usize,
    pub weights: LossWeights,
    pub temperature: TemperatureSchedule,
    /// Initial joint epochs trained on reconstruction alone. The feedback
    /// terms act on the decoder's own soft output, which is noise until the
    /// auto-encoder can reproduce its input, so they are switched on only
    /// after this head start.
    pub aux_warmup_epochs: usize,
    pub dims: ModelDims,
    pub paths: DataPaths,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 13,
            epochs: PhaseEpochs::default(),
            batch_size: 128,
            learning_rate: 5e-4,
            min_count: crate::data::vocab::DEFAULT_MIN_COUNT,
            weights: LossWeights::default(),
            temperature: TemperatureSchedule::default(),
            aux_warmup_epochs: 2,
            dims: ModelDims::default(),
            paths: DataPaths::default(),
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: TrainConfig = serde_json::from_str(&text)
            .map_err(|e| Error::format(path, e.line(), e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return Err(Error::contract(format!(
                "batch_size must be even and at least 2 (each batch is half per style), got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::contract("learning_rate must be positive"));
        }
        let w = &self.weights;
        if w.classifier < 0.0 || w.pos < 0.0 || w.lm < 0.0 {
            return Err(Error::contract("loss weights must be nonnegative"));
        }
        let tsch = &self.temperature;
        if !(tsch.initial > 0.0) || !(tsch.floor > 0.0) {
            return Err(Error::contract(
                "temperature initial and floor must be positive",
            ));
        }
        if !(tsch.decay > 0.0 && tsch.decay <= 1.0) {
            return Err(Error::contract(
                "temperature decay must be in (0, 1]",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = TrainConfig::default();
        assert_eq!(c.batch_size, 128);
        assert_eq!(c.learning_rate, 5e-4);
        assert_eq!(c.weights.classifier, 0.2);
        assert_eq!(c.weights.pos, 0.1);
        assert_eq!(c.weights.lm, 0.5);
        assert_eq!(c.epochs.joint, 10);
        assert_eq!(c.temperature.pretrain_epochs, 1);
        c.validate().unwrap();
    }

    #[test]
    fn temperature_trace_over_ten_epochs() {
        let s = TemperatureSchedule::default();
        let trace: Vec<f64> = (0..10).map(|e| s.tau(e)).collect();
        assert_eq!(
            trace,
            vec![1.0, 1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625]
        );
    }

    #[test]
    fn temperature_floor_binds_eventually() {
        let s = TemperatureSchedule::default();
        assert_eq!(s.tau(100), 0.001);
        let mut prev = f64::INFINITY;
        for e in 0..30 {
            let tau = s.tau(e);
            assert!(tau <= prev, "schedule must be nonincreasing");
            prev = tau;
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        let mut c = TrainConfig::default();
        c.seed = 99;
        c.dims.vocab = 80;
        c.save(&path).unwrap();
        let back = TrainConfig::load(&path).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, r#"{"learning_rte": 0.1}"#).unwrap();
        assert!(TrainConfig::load(&path).is_err());

        std::fs::write(&path, r#"{"batch_size": 7}"#).unwrap();
        assert!(TrainConfig::load(&path).is_err());

        std::fs::write(&path, r#"{"weights": {"pos": -0.1}}"#).unwrap();
        assert!(TrainConfig::load(&path).is_err());
    }
}
