//! Checkpoint serialization: a magic-tagged binary container holding the
//! training configuration, phase progress, vocabulary, and every named
//! parameter tensor as little-endian f32 payloads.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Rng, Tensor};
use crate::training::config::TrainConfig;

pub const MAGIC: [u8; 4] = *b"SCPM";
pub const FORMAT_VERSION: u32 = 1;

/// Which training phases this checkpoint has completed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseFlags {
    pub lm: bool,
    pub classifier: bool,
    pub joint: bool,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rank: usize,
    dims: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    epoch: usize,
    flags: PhaseFlags,
    /// Root seed all per-phase random streams derive from.
    rng_seed: u64,
    /// Id-ordered vocabulary tokens.
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
}

/// A complete training state: enough to resume the next phase or run
/// transfer and evaluation.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: usize,
    pub flags: PhaseFlags,
    pub vocab: Vocabulary,
    pub model: Model,
}

impl Checkpoint {
    /// Serializes and atomically replaces `path` (write temp, rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let named = self.model.named_tensors();
        let mut tensors = Vec::with_capacity(named.len());
        let mut payload: Vec<u8> = Vec::new();
        for (name, tensor) in &named {
            tensors.push(TensorEntry {
                name: name.to_string(),
                rank: tensor.shape().len(),
                dims: tensor.shape().to_vec(),
                offset: payload.len() as u64,
            });
            for &x in tensor.data() {
                payload.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        let header = Header {
            config: self.config.clone(),
            epoch: self.epoch,
            flags: self.flags,
            rng_seed: self.config.seed,
            vocab: self.vocab.tokens().to_vec(),
            tensors,
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| Error::contract(format!("could not serialize checkpoint header: {e}")))?;

        let mut bytes = Vec::with_capacity(12 + header_json.len() + payload.len());
        bytes.extend_from_slice(&MAGIC);
        bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&header_json);
        bytes.extend_from_slice(&payload);

        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
            f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let fail = |msg: String| Error::format(path, 0, msg);
        if bytes.len() < 12 {
            return Err(fail("file too short to be a checkpoint".into()));
        }
        if bytes[0..4] != MAGIC {
            return Err(fail("bad magic bytes: not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(fail(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        if bytes.len() < 12 + header_len {
            return Err(fail("truncated checkpoint header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
            .map_err(|e| fail(format!("invalid checkpoint header: {e}")))?;
        let payload = &bytes[12 + header_len..];

        let vocab = Vocabulary::from_tokens(header.vocab)?;
        let mut dims = header.config.dims.clone();
        dims.vocab = vocab.len();
        dims.validate()?;
        let mut model = Model::init(dims, &Rng::new(0))?;

        let mut entries = std::collections::HashMap::new();
        for e in &header.tensors {
            entries.insert(e.name.as_str(), e);
        }
        if entries.len() != header.tensors.len() {
            return Err(fail("duplicate tensor names in checkpoint".into()));
        }
        let mut named = model.named_tensors_mut();
        if named.len() != header.tensors.len() {
            return Err(fail(format!(
                "checkpoint holds {} tensors, model expects {}",
                header.tensors.len(),
                named.len()
            )));
        }
        for (name, tensor) in named.iter_mut() {
            let entry = entries
                .get(*name)
                .ok_or_else(|| fail(format!("checkpoint is missing tensor {name}")))?;
            if entry.dims != tensor.shape() || entry.rank != tensor.shape().len() {
                return Err(fail(format!(
                    "tensor {name} has shape {:?} in the checkpoint, expected {:?}",
                    entry.dims,
                    tensor.shape()
                )));
            }
            let n = tensor.numel();
            let start = entry.offset as usize;
            let end = start + 4 * n;
            if end > payload.len() {
                return Err(fail(format!("tensor {name} payload is out of bounds")));
            }
            read_f32_into(&payload[start..end], tensor);
        }

        Ok(Checkpoint {
            config: header.config,
            epoch: header.epoch,
            flags: header.flags,
            vocab,
            model,
        })
    }
}

fn read_f32_into(bytes: &[u8], tensor: &mut Tensor) {
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
        tensor.data_mut()[i] = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Vocabulary;

    fn toy_checkpoint() -> Checkpoint {
        let tokens: Vec<String> = ["<PAD>", "<BOS>", "<EOS>", "<UNK>", "pizza", "great"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let vocab = Vocabulary::from_tokens(tokens).unwrap();
        let mut config = TrainConfig::default();
        config.dims.vocab = vocab.len();
        config.dims.embedding = 6;
        config.dims.style = 4;
        config.dims.hidden = 8;
        config.dims.attention = 5;
        config.dims.clf_filters = 3;
        config.dims.lm_hidden = 7;
        let model = Model::init(config.dims.clone(), &Rng::new(42)).unwrap();
        Checkpoint {
            config,
            epoch: 2,
            flags: PhaseFlags {
                lm: true,
                classifier: false,
                joint: false,
            },
            vocab,
            model,
        }
    }

    fn quantize(model: &mut Model) {
        for (_, tensor) in model.named_tensors_mut() {
            for x in tensor.data_mut() {
                *x = *x as f32 as f64;
            }
        }
    }

    #[test]
    fn save_load_round_trip_preserves_quantized_tensors_exactly() {
        let mut ckpt = toy_checkpoint();
        // The on-disk precision is f32; after one quantization pass the
        // round trip must be bit-exact.
        quantize(&mut ckpt.model);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();

        assert_eq!(loaded.epoch, 2);
        assert_eq!(loaded.flags, ckpt.flags);
        assert_eq!(loaded.vocab.tokens(), ckpt.vocab.tokens());
        for ((name_a, a), (_, b)) in ckpt
            .model
            .named_tensors()
            .iter()
            .zip(loaded.model.named_tensors().iter())
        {
            assert_eq!(a.shape(), b.shape(), "{name_a}");
            assert_eq!(a.data(), b.data(), "{name_a}");
        }

        // Saving the loaded state again produces identical bytes.
        let path2 = dir.path().join("model2.ckpt");
        loaded.save(&path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn header_layout_starts_with_magic_and_version() {
        let ckpt = toy_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"SCPM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header: serde_json::Value =
            serde_json::from_slice(&bytes[12..12 + header_len]).unwrap();
        assert!(header.get("config").is_some());
        assert!(header.get("tensors").unwrap().as_array().unwrap().len() > 0);
    }

    #[test]
    fn load_rejects_foreign_and_truncated_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.ckpt");
        fs::write(&path, b"not a checkpoint at all").unwrap();
        let err = Checkpoint::load(&path).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");

        let short = dir.path().join("short.ckpt");
        fs::write(&short, b"SC").unwrap();
        assert!(Checkpoint::load(&short).is_err());
    }

    #[test]
    fn forward_pass_is_identical_after_round_trip() {
        use crate::data::encode;
        use crate::model::{encode as encode_seq, greedy_decode};
        use crate::tensor::Tape;

        let mut ckpt = toy_checkpoint();
        quantize(&mut ckpt.model);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();

        let tokens: Vec<String> = ["pizza", "great"].iter().map(|s| s.to_string()).collect();
        let ids = encode(&tokens, &ckpt.vocab).unwrap();
        let run = |model: &Model| {
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape).unwrap();
            let enc = encode_seq(&mut tape, &vars, &ids, vars.style_x).unwrap();
            greedy_decode(&mut tape, &vars, &enc, vars.style_y).unwrap()
        };
        assert_eq!(run(&ckpt.model), run(&loaded.model));
    }
}
