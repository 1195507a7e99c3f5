//! Model checkpoints and their binary encoding.
//!
//! Layout: magic `DUSTCKPT`, format version (u32 LE), meta length (u32 LE),
//! JSON meta, then every parameter block as row-major little-endian f64 in
//! the order of the meta block table.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{Activation, BlockInfo, EncoderModel, ModelDims};
use crate::ctc::Alphabet;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DUSTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub id: String,
    pub stage: String,
    pub parent: Option<String>,
    pub seed: u64,
    pub alphabet: Option<Alphabet>,
    pub dims: ModelDims,
    pub activation: Activation,
    pub dropout_p: f64,
    pub blocks: Vec<BlockInfo>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    meta: CheckpointMeta,
    model: EncoderModel<f64>,
}

fn content_id(meta: &CheckpointMeta, params: &[f64]) -> String {
    let mut hasher = Sha256::new();
    let mut m = meta.clone();
    m.id.clear();
    hasher.update(serde_json::to_vec(&m).expect("meta serializes"));
    for p in params {
        hasher.update(p.to_le_bytes());
    }
    hasher.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

impl ModelCheckpoint {
    pub fn new(
        model: EncoderModel<f64>,
        stage: impl Into<String>,
        parent: Option<String>,
        seed: u64,
        alphabet: Option<Alphabet>,
    ) -> Result<Self> {
        if let Some(a) = &alphabet {
            if a.vocab_size() != model.dims().vocab {
                return Err(Error::AlphabetMismatch(format!(
                    "alphabet has {} labels, projection has {}",
                    a.vocab_size(),
                    model.dims().vocab
                )));
            }
        }
        let mut meta = CheckpointMeta {
            id: String::new(),
            stage: stage.into(),
            parent,
            seed,
            alphabet,
            dims: model.dims(),
            activation: model.activation(),
            dropout_p: model.dropout_p(),
            blocks: model.layout(),
        };
        meta.id = content_id(&meta, &model.params());
        Ok(ModelCheckpoint { meta, model })
    }

    pub fn id(&self) -> &str {
        &self.meta.id
    }

    pub fn meta(&self) -> &CheckpointMeta {
        &self.meta
    }

    pub fn model(&self) -> &EncoderModel<f64> {
        &self.model
    }

    pub fn into_model(self) -> EncoderModel<f64> {
        self.model
    }

    pub fn alphabet(&self) -> Option<&Alphabet> {
        self.meta.alphabet.as_ref()
    }

    pub fn stage(&self) -> &str {
        &self.meta.stage
    }

    pub fn parent(&self) -> Option<&str> {
        self.meta.parent.as_deref()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("meta serializes");
        let params = self.model.params();
        let mut out = Vec::with_capacity(16 + meta.len() + params.len() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    /// Decodes and validates a checkpoint; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |offset: usize, msg: String| Error::format(path, offset as u64, msg);
        if bytes.len() < 16 {
            return Err(fail(bytes.len(), "truncated header".into()));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(fail(0, "bad magic, expected DUSTCKPT".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(fail(8, format!("unsupported version {version}")));
        }
        let meta_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let meta_end = 16 + meta_len;
        if bytes.len() < meta_end {
            return Err(fail(
                bytes.len(),
                format!("truncated meta block ({meta_len} bytes declared)"),
            ));
        }
        let meta: CheckpointMeta =
            serde_json::from_slice(&bytes[16..meta_end]).map_err(|e| fail(16, format!("meta: {e}")))?;

        let mut model = EncoderModel::<f64>::new(meta.dims, meta.activation, meta.dropout_p, 0)
            .map_err(|e| fail(16, format!("meta: {e}")))?;
        if model.layout() != meta.blocks {
            return Err(fail(16, "shape table inconsistent with model dims".into()));
        }
        let n = model.param_count();
        let expected = meta_end + n * 8;
        if bytes.len() != expected {
            return Err(fail(
                bytes.len().min(expected),
                format!("payload is {} bytes, expected {}", bytes.len() - meta_end, n * 8),
            ));
        }
        let params: Vec<f64> = bytes[meta_end..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(fail(meta_end + i * 8, "non-finite parameter".into()));
        }
        model.set_params(&params).map_err(|e| fail(meta_end, e.to_string()))?;
        if content_id(&meta, &params) != meta.id {
            return Err(fail(16, format!("content hash does not match id {}", meta.id)));
        }
        Ok(ModelCheckpoint { meta, model })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkpoint() -> ModelCheckpoint {
        let dims = ModelDims {
            frame_dim: 3,
            context: 3,
            hidden: 5,
            encoder_layers: 2,
            vocab: 4,
        };
        let model = EncoderModel::new(dims, Activation::Tanh, 0.1, 17).unwrap();
        let alphabet = Alphabet::with_space("ab").unwrap();
        ModelCheckpoint::new(model, "finetune", Some("abc".into()), 17, Some(alphabet)).unwrap()
    }

    #[test]
    fn bytes_round_trip_bit_exact() {
        let ck = checkpoint();
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..8], b"DUSTCKPT");
        let back = ModelCheckpoint::from_bytes(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let a: Vec<u64> = ck.model().params().iter().map(|p| p.to_bits()).collect();
        let b: Vec<u64> = back.model().params().iter().map(|p| p.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = checkpoint().to_bytes();
        let err = ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 1], Path::new("ck.bin")).unwrap_err();
        assert!(err.to_string().contains("ck.bin"), "{err}");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ModelCheckpoint::from_bytes(&bad, Path::new("x")).is_err());
        let mut flipped = bytes.clone();
        let last = flipped.len() - 3;
        flipped[last] ^= 1;
        assert!(ModelCheckpoint::from_bytes(&flipped, Path::new("x")).is_err());
    }

    #[test]
    fn alphabet_must_match_projection() {
        let ck = checkpoint();
        let wrong = Alphabet::with_space("abcdef").unwrap();
        assert!(ModelCheckpoint::new(ck.model().clone(), "x", None, 0, Some(wrong)).is_err());
    }
}
