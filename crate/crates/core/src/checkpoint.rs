//! Model checkpoints.
//!
//! Layout: the 8-byte magic `DCYPOCK1`, the manifest length as a
//! little-endian `u64`, the manifest as UTF-8 JSON, then every parameter as
//! little-endian `f32` values in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::array::RealArray;
use crate::error::{Error, Result};
use crate::io;
use crate::model::{ModelConfig, PolicyModel, ARCHITECTURE, BOS, EOS, VOCAB_SIZE};

const MAGIC: &[u8; 8] = b"DCYPOCK1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabularyInfo {
    pub kind: String,
    pub size: usize,
    pub bos: usize,
    pub eos: usize,
}

impl VocabularyInfo {
    fn bytes() -> Self {
        Self {
            kind: "bytes".into(),
            size: VOCAB_SIZE,
            bos: BOS,
            eos: EOS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub architecture: String,
    pub vocabulary: VocabularyInfo,
    pub model: ModelConfig,
    pub params: Vec<ParamInfo>,
    /// Hex SHA-256 of the configuration that produced the weights; empty for
    /// a fresh initialization.
    pub config_hash: String,
    pub step: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: PolicyModel,
    pub config_hash: String,
    pub step: u64,
    pub seed: u64,
}

/// Hex SHA-256 of `text`.
pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    /// Wraps a freshly initialised model.
    pub fn init(config: ModelConfig) -> Result<Self> {
        Ok(Self {
            model: PolicyModel::new(config)?,
            config_hash: String::new(),
            step: 0,
            seed: config.init_seed,
        })
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            architecture: ARCHITECTURE.into(),
            vocabulary: VocabularyInfo::bytes(),
            model: *self.model.config(),
            params: self
                .model
                .param_names()
                .iter()
                .zip(self.model.params())
                .map(|(n, p)| ParamInfo {
                    name: n.clone(),
                    shape: p.shape().to_vec(),
                })
                .collect(),
            config_hash: self.config_hash.clone(),
            step: self.step,
            seed: self.seed,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest()).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + manifest.len() + 4 * self.model.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for p in self.model.params() {
            for &v in p.values() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16usize.saturating_add(len))
            .ok_or_else(|| bad("truncated manifest".into()))?;
        let manifest: Manifest =
            serde_json::from_slice(body).map_err(|e| bad(format!("bad manifest: {e}")))?;
        if manifest.architecture != ARCHITECTURE {
            return Err(bad(format!("unknown architecture {:?}", manifest.architecture)));
        }
        if manifest.vocabulary != VocabularyInfo::bytes() {
            return Err(bad(format!("unsupported vocabulary {:?}", manifest.vocabulary)));
        }
        let mut data = &bytes[16 + len..];
        let mut names = Vec::new();
        let mut params = Vec::new();
        for info in &manifest.params {
            let n: usize = info.shape.iter().product();
            if data.len() < 4 * n {
                return Err(bad(format!("parameter data for {} is truncated", info.name)));
            }
            let (chunk, rest) = data.split_at(4 * n);
            data = rest;
            let values: Vec<f64> = chunk
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("parameter {} holds non-finite values", info.name)));
            }
            names.push(info.name.clone());
            params.push(RealArray::new(info.shape.clone(), values)?);
        }
        if !data.is_empty() {
            return Err(bad(format!("{} trailing bytes after parameters", data.len())));
        }
        Ok(Self {
            model: PolicyModel::from_parts(manifest.model, names, params)?,
            config_hash: manifest.config_hash,
            step: manifest.step,
            seed: manifest.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&io::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TokenSequence;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            context: 16,
            blocks: 1,
            mlp_hidden: 8,
            init_seed: 3,
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let mut ck = Checkpoint::init(tiny()).unwrap();
        // give the head non-zero weights so the forward pass is informative
        for (i, v) in ck.model.params_mut().last_mut().unwrap().values_mut().iter_mut().enumerate() {
            *v = ((i % 7) as f64 - 3.0) * 0.125;
        }
        ck.step = 12;
        ck.config_hash = config_hash("x");
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let seq = TokenSequence::from_bytes(b"ab", b"cd");
        let a = ck.model.token_logprobs(&seq).unwrap();
        let b = back.model.token_logprobs(&seq).unwrap();
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = Checkpoint::init(tiny()).unwrap();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = Checkpoint::init(tiny()).unwrap().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&magic), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::from_bytes(b"").is_err());
    }

    #[test]
    fn hash_is_hex_sha256() {
        assert_eq!(
            config_hash("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
