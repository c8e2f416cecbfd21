//! Single-file checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes   "AVSIAMCK"
//! version    u32       CHECKPOINT_VERSION
//! header_len u64
//! header     JSON      {"config": .., "vocabulary": {"max_size", "tokens"},
//!                       "params": [{"name", "shape"}, ..]}
//! params     f64 LE    each parameter in header order, row-major
//! checksum   32 bytes  SHA-256 of every preceding byte
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EncoderConfig, SiameseModel};
use crate::autodiff::{ParamSet, Tensor};
use crate::text::Vocabulary;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AVSIAMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: EncoderConfig,
    vocabulary: Vocabulary,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl SiameseModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            vocabulary: self.vocab.clone(),
            params: self
                .params
                .iter()
                .map(|p| ParamEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let n_values: usize = self.params.iter().map(|p| p.value.len()).sum();
        let mut out = Vec::with_capacity(8 + 4 + 8 + header.len() + 8 * n_values + 32);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for p in self.params.iter() {
            for v in p.value.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 + 4 + 8 + 32 {
            return Err(corrupt("file too short"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(corrupt("checksum mismatch (truncated or corrupt file)"));
        }
        let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes"));
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|n| n.checked_add(20))
            .filter(|&end| end <= body.len())
            .ok_or_else(|| corrupt("header length exceeds file"))?;
        let header: Header = serde_json::from_slice(&body[20..header_end])
            .map_err(|e| corrupt(format!("bad header: {e}")))?;

        let mut data = &body[header_end..];
        let mut params = ParamSet::new();
        for entry in header.params {
            let n = entry
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| corrupt("parameter shape overflows"))?;
            let bytes_needed = n.checked_mul(8).filter(|&b| b <= data.len()).ok_or_else(|| {
                corrupt(format!("parameter {} extends past end of file", entry.name))
            })?;
            let values = data[..bytes_needed]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            data = &data[bytes_needed..];
            params.add(entry.name, Tensor::new(entry.shape, values)?);
        }
        if !data.is_empty() {
            return Err(corrupt(format!("{} trailing bytes after parameters", data.len())));
        }
        SiameseModel::from_parts(header.config, header.vocabulary, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and additionally requires the checkpoint's `vocab_size`.
    pub fn load_expecting(path: impl AsRef<Path>, vocab_size: usize) -> Result<Self> {
        let model = Self::load(path)?;
        if model.config.vocab_size != vocab_size {
            return Err(corrupt(format!(
                "checkpoint vocab_size {} differs from expected {vocab_size}",
                model.config.vocab_size
            )));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::small_model;
    use super::super::LossKind;
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = small_model(LossKind::Bce);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        m.save(&path).unwrap();
        let back = SiameseModel::load(&path).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.params().iter().zip(m.params().iter()) {
            let bits = |t: &Tensor| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
        assert_eq!(back.fingerprint(), m.fingerprint());
    }

    #[test]
    fn truncated_and_corrupt_files_fail() {
        let bytes = small_model(LossKind::Contrastive).to_bytes();
        assert!(SiameseModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(SiameseModel::from_bytes(&bytes[..10]).is_err());
        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x40;
        assert!(SiameseModel::from_bytes(&flipped).is_err());
    }

    #[test]
    fn version_mismatch_fails() {
        let mut bytes = small_model(LossKind::Contrastive).to_bytes();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        let err = SiameseModel::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }

    /// Re-seals a checkpoint after editing its header JSON.
    fn reseal_with_header(bytes: &[u8], edit: impl FnOnce(&mut serde_json::Value)) -> Vec<u8> {
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let mut header: serde_json::Value = serde_json::from_slice(&bytes[20..20 + header_len]).unwrap();
        edit(&mut header);
        let header = serde_json::to_vec(&header).unwrap();
        let mut out = bytes[..12].to_vec();
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&bytes[20 + header_len..bytes.len() - 32]);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    #[test]
    fn vocab_size_mismatch_fails() {
        let m = small_model(LossKind::Contrastive);
        let bytes = m.to_bytes();
        let unchanged = reseal_with_header(&bytes, |_| {});
        assert_eq!(SiameseModel::from_bytes(&unchanged).unwrap(), m);

        let edited = reseal_with_header(&bytes, |h| h["config"]["vocab_size"] = 999.into());
        let err = SiameseModel::from_bytes(&edited).unwrap_err().to_string();
        assert!(err.contains("vocab_size"), "{err}");

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        m.save(&path).unwrap();
        assert!(SiameseModel::load_expecting(&path, 20).is_ok());
        assert!(SiameseModel::load_expecting(&path, 21).is_err());
    }

    #[test]
    fn shape_mismatch_fails() {
        let bytes = small_model(LossKind::Contrastive).to_bytes();
        let edited = reseal_with_header(&bytes, |h| h["config"]["hidden_dim"] = 4.into());
        assert!(SiameseModel::from_bytes(&edited).is_err());
    }
}
