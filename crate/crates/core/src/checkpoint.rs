//! Named-tensor checkpoint container.
//!
//! Layout: `RLCK` magic, `u32` format version, `u64` header length, a JSON
//! header, then the tensor payload as contiguous little-endian values. Header
//! offsets are byte offsets into the payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::losses::{FeatureExtractor, LossError, SunEstNet};
use crate::network::{NetConfig, ShadowTransferModel};
use crate::nn::ParamStore;
use crate::tensor::Real;

pub const MAGIC: &[u8; 4] = b"RLCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint holds a '{found}', expected '{expected}'")]
    WrongKind { expected: String, found: String },
    #[error("checkpoint does not match the network layout: {0}")]
    Layout(String),
}

impl From<LossError> for CheckpointError {
    fn from(e: LossError) -> Self {
        CheckpointError::Layout(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub tensors: Vec<TensorHeader>,
}

/// A parsed checkpoint: header plus raw payload.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    payload: Vec<u8>,
}

fn corrupt(m: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt(m.into())
}

impl Checkpoint {
    pub fn from_params<T: Real>(kind: &str, config: serde_json::Value, seed: u64, params: &ParamStore<T>) -> Self {
        let mut payload = Vec::with_capacity(params.len() * T::BYTES);
        let mut tensors = Vec::with_capacity(params.entries().len());
        for e in params.entries() {
            let offset = payload.len() as u64;
            for v in params.get(e.slot) {
                v.write_le(&mut payload);
            }
            tensors.push(TensorHeader {
                name: e.name.clone(),
                shape: e.shape.clone(),
                dtype: T::DTYPE.to_string(),
                offset,
                length: payload.len() as u64 - offset,
            });
        }
        Self {
            header: Header {
                kind: kind.to_string(),
                config,
                seed,
                tensors,
            },
            payload,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header is plain data");
        let mut out = Vec::with_capacity(16 + header.len() + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < 16 {
            return Err(corrupt("truncated preamble"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let hend = 16u64
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len() as u64)
            .ok_or_else(|| corrupt(format!("header of {hlen} bytes exceeds file")))? as usize;
        let header: Header =
            serde_json::from_slice(&bytes[16..hend]).map_err(|e| corrupt(format!("header: {e}")))?;
        let payload = bytes[hend..].to_vec();
        let mut spans: Vec<(u64, u64)> = Vec::new();
        for t in &header.tensors {
            let elem = match t.dtype.as_str() {
                "f32" => 4,
                "f64" => 8,
                other => return Err(corrupt(format!("tensor {} has unknown dtype {other}", t.name))),
            };
            let count: u64 = t.shape.iter().map(|&d| d as u64).product();
            if count * elem != t.length {
                return Err(corrupt(format!("tensor {} length disagrees with its shape", t.name)));
            }
            let end = t.offset.checked_add(t.length).ok_or_else(|| corrupt("offset overflow"))?;
            if end > payload.len() as u64 {
                return Err(corrupt(format!(
                    "tensor {} ends at byte {end} but payload has {}",
                    t.name,
                    payload.len()
                )));
            }
            spans.push((t.offset, end));
        }
        spans.sort_unstable();
        if spans.windows(2).any(|w| w[1].0 < w[0].1) {
            return Err(corrupt("overlapping tensors"));
        }
        Ok(Self { header, payload })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), CheckpointError> {
        if self.header.kind != kind {
            return Err(CheckpointError::WrongKind {
                expected: kind.to_string(),
                found: self.header.kind.clone(),
            });
        }
        Ok(())
    }

    pub fn config<C: DeserializeOwned>(&self) -> Result<C, CheckpointError> {
        serde_json::from_value(self.header.config.clone()).map_err(|e| corrupt(format!("config: {e}")))
    }

    /// Values of one tensor converted to `T`.
    pub fn values<T: Real>(&self, name: &str) -> Option<Vec<T>> {
        let t = self.header.tensors.iter().find(|t| t.name == name)?;
        let bytes = &self.payload[t.offset as usize..(t.offset + t.length) as usize];
        Some(match t.dtype.as_str() {
            "f32" => bytes.chunks_exact(4).map(|c| T::lit(f32::read_le(c) as f64)).collect(),
            _ => bytes.chunks_exact(8).map(|c| T::lit(f64::read_le(c))).collect(),
        })
    }

    /// Overwrites every tensor of `params` by name; shapes must agree.
    pub fn fill<T: Real>(&self, params: &mut ParamStore<T>) -> Result<(), CheckpointError> {
        for e in params.entries() {
            let t = self
                .header
                .tensors
                .iter()
                .find(|t| t.name == e.name)
                .ok_or_else(|| CheckpointError::Layout(format!("missing tensor {}", e.name)))?;
            if t.shape != e.shape {
                return Err(CheckpointError::Layout(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    e.name, t.shape, e.shape
                )));
            }
        }
        if self.header.tensors.len() != params.entries().len() {
            return Err(CheckpointError::Layout("unexpected extra tensors".into()));
        }
        params
            .load_values(|e| self.values(&e.name))
            .map_err(CheckpointError::Layout)
    }
}

/// Objects that round-trip through a [`Checkpoint`].
pub trait Checkpointable: Sized {
    const KIND: &'static str;
    fn to_checkpoint(&self) -> Checkpoint;
    fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError>;
}

impl<T: Real> Checkpointable for ShadowTransferModel<T> {
    const KIND: &'static str = "shadow_transfer";

    fn to_checkpoint(&self) -> Checkpoint {
        let cfg = serde_json::to_value(&self.config).expect("config serializes");
        Checkpoint::from_params(Self::KIND, cfg, self.seed, &self.params)
    }

    fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        ck.expect_kind(Self::KIND)?;
        let cfg: NetConfig = ck.config()?;
        let mut m = ShadowTransferModel::init_parameters(cfg, ck.header.seed).map_err(|e| CheckpointError::Layout(e.to_string()))?;
        ck.fill(&mut m.params)?;
        Ok(m)
    }
}

impl<T: Real> Checkpointable for SunEstNet<T> {
    const KIND: &'static str = "sunest";

    fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_params(Self::KIND, serde_json::Value::Null, self.seed, &self.params)
    }

    fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        ck.expect_kind(Self::KIND)?;
        let mut net = SunEstNet::init_parameters(ck.header.seed);
        ck.fill(&mut net.params)?;
        Ok(net)
    }
}

impl<T: Real> Checkpointable for FeatureExtractor<T> {
    const KIND: &'static str = "feature_extractor";

    fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_params(Self::KIND, serde_json::Value::Null, self.seed(), self.params())
    }

    fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        ck.expect_kind(Self::KIND)?;
        let mut params = FeatureExtractor::<T>::new(ck.header.seed).params().clone();
        ck.fill(&mut params)?;
        Ok(FeatureExtractor::with_params(params)?)
    }
}

pub fn save_checkpoint<C: Checkpointable>(obj: &C, path: &Path) -> Result<(), CheckpointError> {
    obj.to_checkpoint().save(path)
}

pub fn load_checkpoint<C: Checkpointable>(path: &Path) -> Result<C, CheckpointError> {
    C::from_checkpoint(&Checkpoint::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> NetConfig {
        NetConfig {
            height: 8,
            width: 8,
            levels: 2,
            base_width: 4,
            latent_width: 8,
            light_hidden: 4,
            ..NetConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = ShadowTransferModel::<f32>::init_parameters(tiny(), 77).unwrap();
        save_checkpoint(&m, &path).unwrap();
        let back: ShadowTransferModel<f32> = load_checkpoint(&path).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.config, m.config);
        assert_eq!(back.seed, 77);
        let bytes = std::fs::read(&path).unwrap();
        save_checkpoint(&back, &path).unwrap();
        assert_eq!(bytes, std::fs::read(&path).unwrap());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let m = SunEstNet::<f32>::init_parameters(3);
        let bytes = m.to_checkpoint().to_bytes();
        for cut in [bytes.len() - 1, bytes.len() / 2, 20, 10] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, CheckpointError::Corrupt(_)), "cut {cut}: {err}");
        }
        assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn kind_and_version_checked() {
        let net = SunEstNet::<f32>::init_parameters(3);
        let ck = net.to_checkpoint();
        assert!(matches!(
            ShadowTransferModel::<f32>::from_checkpoint(&ck),
            Err(CheckpointError::WrongKind { .. })
        ));
        let mut bytes = ck.to_bytes();
        bytes[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::UnsupportedVersion(9))));
    }

    #[test]
    fn feature_extractor_round_trip() {
        let f = FeatureExtractor::<f32>::new(5);
        let back = FeatureExtractor::<f32>::from_checkpoint(&f.to_checkpoint()).unwrap();
        assert_eq!(back.params(), f.params());
    }

    #[test]
    fn f32_checkpoint_loads_as_f64() {
        let m = SunEstNet::<f32>::init_parameters(8);
        let back = SunEstNet::<f64>::from_checkpoint(&m.to_checkpoint()).unwrap();
        assert_eq!(back.params.cast::<f32>(), m.params);
    }
}
