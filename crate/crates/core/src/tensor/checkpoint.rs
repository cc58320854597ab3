//! Binary checkpoint container.
//!
//! Layout: 8-byte magic `POPUPCKP`, u32 LE version, u64 LE header length,
//! a JSON header (config, config hash, tensor names and shapes, optimizer
//! scalars), then raw f64 LE payloads: every parameter in header order,
//! followed by the Adam first and second moments when present.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AdamState, ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"POPUPCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// SHA-256 (hex) of a configuration's JSON text.
pub fn config_hash(config_json: &str) -> String {
    hex::encode(Sha256::digest(config_json.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSnapshot {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config_hash: String,
    config: String,
    epoch: usize,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerSnapshot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Architecture/training configuration as JSON text.
    pub config_json: String,
    pub config_hash: String,
    pub epoch: usize,
    pub params: ParamStore,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn new(config_json: String, epoch: usize, params: ParamStore, optimizer: Option<AdamState>) -> Self {
        let config_hash = config_hash(&config_json);
        Self {
            config_json,
            config_hash,
            epoch,
            params,
            optimizer,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if config_hash(&self.config_json) != self.config_hash {
            return Err(Error::Config("checkpoint config hash is stale".into()));
        }
        let header = Header {
            version: CHECKPOINT_VERSION,
            config_hash: self.config_hash.clone(),
            config: self.config_json.clone(),
            epoch: self.epoch,
            tensors: self
                .params
                .iter()
                .map(|(_, name, t)| TensorEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            optimizer: self.optimizer.as_ref().map(|s| OptimizerSnapshot {
                step: s.step,
                beta1: s.beta1,
                beta2: s.beta2,
                eps: s.eps,
            }),
        };
        let header = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(header.len() + 8 * self.params.num_values() * 3 + 20);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let mut put = |t: &Tensor| t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        self.params.iter().for_each(|(_, _, t)| put(t));
        if let Some(state) = &self.optimizer {
            state.first_moment.iter().for_each(&mut put);
            state.second_moment.iter().for_each(&mut put);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |d: &str| Error::format(path, d);
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(&format!("header: {e}")))?;
        let config_json = header.config.clone();
        if config_hash(&config_json) != header.config_hash {
            return Err(Error::Checksum(path.to_path_buf()));
        }

        let mut cursor = 20 + hlen;
        let mut take = |shape: &[usize]| -> Result<Tensor> {
            let n: usize = shape.iter().product();
            let raw = bytes
                .get(cursor..cursor + 8 * n)
                .ok_or_else(|| bad("truncated tensor payload"))?;
            cursor += 8 * n;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Tensor::new(shape.to_vec(), data)
        };
        let mut params = ParamStore::new();
        for entry in &header.tensors {
            let t = take(&entry.shape)?;
            params.add(entry.name.clone(), t);
        }
        let optimizer = match &header.optimizer {
            None => None,
            Some(s) => {
                let mut first = Vec::with_capacity(header.tensors.len());
                for e in &header.tensors {
                    first.push(take(&e.shape)?);
                }
                let mut second = Vec::with_capacity(header.tensors.len());
                for e in &header.tensors {
                    second.push(take(&e.shape)?);
                }
                Some(AdamState {
                    step: s.step,
                    beta1: s.beta1,
                    beta2: s.beta2,
                    eps: s.eps,
                    first_moment: first,
                    second_moment: second,
                })
            }
        };
        if cursor != bytes.len() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(Self {
            config_json,
            config_hash: header.config_hash,
            epoch: header.epoch,
            params,
            optimizer,
        })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut params = ParamStore::new();
        params.add("layer.w", Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 1e-300, f64::MAX, -0.0]).unwrap());
        params.add("layer.b", Tensor::row(&[std::f64::consts::PI, 2.5, -7.0]));
        let mut opt = AdamState::new(&params);
        opt.step = 17;
        opt.first_moment[0].data_mut()[1] = 0.125;
        opt.second_moment[1].data_mut()[2] = 3.5e-9;
        let config = serde_json::json!({"width": 3, "lr": 1e-4}).to_string();
        Checkpoint::new(config, 4, params, Some(opt))
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = sample();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad, Path::new("x")).is_err());
    }
}
