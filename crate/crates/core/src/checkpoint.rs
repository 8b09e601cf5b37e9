//! Binary checkpoint format.
//!
//! ```text
//! "AGSC"            4 bytes magic
//! format_version    u32 little-endian (currently 1)
//! header_len        u64 little-endian
//! header            header_len bytes of UTF-8 JSON
//! parameters        raw little-endian floats, tensors in header order
//! ```
//!
//! The JSON header carries the network spec, tensor names and shapes, the
//! element precision, the best validation loss and the epoch it came from.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{NamedTensor, Network, NetworkSpec};
use crate::real::{Precision, Real};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"AGSC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub spec: NetworkSpec,
    pub parameters: Vec<NamedTensor<T>>,
    pub best_val_loss: f64,
    pub epoch: usize,
    pub format_version: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    precision: Precision,
    best_val_loss: f64,
    epoch: usize,
    tensors: Vec<TensorEntry>,
}

impl<T: Real> Checkpoint<T> {
    pub fn from_network(net: &Network<T>, best_val_loss: f64, epoch: usize) -> Self {
        Checkpoint {
            spec: net.spec().clone(),
            parameters: net.parameters().to_vec(),
            best_val_loss,
            epoch,
            format_version: FORMAT_VERSION,
        }
    }

    pub fn to_network(&self) -> Result<Network<T>> {
        Network::from_parameters(self.spec.clone(), self.parameters.clone())
    }

    pub fn into_network(self) -> Result<Network<T>> {
        Network::from_parameters(self.spec, self.parameters)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        if !self.best_val_loss.is_finite() {
            return Err(Error::BadHeader(format!(
                "best_val_loss {} is not finite",
                self.best_val_loss
            )));
        }
        let header = Header {
            spec: self.spec.clone(),
            precision: T::PRECISION,
            best_val_loss: self.best_val_loss,
            epoch: self.epoch,
            tensors: self
                .parameters
                .iter()
                .map(|p| TensorEntry {
                    name: p.name.clone(),
                    shape: p.tensor.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::BadHeader(e.to_string()))?;
        let payload: usize = self.parameters.iter().map(|p| p.tensor.numel()).sum();
        let mut out = Vec::with_capacity(16 + json.len() + payload * T::PRECISION.byte_width());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in &self.parameters {
            for &v in p.tensor.data() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (header, mut rest) = read_header(bytes)?;
        if header.precision != T::PRECISION {
            return Err(Error::PrecisionMismatch {
                stored: header.precision.bits(),
                requested: T::PRECISION.bits(),
            });
        }
        let width = T::PRECISION.byte_width();
        let needed: usize = header
            .tensors
            .iter()
            .map(|t| t.shape.iter().product::<usize>())
            .sum::<usize>()
            * width;
        if rest.len() < needed {
            return Err(Error::Truncated {
                section: "parameter data",
            });
        }
        if rest.len() > needed {
            return Err(Error::BadHeader(format!(
                "{} trailing bytes after parameter data",
                rest.len() - needed
            )));
        }
        let mut parameters = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let (chunk, tail) = rest.split_at(n * width);
            rest = tail;
            let data = chunk.chunks_exact(width).map(T::read_le).collect();
            let tensor = Tensor::new(&entry.shape, data).map_err(|e| Error::BadHeader(e.to_string()))?;
            parameters.push(NamedTensor {
                name: entry.name,
                tensor,
            });
        }
        // validates names and shapes against the spec
        let net = Network::from_parameters(header.spec, parameters)?;
        Ok(Checkpoint {
            spec: net.spec().clone(),
            parameters: net.into_parameters(),
            best_val_loss: header.best_val_loss,
            epoch: header.epoch,
            format_version: FORMAT_VERSION,
        })
    }
}

fn read_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 4 {
        return Err(Error::Truncated { section: "magic" });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            found: bytes[..4].to_vec(),
        });
    }
    let version_bytes = bytes.get(4..8).ok_or(Error::Truncated {
        section: "format version",
    })?;
    let version = u32::from_le_bytes(version_bytes.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let len_bytes = bytes.get(8..16).ok_or(Error::Truncated {
        section: "header length",
    })?;
    let header_len = u64::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() < header_len {
        return Err(Error::Truncated { section: "header" });
    }
    let header: Header = serde_json::from_slice(&body[..header_len]).map_err(|e| Error::BadHeader(e.to_string()))?;
    Ok((header, &body[header_len..]))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the checkpoint next to `path` and renames it into place.
pub fn save_checkpoint<T: Real>(ckpt: &Checkpoint<T>, path: &Path) -> Result<()> {
    let bytes = ckpt.encode()?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    Checkpoint::decode(&read_file(path)?)
}

/// Precision recorded in a checkpoint file, without decoding its parameters.
pub fn peek_precision(path: &Path) -> Result<Precision> {
    let bytes = read_file(path)?;
    Ok(read_header(&bytes)?.0.precision)
}
