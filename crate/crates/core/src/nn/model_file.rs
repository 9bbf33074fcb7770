//! Binary model container.
//!
//! Layout: the 8 magic bytes `CRKNET1\n`, a little-endian `u32` header length,
//! a UTF-8 JSON header (layout plus tensor manifest), every tensor as
//! little-endian `f32` in manifest order, and a trailing CRC32 of all
//! preceding bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{LayerParams, NetworkParams};
use super::spec::NetworkSpec;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CRKNET1\n";
const MAGIC_STEM: &[u8; 6] = b"CRKNET";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    layer: usize,
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    tensors: Vec<TensorEntry>,
}

/// Serializes a layout and its parameters into the container format.
pub fn encode(spec: &NetworkSpec, params: &NetworkParams<f32>) -> Result<Vec<u8>> {
    params.check_against(spec)?;
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    for (layer, lp) in params.layers().iter().enumerate() {
        let Some(lp) = lp else { continue };
        for (name, t) in [("weights", &lp.weights), ("bias", &lp.bias)] {
            tensors.push(TensorEntry {
                layer,
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset: payload.len(),
            });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let header = serde_json::to_vec(&Header {
        spec: spec.clone(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(NetworkSpec, NetworkParams<f32>)> {
    if bytes.len() < MAGIC.len() {
        return Err(Error::Truncated {
            expected: MAGIC.len() + 4,
            actual: bytes.len(),
        });
    }
    let magic = &bytes[..MAGIC.len()];
    if magic != MAGIC {
        if magic.starts_with(MAGIC_STEM) && magic[7] == b'\n' {
            return Err(Error::VersionMismatch {
                expected: "1".into(),
                found: String::from_utf8_lossy(&magic[6..7]).into_owned(),
            });
        }
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(MAGIC).into_owned(),
        });
    }
    let header_start = MAGIC.len() + 4;
    if bytes.len() < header_start {
        return Err(Error::Truncated {
            expected: header_start,
            actual: bytes.len(),
        });
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let payload_start = header_start + header_len;
    if bytes.len() < payload_start {
        return Err(Error::Truncated {
            expected: payload_start + 4,
            actual: bytes.len(),
        });
    }
    let header: Header = serde_json::from_slice(&bytes[header_start..payload_start])
        .map_err(|e| Error::Header(e.to_string()))?;

    let payload_len: usize = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>() * 4)
        .sum();
    let expected = payload_start + payload_len + 4;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Header(format!(
            "{} trailing bytes after checksum",
            bytes.len() - expected
        )));
    }
    let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..expected - 4]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let payload = &bytes[payload_start..payload_start + payload_len];
    let mut layers: Vec<Option<LayerParams<f32>>> = vec![None; header.spec.layers.len()];
    let mut pending: Vec<Option<Tensor<f32>>> = vec![None; header.spec.layers.len()];
    for entry in &header.tensors {
        let count: usize = entry.shape.iter().product();
        let end = entry.offset + count * 4;
        if end > payload.len() {
            return Err(Error::Header(format!(
                "tensor {}/{} extends past the payload",
                entry.layer, entry.name
            )));
        }
        let data: Vec<f32> = payload[entry.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let tensor = Tensor::from_vec(&entry.shape, data)?;
        if entry.layer >= layers.len() {
            return Err(Error::Header(format!("tensor for unknown layer {}", entry.layer)));
        }
        match entry.name.as_str() {
            "weights" => pending[entry.layer] = Some(tensor),
            "bias" => {
                let weights = pending[entry.layer].take().ok_or_else(|| {
                    Error::Header(format!("layer {}: bias before weights", entry.layer))
                })?;
                layers[entry.layer] = Some(LayerParams {
                    weights,
                    bias: tensor,
                });
            }
            other => return Err(Error::Header(format!("unknown tensor name {other:?}"))),
        }
    }
    let params = NetworkParams::from_layers(layers);
    params.check_against(&header.spec)?;
    Ok((header.spec, params))
}

pub fn save_params(spec: &NetworkSpec, params: &NetworkParams<f32>, path: &Path) -> Result<()> {
    let bytes = encode(spec, params)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<(NetworkSpec, NetworkParams<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
