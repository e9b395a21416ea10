//! Tensor container: a JSON header followed by one little-endian blob.
//!
//! Layout: the 8 magic bytes `N2NTENS1`, the header length as a little-endian
//! `u64`, the UTF-8 JSON header, then the blob. Each header entry records a
//! tensor's name, shape, dtype (`f32` or `f64`) and byte offset in the blob.
//! The header also stores the blob length and its SHA-256 so truncation and
//! corruption are reported instead of silently loading garbage.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cxnn::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

const MAGIC: &[u8; 8] = b"N2NTENS1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    metadata: serde_json::Value,
    tensors: Vec<TensorEntry>,
    blob_len: u64,
    blob_sha256: String,
}

fn corrupt(detail: impl Into<String>) -> Error {
    Error::Integrity(detail.into())
}

/// Serializes tensors (in name order) and metadata to bytes.
pub fn encode<S: Real>(
    metadata: &serde_json::Value,
    tensors: &BTreeMap<String, Tensor<S>>,
) -> Result<Vec<u8>> {
    let mut blob = Vec::with_capacity(tensors.values().map(|t| t.numel() * S::BYTES).sum());
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            dtype: S::DTYPE.to_string(),
            byte_offset: blob.len() as u64,
        });
        for &v in t.data() {
            v.write_le(&mut blob);
        }
    }
    let header = Header {
        version: FORMAT_VERSION,
        metadata: metadata.clone(),
        tensors: entries,
        blob_len: blob.len() as u64,
        blob_sha256: hex(&Sha256::digest(&blob)),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

/// Parses bytes produced by [`encode`], converting every tensor to `S`.
pub fn decode<S: Real>(bytes: &[u8]) -> Result<(serde_json::Value, BTreeMap<String, Tensor<S>>)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format {
            what: "checkpoint",
            detail: "missing magic bytes".into(),
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if header_len > body.len() {
        return Err(corrupt(format!(
            "header claims {header_len} bytes, file has {}",
            body.len()
        )));
    }
    let header: Header =
        serde_json::from_slice(&body[..header_len]).map_err(|e| Error::Format {
            what: "checkpoint header",
            detail: e.to_string(),
        })?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Unsupported(format!(
            "checkpoint version {}",
            header.version
        )));
    }
    let blob = &body[header_len..];
    if blob.len() as u64 != header.blob_len {
        return Err(corrupt(format!(
            "blob is {} bytes, header expects {}",
            blob.len(),
            header.blob_len
        )));
    }
    if hex(&Sha256::digest(blob)) != header.blob_sha256 {
        return Err(corrupt("blob checksum mismatch"));
    }
    let mut tensors = BTreeMap::new();
    for e in header.tensors {
        let width = match e.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(Error::Unsupported(format!("tensor dtype {other}"))),
        };
        let n: usize = e.shape.iter().product();
        let start = e.byte_offset as usize;
        let end = start
            .checked_add(n * width)
            .filter(|&end| end <= blob.len())
            .ok_or_else(|| corrupt(format!("tensor {} runs past the blob", e.name)))?;
        let raw = &blob[start..end];
        let data: Vec<S> = if width == S::BYTES {
            raw.chunks_exact(width).map(S::read_le).collect()
        } else if width == 4 {
            raw.chunks_exact(4)
                .map(|c| S::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                .collect()
        } else {
            raw.chunks_exact(8)
                .map(|c| S::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect()
        };
        if tensors
            .insert(e.name.clone(), Tensor::new(e.shape, data)?)
            .is_some()
        {
            return Err(corrupt(format!("duplicate tensor {}", e.name)));
        }
    }
    Ok((header.metadata, tensors))
}

pub fn save<S: Real>(
    path: impl AsRef<Path>,
    metadata: &serde_json::Value,
    tensors: &BTreeMap<String, Tensor<S>>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(metadata, tensors)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load<S: Real>(
    path: impl AsRef<Path>,
) -> Result<(serde_json::Value, BTreeMap<String, Tensor<S>>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> BTreeMap<String, Tensor<f64>> {
        let mut m = BTreeMap::new();
        m.insert(
            "a".to_string(),
            Tensor::new(vec![2, 2], vec![1.0, -0.1, f64::MIN_POSITIVE, 1e300]).unwrap(),
        );
        m.insert("b".to_string(), Tensor::new(vec![0], vec![]).unwrap());
        m.insert("c".to_string(), Tensor::scalar(std::f64::consts::PI));
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let meta = serde_json::json!({"step": 3});
        let bytes = encode(&meta, &sample()).unwrap();
        let (m, t) = decode::<f64>(&bytes).unwrap();
        assert_eq!(m, meta);
        for (name, orig) in sample() {
            let got = &t[&name];
            assert_eq!(got.shape(), orig.shape());
            let a: Vec<u64> = got.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = orig.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn f32_round_trip_and_widening() {
        let mut m = BTreeMap::new();
        m.insert(
            "w".to_string(),
            Tensor::new(vec![3], vec![0.1f32, -2.5, 7.0e-8]).unwrap(),
        );
        let bytes = encode(&serde_json::Value::Null, &m).unwrap();
        let (_, t32) = decode::<f32>(&bytes).unwrap();
        assert_eq!(t32["w"], m["w"]);
        let (_, t64) = decode::<f64>(&bytes).unwrap();
        assert_eq!(t64["w"].data()[0], 0.1f32 as f64);
    }

    #[test]
    fn truncation_is_an_integrity_error() {
        let bytes = encode(&serde_json::Value::Null, &sample()).unwrap();
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(decode::<f64>(cut), Err(Error::Integrity(_))));
    }

    #[test]
    fn flipped_byte_is_detected() {
        let mut bytes = encode(&serde_json::Value::Null, &sample()).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        assert!(matches!(decode::<f64>(&bytes), Err(Error::Integrity(_))));
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        assert!(matches!(
            decode::<f64>(b"not a checkpoint at all"),
            Err(Error::Format { .. })
        ));
    }
}
