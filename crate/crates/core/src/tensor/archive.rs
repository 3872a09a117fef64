//! Named tensor archive.
//!
//! Layout: an 8-byte little-endian header length `H`, then `H` bytes of UTF-8
//! JSON `{"metadata": {...}, "tensors": [{"name", "shape", "offset"}, ...]}`,
//! then the payload of every tensor as little-endian f64 in header order.
//! `offset` is the byte offset of a tensor inside the payload.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    metadata: BTreeMap<String, serde_json::Value>,
    tensors: Vec<ArchiveEntry>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NamedTensorArchive {
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub tensors: Vec<(String, Tensor)>,
}

impl NamedTensorArchive {
    pub fn entries(&self) -> Vec<ArchiveEntry> {
        let mut offset = 0u64;
        self.tensors
            .iter()
            .map(|(name, t)| {
                let e = ArchiveEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += 8 * t.numel() as u64;
                e
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            metadata: self.metadata.clone(),
            tensors: self.entries(),
        })?;
        let payload: usize = self.tensors.iter().map(|(_, t)| 8 * t.numel()).sum();
        let mut out = Vec::with_capacity(8 + header.len() + payload);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let len_bytes: [u8; 8] = bytes
            .get(..8)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::Archive("truncated header length".into()))?;
        let hlen = u64::from_le_bytes(len_bytes) as usize;
        let header_bytes = bytes
            .get(8..8 + hlen)
            .ok_or_else(|| Error::Archive("truncated header".into()))?;
        let header: Header = serde_json::from_slice(header_bytes)?;
        let payload = &bytes[8 + hlen..];
        let mut expected = 0u64;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            if e.offset != expected {
                return Err(Error::Archive(format!(
                    "tensor {} at offset {} but expected {expected}",
                    e.name, e.offset
                )));
            }
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let raw = payload
                .get(start..start + 8 * n)
                .ok_or_else(|| Error::Archive(format!("payload of {} truncated", e.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            tensors.push((e.name, Tensor::new(e.shape, data)?));
            expected += 8 * n as u64;
        }
        if expected as usize != payload.len() {
            return Err(Error::Archive("trailing bytes after payload".into()));
        }
        Ok(NamedTensorArchive {
            metadata: header.metadata,
            tensors,
        })
    }

    /// Total scalar count, enumerated from the stored entries.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.numel()).sum()
    }
}

pub fn write_archive(archive: &NamedTensorArchive, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&archive.to_bytes()?)?;
    Ok(())
}

pub fn read_archive(path: &Path) -> Result<NamedTensorArchive> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    NamedTensorArchive::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_trailing_bytes_and_bad_offsets() {
        let mut a = NamedTensorArchive::default();
        a.tensors.push(("x".into(), Tensor::full(&[2], 1.5)));
        let mut bytes = a.to_bytes().unwrap();
        bytes.push(0);
        assert!(NamedTensorArchive::from_bytes(&bytes).is_err());
        assert!(NamedTensorArchive::from_bytes(&bytes[..5]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.nta");
        let mut a = NamedTensorArchive::default();
        a.metadata
            .insert("kind".into(), serde_json::json!("student"));
        a.tensors.push(("w".into(), Tensor::full(&[2, 2], -0.0)));
        write_archive(&a, &path).unwrap();
        let b = read_archive(&path).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        assert_eq!(b.tensors[0].1.data()[0].to_bits(), (-0.0f64).to_bits());
    }

    proptest! {
        #[test]
        fn byte_exact_round_trip(
            shapes in proptest::collection::vec(proptest::collection::vec(1usize..4, 1..3), 0..5),
            seed in any::<u64>(),
        ) {
            let mut a = NamedTensorArchive::default();
            let mut bits = seed;
            for (i, shape) in shapes.into_iter().enumerate() {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| {
                    bits = bits.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    f64::from_bits(bits >> 2)
                }).collect();
                a.tensors.push((format!("t{i}"), Tensor::new(shape, data).unwrap()));
            }
            let bytes = a.to_bytes().unwrap();
            let b = NamedTensorArchive::from_bytes(&bytes).unwrap();
            prop_assert_eq!(bytes, b.to_bytes().unwrap());
        }
    }
}
