//! Single-file container: an 8-byte little-endian header length, a JSON
//! header, then raw little-endian `f64` arrays in the order the header lists.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    content_hash: String,
    arrays: Vec<ArrayEntry>,
    meta: Value,
}

/// Named `f64` arrays plus free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: Value,
    pub arrays: Vec<(String, Vec<f64>)>,
}

/// SHA-256 over the metadata JSON and every array (name, length, bytes).
pub fn content_hash(meta: &Value, arrays: &[(String, Vec<f64>)]) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(meta).expect("JSON values always serialize"));
    for (name, data) in arrays {
        h.update(name.as_bytes());
        h.update((data.len() as u64).to_le_bytes());
        for v in data {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl Container {
    pub fn new(kind: &str, meta: Value) -> Self {
        Container {
            kind: kind.to_string(),
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, data: Vec<f64>) {
        self.arrays.push((name.to_string(), data));
    }

    pub fn hash(&self) -> String {
        content_hash(&self.meta, &self.arrays)
    }

    /// Removes and returns an array by name.
    pub fn take(&mut self, name: &str) -> Result<Vec<f64>> {
        let pos = self
            .arrays
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Format(format!("missing array '{name}'")))?;
        Ok(self.arrays.swap_remove(pos).1)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let header = Header {
            format_version: FORMAT_VERSION,
            kind: self.kind.clone(),
            content_hash: self.hash(),
            arrays: self
                .arrays
                .iter()
                .map(|(name, d)| ArrayEntry {
                    name: name.clone(),
                    len: d.len(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, data) in &self.arrays {
            for v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a container, checking its kind, version and content hash.
    pub fn read(path: &Path, expected_kind: &str) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len);
        if len > 1 << 32 {
            return Err(Error::Format(format!("implausible header length {len}")));
        }
        let mut json = vec![0u8; len as usize];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "format version {} (expected {FORMAT_VERSION})",
                header.format_version
            )));
        }
        if header.kind != expected_kind {
            return Err(Error::Format(format!(
                "file holds a {}, expected a {expected_kind}",
                header.kind
            )));
        }
        let mut arrays = Vec::with_capacity(header.arrays.len());
        let mut buf = [0u8; 8];
        for entry in header.arrays {
            let mut data = Vec::with_capacity(entry.len);
            for _ in 0..entry.len {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            arrays.push((entry.name, data));
        }
        if r.read(&mut buf)? != 0 {
            return Err(Error::Format(
                "trailing bytes after the declared arrays".into(),
            ));
        }
        let c = Container {
            kind: header.kind,
            meta: header.meta,
            arrays,
        };
        let hash = c.hash();
        if hash != header.content_hash {
            return Err(Error::Format(format!(
                "content hash mismatch (header {}, computed {hash})",
                header.content_hash
            )));
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let mut c = Container::new("test", serde_json::json!({"a": 1.5}));
        c.push("x", vec![1.0, -2.5, f64::MIN_POSITIVE]);
        c.push("y", vec![]);
        c.write(&path).unwrap();
        let back = Container::read(&path, "test").unwrap();
        assert_eq!(back, c);
        assert!(Container::read(&path, "other").is_err());

        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 1;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            Container::read(&path, "test"),
            Err(Error::Format(_))
        ));
    }
}
