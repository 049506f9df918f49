//! Versioned, hash-checked archives for every exported artifact, plus a compact
//! binary layout for large layer sets.
//!
//! An archive is a single header line
//!
//! ```text
//! netabs-archive <version> <kind> <sha256 of payload>
//! ```
//!
//! followed by the payload as canonical JSON (object keys sorted, no insignificant
//! whitespace, trailing newline). The hash covers exactly the payload bytes, so a
//! truncated file fails the hash check.

use std::fs;
use std::io;
use std::path::Path as FsPath;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::abstraction::Layers;

pub const SCHEMA_VERSION: u32 = 1;
const MAGIC_LINE: &str = "netabs-archive";
const LAYERS_MAGIC: &[u8; 4] = b"NTLY";

#[derive(Debug, Error)]
pub enum PersistenceError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("not an archive: {0}")]
    Malformed(String),
    #[error("archive schema version {found} is not supported (this build reads version {supported}); re-export the artifact with a matching release")]
    Version { found: u32, supported: u32 },
    #[error("archive holds a `{found}` payload, expected `{expected}`")]
    Kind { found: String, expected: String },
    #[error("content hash mismatch: header says {expected}, payload hashes to {actual}; the file is truncated or modified")]
    Hash { expected: String, actual: String },
    #[error("payload does not decode: {0}")]
    Decode(String),
}

/// The parsed form of an archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEnvelope {
    pub schema_version: u32,
    pub kind: String,
    pub hash: String,
    pub payload: serde_json::Value,
}

/// Canonical JSON bytes of `value`: keys sorted, compact, newline-terminated.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<Vec<u8>, PersistenceError> {
    // Value's map type is ordered, which sorts object keys
    let v = serde_json::to_value(value).map_err(|e| PersistenceError::Decode(e.to_string()))?;
    let mut bytes = serde_json::to_vec(&v).map_err(|e| PersistenceError::Decode(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn to_bytes<T: Serialize>(value: &T, kind: &str) -> Result<Vec<u8>, PersistenceError> {
    if kind.is_empty() || kind.contains(char::is_whitespace) {
        return Err(PersistenceError::Malformed(format!("invalid payload kind `{kind}`")));
    }
    let payload = canonical_json(value)?;
    let mut out = format!("{MAGIC_LINE} {SCHEMA_VERSION} {kind} {}\n", sha256_hex(&payload)).into_bytes();
    out.extend(payload);
    Ok(out)
}

/// Parses and verifies an archive without decoding the payload into a type.
pub fn envelope_from_bytes(bytes: &[u8]) -> Result<ArchiveEnvelope, PersistenceError> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| PersistenceError::Malformed("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| PersistenceError::Malformed("header is not UTF-8".into()))?;
    let parts: Vec<&str> = header.split(' ').collect();
    if parts.len() != 4 || parts[0] != MAGIC_LINE {
        return Err(PersistenceError::Malformed(format!("unexpected header `{header}`")));
    }
    let version: u32 = parts[1]
        .parse()
        .map_err(|_| PersistenceError::Malformed(format!("bad version field `{}`", parts[1])))?;
    if version != SCHEMA_VERSION {
        return Err(PersistenceError::Version { found: version, supported: SCHEMA_VERSION });
    }
    let payload = &bytes[nl + 1..];
    let actual = sha256_hex(payload);
    if actual != parts[3] {
        return Err(PersistenceError::Hash { expected: parts[3].to_string(), actual });
    }
    let value = serde_json::from_slice(payload).map_err(|e| PersistenceError::Decode(e.to_string()))?;
    Ok(ArchiveEnvelope { schema_version: version, kind: parts[2].to_string(), hash: actual, payload: value })
}

pub fn from_bytes<T: DeserializeOwned>(bytes: &[u8], kind: &str) -> Result<T, PersistenceError> {
    let env = envelope_from_bytes(bytes)?;
    if env.kind != kind {
        return Err(PersistenceError::Kind { found: env.kind, expected: kind.to_string() });
    }
    serde_json::from_value(env.payload).map_err(|e| PersistenceError::Decode(e.to_string()))
}

fn io_err(path: &FsPath) -> impl FnOnce(io::Error) -> PersistenceError + '_ {
    move |source| PersistenceError::Io { path: path.display().to_string(), source }
}

pub fn save<T: Serialize>(value: &T, kind: &str, path: &FsPath) -> Result<(), PersistenceError> {
    fs::write(path, to_bytes(value, kind)?).map_err(io_err(path))
}

pub fn load<T: DeserializeOwned>(path: &FsPath, kind: &str) -> Result<T, PersistenceError> {
    from_bytes(&fs::read(path).map_err(io_err(path))?, kind)
}

/// Binary layout of [`Layers`], all integers little-endian:
///
/// | field | type |
/// |---|---|
/// | magic `NTLY` | 4 bytes |
/// | version | u32 |
/// | agent count `N` | u32 |
/// | layer count `K` | u32 |
/// | truncated flag | u8 |
///
/// then for each layer `k`: the configuration count `C_k` as u64, `C_k * N`
/// cell ids as u32 in layer order, and for `k >= 1` the `C_k` predecessor
/// indices as u32.
pub fn layers_to_binary(layers: &Layers, agents: usize) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(LAYERS_MAGIC);
    out.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
    out.extend_from_slice(&(agents as u32).to_le_bytes());
    out.extend_from_slice(&(layers.layers.len() as u32).to_le_bytes());
    out.push(u8::from(layers.truncated.is_some()));
    for (k, layer) in layers.layers.iter().enumerate() {
        out.extend_from_slice(&(layer.len() as u64).to_le_bytes());
        for cfg in layer {
            debug_assert_eq!(cfg.len(), agents);
            for id in cfg {
                out.extend_from_slice(&id.to_le_bytes());
            }
        }
        if k > 0 {
            for p in &layers.predecessors[k - 1] {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PersistenceError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| PersistenceError::Malformed("layer file ends early".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, PersistenceError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, PersistenceError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Inverse of [`layers_to_binary`]. The truncation diagnostic text is not stored,
/// only whether one was present.
pub fn layers_from_binary(bytes: &[u8]) -> Result<(Layers, usize), PersistenceError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != LAYERS_MAGIC {
        return Err(PersistenceError::Malformed("bad layer file magic".into()));
    }
    let version = r.u32()?;
    if version != SCHEMA_VERSION {
        return Err(PersistenceError::Version { found: version, supported: SCHEMA_VERSION });
    }
    let agents = r.u32()? as usize;
    let count = r.u32()? as usize;
    let truncated = r.take(1)?[0] != 0;
    let mut layers = Layers { layers: Vec::with_capacity(count), predecessors: Vec::new(), truncated: None };
    for k in 0..count {
        let c = r.u64()? as usize;
        let mut layer = Vec::with_capacity(c.min(1 << 20));
        for _ in 0..c {
            layer.push((0..agents).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?);
        }
        layers.layers.push(layer);
        if k > 0 {
            layers.predecessors.push((0..c).map(|_| r.u32()).collect::<Result<_, _>>()?);
        }
    }
    if r.pos != bytes.len() {
        return Err(PersistenceError::Malformed("trailing bytes after the last layer".into()));
    }
    if truncated {
        layers.truncated = Some("truncated by the layer cap".into());
    }
    Ok((layers, agents))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Sample {
        zeta: f64,
        alpha: Vec<u32>,
    }

    #[test]
    fn keys_are_sorted() {
        let b = canonical_json(&Sample { zeta: 0.1, alpha: vec![3] }).unwrap();
        assert_eq!(String::from_utf8(b).unwrap(), "{\"alpha\":[3],\"zeta\":0.1}\n");
    }

    #[test]
    fn round_trip() {
        let s = Sample { zeta: 1.0 / 3.0, alpha: vec![1, 2] };
        let b = to_bytes(&s, "sample").unwrap();
        assert_eq!(from_bytes::<Sample>(&b, "sample").unwrap(), s);
    }

    #[test]
    fn truncation_is_a_hash_error() {
        let b = to_bytes(&Sample { zeta: 2.5, alpha: vec![1, 2, 3] }, "sample").unwrap();
        let cut = &b[..b.len() - 5];
        assert!(matches!(from_bytes::<Sample>(cut, "sample"), Err(PersistenceError::Hash { .. })));
    }

    #[test]
    fn future_version_is_rejected() {
        let b = to_bytes(&Sample { zeta: 2.5, alpha: vec![] }, "sample").unwrap();
        let text = String::from_utf8(b).unwrap().replacen(" 1 ", " 2 ", 1);
        assert!(matches!(
            from_bytes::<Sample>(text.as_bytes(), "sample"),
            Err(PersistenceError::Version { found: 2, supported: 1 })
        ));
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let b = to_bytes(&Sample { zeta: 0.0, alpha: vec![] }, "sample").unwrap();
        assert!(matches!(from_bytes::<Sample>(&b, "other"), Err(PersistenceError::Kind { .. })));
    }

    #[test]
    fn binary_layers_round_trip() {
        let layers = Layers {
            layers: vec![vec![vec![0, 0]], vec![vec![0, 1], vec![1, 1]], vec![vec![2, 2]]],
            predecessors: vec![vec![0, 0], vec![1]],
            truncated: None,
        };
        let b = layers_to_binary(&layers, 2);
        assert_eq!(&b[..4], b"NTLY");
        // header, then 8 + 8 bytes, 8 + 16 + 8 bytes, 8 + 8 + 4 bytes
        assert_eq!(b.len(), 17 + 16 + 32 + 20);
        assert_eq!(layers_from_binary(&b).unwrap(), (layers, 2));
        assert!(layers_from_binary(&b[..b.len() - 1]).is_err());
    }
}
