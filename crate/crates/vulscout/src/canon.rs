//! Canonical serialization for stage artifacts.
//!
//! Every artifact that crosses a stage boundary (reports, hypotheses, context
//! bundles, cache entries) is written in one fixed JSON form: UTF-8, keys
//! sorted, two-space indent, LF line endings, single trailing newline.
//! Artifacts double as cache keys and golden-test fixtures, so the bytes must
//! be stable across runs and platforms.

use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Serialize a value into the canonical JSON string (no trailing newline).
///
/// Key order is sorted: the value is first converted to a `serde_json::Value`,
/// whose object representation is a `BTreeMap`.
pub fn to_canonical_string<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let v = serde_json::to_value(value)?;
    serde_json::to_string_pretty(&v)
}

/// Canonical bytes as written to disk: canonical string plus one `\n`.
pub fn to_canonical_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, serde_json::Error> {
    let mut s = to_canonical_string(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Hex SHA-256 of the canonical bytes of a value.
pub fn content_hash<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let bytes = to_canonical_bytes(value)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(digest.len() * 2);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    Ok(hex)
}

/// Write canonical bytes atomically: write to a sibling temp file, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "artifact".to_string());
    let tmp = dir.join(format!(".{}.tmp.{}", file_name, std::process::id()));
    fs::write(&tmp, bytes)?;
    match fs::rename(&tmp, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

/// Serialize a value canonically and write it atomically.
pub fn write_canonical<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let bytes = to_canonical_bytes(value)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[derive(Serialize)]
    struct Unordered {
        zulu: u32,
        alpha: u32,
        mike: u32,
    }

    #[test]
    fn keys_are_sorted() {
        let s = to_canonical_string(&Unordered {
            zulu: 1,
            alpha: 2,
            mike: 3,
        })
        .unwrap();
        let a = s.find("alpha").unwrap();
        let m = s.find("mike").unwrap();
        let z = s.find("zulu").unwrap();
        assert!(a < m && m < z);
    }

    #[test]
    fn hashmap_order_does_not_leak() {
        let mut m1 = HashMap::new();
        m1.insert("b".to_string(), 1);
        m1.insert("a".to_string(), 2);
        let mut m2 = HashMap::new();
        m2.insert("a".to_string(), 2);
        m2.insert("b".to_string(), 1);
        assert_eq!(
            to_canonical_string(&m1).unwrap(),
            to_canonical_string(&m2).unwrap()
        );
    }

    #[test]
    fn content_hash_is_stable() {
        let h1 = content_hash(&("prompt", "agent", "model")).unwrap();
        let h2 = content_hash(&("prompt", "agent", "model")).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 64);
    }

    #[test]
    fn atomic_write_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("artifact.json");
        write_atomic(&path, b"{}\n").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"{}\n");
    }
}
