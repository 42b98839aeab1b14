//! Atomic file output and the header-plus-blob binary container.
//!
//! Container layout: one line of compact JSON, a `\n`, then little-endian
//! `f32` values back to back.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{MarlError, Result};

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| MarlError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| MarlError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| MarlError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| MarlError::io(path, e))?;
    tmp.persist(path).map_err(|e| MarlError::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| MarlError::Parse(format!("json encode: {e}")))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| MarlError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| MarlError::Parse(format!("{}: {e}", path.display())))
}

pub fn encode_container<H: Serialize>(header: &H, values: &[f32]) -> Result<Vec<u8>> {
    let head = serde_json::to_string(header)
        .map_err(|e| MarlError::Parse(format!("header encode: {e}")))?;
    let mut out = Vec::with_capacity(head.len() + 1 + 4 * values.len());
    out.extend_from_slice(head.as_bytes());
    out.push(b'\n');
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_container<H: DeserializeOwned>(bytes: &[u8]) -> Result<(H, Vec<f32>)> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| MarlError::Parse("container header not terminated".into()))?;
    let header = serde_json::from_slice(&bytes[..split])
        .map_err(|e| MarlError::Parse(format!("container header: {e}")))?;
    let blob = &bytes[split + 1..];
    if blob.len() % 4 != 0 {
        return Err(MarlError::Parse("container blob is not a whole number of f32".into()));
    }
    let values = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, values))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| MarlError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn container_round_trip(values in proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 0..64),
                                name in "[a-z]{0,8}") {
            let header = serde_json::json!({ "name": name, "n": values.len() });
            let bytes = encode_container(&header, &values).unwrap();
            let (h, v): (serde_json::Value, Vec<f32>) = decode_container(&bytes).unwrap();
            prop_assert_eq!(h, header);
            prop_assert_eq!(v, values);
        }
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
