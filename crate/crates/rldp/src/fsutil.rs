//! Small filesystem helpers: atomic writes and little-endian f32 blobs.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

/// Write via a sibling temp file and rename, so readers never observe a
/// partially written artifact.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn push_f32_le(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Read `count` f32 values starting at `offset` bytes into `blob`.
pub fn read_f32_le(blob: &[u8], offset: usize, count: usize, path: &str) -> Result<Vec<f64>> {
    let end = offset
        .checked_add(count * 4)
        .filter(|&e| e <= blob.len())
        .ok_or_else(|| Error::Format {
            path: path.into(),
            offset: Some(blob.len() as u64),
            detail: format!(
                "blob truncated: need {} bytes at offset {}, have {}",
                count * 4,
                offset,
                blob.len()
            ),
        })?;
    Ok(blob[offset..end]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect())
}

/// Split a `header\n---\nblob` file into header text and blob bytes.
pub fn split_header_blob<'a>(bytes: &'a [u8], path: &str) -> Result<(&'a str, &'a [u8])> {
    const MARKER: &[u8] = b"\n---\n";
    let pos = bytes
        .windows(MARKER.len())
        .position(|w| w == MARKER)
        .ok_or_else(|| Error::Format {
            path: path.into(),
            offset: None,
            detail: "missing `---` header terminator".into(),
        })?;
    let header = std::str::from_utf8(&bytes[..pos]).map_err(|e| Error::Format {
        path: path.into(),
        offset: Some(e.valid_up_to() as u64),
        detail: "header is not valid UTF-8".into(),
    })?;
    Ok((header, &bytes[pos + MARKER.len()..]))
}
