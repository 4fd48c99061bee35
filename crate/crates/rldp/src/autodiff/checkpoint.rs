//! Checkpoint format: text manifest + little-endian f32 blob.
//!
//! Layout:
//!
//! ```text
//! rldp-checkpoint v1
//! meta <key> <value>
//! tensors <count>
//! tensor <section>/<name> <ndim> <dim0> ... <byte_offset>
//! ---
//! <f32 little-endian values, row-major, concatenated in manifest order>
//! ```
//!
//! Round-trips are value-exact at 32-bit precision; training state is f64 in
//! memory and narrows on save.

use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;

use super::tensor::{ParamStore, Tensor};
use crate::fsutil;
use crate::{Error, Result};

const MAGIC: &str = "rldp-checkpoint v1";

#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub sections: IndexMap<String, ParamStore>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn section(&self, name: &str) -> Result<&ParamStore> {
        self.sections
            .get(name)
            .ok_or_else(|| Error::MissingParam { name: format!("checkpoint section {name}") })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut manifest = String::new();
        let mut blob: Vec<u8> = Vec::new();
        writeln!(manifest, "{MAGIC}").unwrap();
        for (k, v) in &self.meta {
            writeln!(manifest, "meta {k} {v}").unwrap();
        }
        let count: usize = self.sections.values().map(ParamStore::len).sum();
        writeln!(manifest, "tensors {count}").unwrap();
        for (section, store) in &self.sections {
            for (name, t) in store.iter() {
                write!(manifest, "tensor {section}/{name} {}", t.shape().len()).unwrap();
                for d in t.shape() {
                    write!(manifest, " {d}").unwrap();
                }
                writeln!(manifest, " {}", blob.len()).unwrap();
                fsutil::push_f32_le(&mut blob, t.values());
            }
        }
        manifest.push_str("---\n");
        let mut bytes = manifest.into_bytes();
        bytes.extend_from_slice(&blob);
        fsutil::atomic_write(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let path_str = path.display().to_string();
        let bytes = std::fs::read(path)?;
        let (header, blob) = fsutil::split_header_blob(&bytes, &path_str)?;
        let bad = |detail: String| Error::Format { path: path_str.clone(), offset: None, detail };

        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad(format!("expected `{MAGIC}` magic line")));
        }
        let mut out = Checkpoint::new();
        let mut declared: Option<usize> = None;
        let mut seen = 0usize;
        for line in lines {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("meta") => {
                    let key = parts.next().ok_or_else(|| bad("meta line missing key".into()))?;
                    let value: Vec<&str> = parts.collect();
                    out.meta.push((key.to_string(), value.join(" ")));
                }
                Some("tensors") => {
                    let n = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad("bad tensors count".into()))?;
                    declared = Some(n);
                }
                Some("tensor") => {
                    let full_name =
                        parts.next().ok_or_else(|| bad("tensor line missing name".into()))?;
                    let ndim: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad("bad tensor rank".into()))?;
                    let mut shape = Vec::with_capacity(ndim);
                    for _ in 0..ndim {
                        shape.push(
                            parts
                                .next()
                                .and_then(|s| s.parse().ok())
                                .ok_or_else(|| bad(format!("bad shape for {full_name}")))?,
                        );
                    }
                    let offset: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad(format!("bad offset for {full_name}")))?;
                    let (section, name) = full_name.split_once('/').ok_or_else(|| {
                        bad(format!("tensor name {full_name} missing section prefix"))
                    })?;
                    let numel: usize = shape.iter().product();
                    let values = fsutil::read_f32_le(blob, offset, numel, &path_str)?;
                    out.sections
                        .entry(section.to_string())
                        .or_default()
                        .insert(name, Tensor::new(shape, values)?)?;
                    seen += 1;
                }
                Some(other) => return Err(bad(format!("unknown manifest line `{other}`"))),
                None => {}
            }
        }
        if let Some(n) = declared {
            if n != seen {
                return Err(bad(format!("manifest declares {n} tensors, found {seen}")));
            }
        }
        Ok(out)
    }
}
