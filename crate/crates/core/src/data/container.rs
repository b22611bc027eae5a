//! `MVDS` binary container.
//!
//! ```text
//! "MVDS" | version: u32 LE | samples: u64 LE | manifest bytes: u64 LE
//! manifest (UTF-8 JSON)
//! view blocks (f32 LE, one per view, in manifest order)
//! label block (u32 LE)
//! ```
//!
//! Block offsets in the manifest are relative to the first byte after the
//! manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Metadata, Task};
use crate::encoders::ViewSchema;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MVDS";
pub const VERSION: u32 = 1;
const HEADER: usize = 4 + 4 + 8 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Block {
    name: String,
    offset: u64,
    bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    task: Task,
    classes: usize,
    schemas: Vec<ViewSchema>,
    blocks: Vec<Block>,
    labels: Block,
    metadata: Vec<Metadata>,
}

pub fn encode(dataset: &Dataset) -> Result<Vec<u8>> {
    let n = dataset.len();
    let mut blocks = Vec::new();
    let mut offset = 0u64;
    for s in dataset.schemas() {
        let bytes = (n * s.sample_len() * 4) as u64;
        blocks.push(Block {
            name: s.name.clone(),
            offset,
            bytes,
        });
        offset += bytes;
    }
    let manifest = Manifest {
        task: dataset.task,
        classes: dataset.classes(),
        schemas: dataset.schemas().to_vec(),
        blocks,
        labels: Block {
            name: "labels".into(),
            offset,
            bytes: (n * 4) as u64,
        },
        metadata: dataset.metadata().to_vec(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(HEADER + json.len() + offset as usize + n * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for s in dataset.schemas() {
        for x in dataset.view_data(&s.name)? {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    for &y in dataset.labels() {
        out.extend_from_slice(&(y as u32).to_le_bytes());
    }
    Ok(out)
}

fn read_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().expect("4 bytes"))
}

fn read_u64(b: &[u8]) -> u64 {
    u64::from_le_bytes(b.try_into().expect("8 bytes"))
}

pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not an MVDS container (bad magic)".into()));
    }
    if bytes.len() < HEADER {
        return Err(Error::Truncated(format!("header needs {HEADER} bytes, file has {}", bytes.len())));
    }
    let version = read_u32(&bytes[4..8]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported MVDS version {version}")));
    }
    let n = read_u64(&bytes[8..16]) as usize;
    let mlen = read_u64(&bytes[16..24]) as usize;
    let data_start = HEADER
        .checked_add(mlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Truncated("manifest extends past end of file".into()))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[HEADER..data_start])
        .map_err(|e| Error::Format(format!("unreadable manifest: {e}")))?;
    if manifest.classes != manifest.task.classes() {
        return Err(Error::Format(format!(
            "manifest declares {} classes for a {:?} task",
            manifest.classes, manifest.task
        )));
    }
    if manifest.blocks.len() != manifest.schemas.len() || manifest.metadata.len() != n {
        return Err(Error::Format("manifest disagrees with the sample count or views".into()));
    }
    let body = &bytes[data_start..];
    let slice = |b: &Block, expected: usize| -> Result<&[u8]> {
        if b.bytes as usize != expected {
            return Err(Error::Format(format!(
                "block `{}` declares {} bytes, expected {expected}",
                b.name, b.bytes
            )));
        }
        let start = b.offset as usize;
        let end = start
            .checked_add(expected)
            .ok_or_else(|| Error::Format(format!("block `{}` offset overflows", b.name)))?;
        if end > body.len() {
            return Err(Error::Truncated(format!(
                "block `{}` needs bytes {start}..{end}, only {} present",
                b.name,
                body.len()
            )));
        }
        Ok(&body[start..end])
    };
    let mut views = Vec::with_capacity(manifest.schemas.len());
    for (s, b) in manifest.schemas.iter().zip(&manifest.blocks) {
        if s.name != b.name {
            return Err(Error::Format(format!("block `{}` listed for view `{}`", b.name, s.name)));
        }
        let raw = slice(b, n * s.sample_len() * 4)?;
        views.push(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
        );
    }
    let raw = slice(&manifest.labels, n * 4)?;
    let labels = raw.chunks_exact(4).map(|c| read_u32(c) as usize).collect();
    let used = manifest.labels.offset as usize + n * 4;
    if used != body.len() {
        return Err(Error::Format(format!("{} trailing bytes after the label block", body.len() - used)));
    }
    Dataset::new(manifest.task, manifest.schemas, views, labels, manifest.metadata)
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, encode(dataset)?).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
