//! `MVLC` checkpoint files.
//!
//! ```text
//! "MVLC" | version: u32 LE | manifest bytes: u64 LE
//! manifest (UTF-8 JSON: fusion config, views, seed, tensor list)
//! f64 LE values of every listed tensor, in list order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::ViewSchema;
use crate::fusion::{FusionConfig, MvlModel};
use crate::tensor::{ParamStore, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MVLC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    /// Ensemble member view, if any.
    member: Option<String>,
    name: String,
    buffer: bool,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    config: FusionConfig,
    views: Vec<ViewSchema>,
    seed: u64,
    tensors: Vec<Entry>,
}

fn stores(model: &MvlModel) -> Vec<(Option<String>, &ParamStore)> {
    if model.members().is_empty() {
        vec![(None, &model.store)]
    } else {
        model
            .members()
            .iter()
            .zip(&model.views)
            .map(|(m, v)| (Some(v.name.clone()), &m.store))
            .collect()
    }
}

pub fn encode_checkpoint(model: &MvlModel) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut values: Vec<&Tensor> = Vec::new();
    for (member, store) in stores(model) {
        for p in store.params() {
            tensors.push(Entry {
                member: member.clone(),
                name: p.name.clone(),
                buffer: false,
                shape: p.value.shape().to_vec(),
            });
            values.push(&p.value);
        }
        for b in store.buffers() {
            tensors.push(Entry {
                member: member.clone(),
                name: b.name.clone(),
                buffer: true,
                shape: b.value.shape().to_vec(),
            });
            values.push(&b.value);
        }
    }
    let manifest = Manifest {
        config: model.config.clone(),
        views: model.views.clone(),
        seed: model.seed,
        tensors,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in values {
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<MvlModel> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not an MVLC checkpoint (bad magic)".into()));
    }
    if bytes.len() < 16 {
        return Err(Error::Truncated("checkpoint header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let start = 16usize
        .checked_add(mlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Truncated("checkpoint manifest".into()))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[16..start]).map_err(|e| Error::Format(format!("checkpoint manifest: {e}")))?;
    let mut model = MvlModel::new(manifest.config, manifest.views, manifest.seed)?;
    let mut body = &bytes[start..];
    let views = model.views.clone();
    for e in &manifest.tensors {
        let n: usize = e.shape.iter().product();
        if body.len() < n * 8 {
            return Err(Error::Truncated(format!("values of `{}`", e.name)));
        }
        let data: Vec<f64> = body[..n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        body = &body[n * 8..];
        let store = match &e.member {
            None => &mut model.store,
            Some(v) => {
                let i = views
                    .iter()
                    .position(|s| &s.name == v)
                    .ok_or_else(|| Error::Format(format!("unknown ensemble member `{v}`")))?;
                &mut model.members_mut()[i].store
            }
        };
        let value = Tensor::new(e.shape.clone(), data)?;
        let slot = if e.buffer {
            store.buffers_mut().iter_mut().find(|b| b.name == e.name).map(|b| &mut b.value)
        } else {
            store.params_mut().iter_mut().find(|p| p.name == e.name).map(|p| &mut p.value)
        }
        .ok_or_else(|| Error::Format(format!("checkpoint tensor `{}` not in the model", e.name)))?;
        if slot.shape() != value.shape() {
            return Err(Error::Format(format!("shape mismatch for `{}`", e.name)));
        }
        *slot = value;
    }
    if !body.is_empty() {
        return Err(Error::Format("trailing bytes after checkpoint values".into()));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &MvlModel, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<MvlModel> {
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
