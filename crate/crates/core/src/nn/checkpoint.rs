//! Binary checkpoints: `GTCN`, a little-endian u32 version, a u64-prefixed
//! JSON header, then the parameter buffers (and optionally the Adam moments)
//! as little-endian f64 in layer order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::model::{LayerSpec, Model};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GTCN";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    input: [usize; 3],
    layers: Vec<LayerSpec>,
    seed: u64,
    optimizer_step: Option<u64>,
}

pub fn checkpoint_bytes(model: &Model, optimizer: Option<&AdamState>) -> Result<Vec<u8>> {
    let header = Header {
        input: model.input_shape(),
        layers: model.specs().to_vec(),
        seed: model.seed(),
        optimizer_step: optimizer.map(|s| s.step),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let mut push = |groups: &[Vec<Tensor>]| {
        for v in groups.iter().flatten().flat_map(|t| t.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    push(model.params());
    if let Some(state) = optimizer {
        push(&state.m);
        push(&state.v);
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, model: &Model, optimizer: Option<&AdamState>) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(model, optimizer)?).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Truncated(format!(
                    "needed {n} bytes for {what} at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn groups_like(&mut self, like: &[Vec<Tensor>], what: &str) -> Result<Vec<Vec<Tensor>>> {
        like.iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|t| {
                        let raw = self.take(t.len() * 8, what)?;
                        let data = raw
                            .chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                            .collect();
                        Tensor::new(t.dims().to_vec(), data)
                    })
                    .collect()
            })
            .collect()
    }
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(Model, Option<AdamState>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic, not a GTCN checkpoint".into()));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let len = u64::from_le_bytes(r.take(8, "header length")?.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| Error::Format(format!("header length {len} too large")))?;
    let header: Header = serde_json::from_slice(r.take(len, "header")?)
        .map_err(|e| Error::Format(format!("header JSON: {e}")))?;

    // Builds the parameter layout; the weights are overwritten below.
    let template = Model::new(header.input, header.layers.clone(), header.seed)
        .map_err(|e| Error::Format(format!("layer list: {e}")))?;
    let params = r.groups_like(template.params(), "parameters")?;
    let optimizer = match header.optimizer_step {
        Some(step) => Some(AdamState {
            m: r.groups_like(&params, "first moments")?,
            v: r.groups_like(&params, "second moments")?,
            step,
        }),
        None => None,
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let model = Model::from_parts(header.input, header.layers, params, header.seed)?;
    Ok((model, optimizer))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, Option<AdamState>)> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    checkpoint_from_bytes(&bytes)
}
