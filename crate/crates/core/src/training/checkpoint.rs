//! Checkpoint container: `MDCK`, u32 version, u32 CRC32 of the payload, then
//! named tensor blocks (u32 name length, UTF-8 name, tensor record).

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use mdgan_tensor::serialize::{Payload, RawTensor};
use mdgan_tensor::{Element, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::SamplerState;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MDCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const META_TENSOR: &str = "meta";

/// Run bookkeeping stored alongside the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: u32,
    pub iteration: u64,
    /// Effective configuration in `key = value` form.
    pub config: String,
    pub sampler: SamplerState,
    pub adam_g_t: u64,
    pub adam_d_t: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, RawTensor)>,
}

fn u32_le(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    let b = bytes
        .get(*pos..*pos + 4)
        .ok_or_else(|| Error::Integrity("checkpoint truncated".into()))?;
    *pos += 4;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&RawTensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensor<T: Element>(&self, name: &str) -> Option<Tensor<T>> {
        self.get(name).and_then(|raw| Tensor::from_raw(raw).ok())
    }

    /// Names under `prefix.`, with the prefix removed.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a RawTensor)> + 'a {
        self.tensors.iter().filter_map(move |(n, t)| {
            n.strip_prefix(prefix)
                .and_then(|rest| rest.strip_prefix('.'))
                .map(|rest| (rest, t))
        })
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.with_prefix(prefix).next().is_some()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Integrity(e.to_string()))?;
        let mut payload = Vec::new();
        let meta_raw = RawTensor::new(vec![meta.len()], Payload::U8(meta))?;
        for (name, t) in std::iter::once((META_TENSOR, &meta_raw)).chain(self.tensors.iter().map(|(n, t)| (n.as_str(), t))) {
            payload.extend_from_slice(&(name.len() as u32).to_le_bytes());
            payload.extend_from_slice(name.as_bytes());
            t.write_to(&mut payload)?;
        }
        let mut out = Vec::with_capacity(payload.len() + 12);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Integrity("not a checkpoint (bad magic)".into()));
        }
        let mut pos = 4;
        let version = u32_le(bytes, &mut pos)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let crc = u32_le(bytes, &mut pos)?;
        let payload = &bytes[pos..];
        if crc32fast::hash(payload) != crc {
            return Err(Error::Integrity("checkpoint CRC mismatch".into()));
        }
        let mut cur = Cursor::new(payload);
        let mut meta = None;
        let mut tensors = Vec::new();
        while (cur.position() as usize) < payload.len() {
            let mut len = [0u8; 4];
            cur.read_exact(&mut len)
                .map_err(|_| Error::Integrity("checkpoint block truncated".into()))?;
            let mut name = vec![0u8; u32::from_le_bytes(len) as usize];
            cur.read_exact(&mut name)
                .map_err(|_| Error::Integrity("checkpoint block name truncated".into()))?;
            let name = String::from_utf8(name).map_err(|_| Error::Integrity("checkpoint block name is not UTF-8".into()))?;
            let t = RawTensor::read_from(&mut cur).map_err(|e| Error::Integrity(format!("block {name}: {e}")))?;
            if name == META_TENSOR {
                let Payload::U8(json) = &t.payload else {
                    return Err(Error::Integrity("checkpoint metadata is not a byte block".into()));
                };
                meta = Some(serde_json::from_slice(json).map_err(|e| Error::Integrity(format!("metadata: {e}")))?);
            } else {
                tensors.push((name, t));
            }
        }
        let meta = meta.ok_or_else(|| Error::Integrity("checkpoint has no metadata".into()))?;
        Ok(Checkpoint { meta, tensors })
    }

    /// Writes through a temporary file so a crash never leaves a partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?).map_err(Error::io(&tmp))?;
        fs::rename(&tmp, path).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::io(path))?;
        Self::from_bytes(&bytes)
    }
}
