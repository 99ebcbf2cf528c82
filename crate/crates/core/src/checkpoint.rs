//! Binary checkpoint container.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic        8 bytes   "SIATCKPT"
//! version      u32       1
//! epoch        u64       epochs completed when written
//! config_len   u32
//! config       config_len bytes, model configuration as compact JSON
//! config_hash  32 bytes  SHA-256 of the config bytes
//! count        u32       number of tensors
//! count × {
//!   name_len   u32
//!   name       name_len bytes, UTF-8
//!   kind       u8        0 trainable, 1 buffer
//!   ndim       u32
//!   dims       ndim × u64
//!   offset     u64       first element, counted in f64 values from the data start
//! }
//! data         f64 values, tensors back to back in manifest order
//! ```

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, SiaTrans};
use crate::nn::{ParamBuilder, ParamKind, ParamStore};

pub const MAGIC: &[u8; 8] = b"SIATCKPT";
pub const VERSION: u32 = 1;

pub fn config_bytes(cfg: &ModelConfig) -> Vec<u8> {
    serde_json::to_vec(cfg).expect("model configuration serializes")
}

pub fn config_hash(cfg: &ModelConfig) -> [u8; 32] {
    Sha256::digest(config_bytes(cfg)).into()
}

pub fn to_bytes(cfg: &ModelConfig, store: &ParamStore, epoch: u64) -> Vec<u8> {
    let config = config_bytes(cfg);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&epoch.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&Sha256::digest(&config));
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (_, e) in store.entries() {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(match e.kind {
            ParamKind::Trainable => 0,
            ParamKind::Buffer => 1,
        });
        out.extend_from_slice(&(e.tensor.ndim() as u32).to_le_bytes());
        for &d in e.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += e.tensor.numel() as u64;
    }
    for (_, e) in store.entries() {
        for v in e.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save(path: &Path, cfg: &ModelConfig, store: &ParamStore, epoch: u64) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, to_bytes(cfg, store, epoch)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub epoch: u64,
    pub store: ParamStore,
}

impl Checkpoint {
    /// Parses a checkpoint and validates it against the architecture its
    /// configuration describes.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |why: String| Error::Checkpoint(why);
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let epoch = r.u64()?;
        let len = r.u32()? as usize;
        let config_raw = r.take(len)?;
        let hash = r.take(32)?;
        if Sha256::digest(config_raw).as_slice() != hash {
            return Err(bad("configuration hash mismatch".into()));
        }
        let config: ModelConfig =
            serde_json::from_slice(config_raw).map_err(|e| bad(format!("configuration: {e}")))?;
        let (_, mut store) = build(&config)?;

        let count = r.u32()? as usize;
        if count != store.len() {
            return Err(bad(format!("{count} tensors stored, architecture has {}", store.len())));
        }
        let mut manifest = Vec::with_capacity(count);
        for (id, e) in store.entries() {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?).map_err(|_| bad("tensor name is not UTF-8".into()))?;
            let kind = match r.take(1)?[0] {
                0 => ParamKind::Trainable,
                1 => ParamKind::Buffer,
                k => return Err(bad(format!("{name}: unknown kind {k}"))),
            };
            let ndim = r.u32()? as usize;
            let dims = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let offset = r.u64()? as usize;
            if name != e.name || kind != e.kind || dims != e.tensor.shape() {
                return Err(bad(format!(
                    "tensor {name} {dims:?} does not match {} {:?}",
                    e.name,
                    e.tensor.shape()
                )));
            }
            manifest.push((id, offset, e.tensor.numel()));
        }
        let data_start = r.pos;
        let total: usize = manifest.iter().map(|m| m.2).sum();
        if bytes.len() != data_start + 8 * total {
            return Err(bad(format!(
                "data section is {} bytes, manifest needs {}",
                bytes.len() - data_start,
                8 * total
            )));
        }
        for (id, offset, numel) in manifest {
            let start = data_start + 8 * offset;
            let end = start + 8 * numel;
            if end > bytes.len() {
                return Err(bad(format!("tensor {} exceeds the data section", store.entry(id).name)));
            }
            let values = bytes[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
            for (dst, v) in store.get_mut(id).data_mut().iter_mut().zip(values) {
                *dst = v;
            }
        }
        Ok(Self { config, epoch, store })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Fails unless the stored configuration is `expected`.
    pub fn expect_config(&self, expected: &ModelConfig) -> Result<()> {
        if config_hash(&self.config) != config_hash(expected) {
            return Err(Error::Checkpoint("checkpoint was written for a different model configuration".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<SiaTrans> {
        Ok(build(&self.config)?.0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        to_bytes(&self.config, &self.store, self.epoch)
    }
}

/// Module structure and a store of freshly initialized tensors.
fn build(cfg: &ModelConfig) -> Result<(SiaTrans, ParamStore)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = SiaTrans::new(&mut ParamBuilder::new(&mut store, &mut rng), cfg)?;
    Ok((model, store))
}
