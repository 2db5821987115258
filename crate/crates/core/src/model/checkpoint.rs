//! Checkpoint container (little-endian):
//!   magic "HTCK" | version u32 | config JSON length u32 + UTF-8 JSON
//!   | blobs in declaration order, each as name length u32 + name
//!   | rank u32 + dims u32[] | f32 payload.
//!
//! Batch-norm running statistics are stored the same way after the
//! parameters, so an eval-mode reload reproduces training-time reports.

use std::path::Path;

use super::net::{HyperTransformerNet, ModelConfig};
use super::ModelError;
use crate::image::atomic_write;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HTCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn push_blob(buf: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f64]) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn save_checkpoint(path: &Path, net: &HyperTransformerNet) -> Result<(), ModelError> {
    let config = serde_json::to_vec(&net.cfg)
        .map_err(|e| ModelError::Contract(format!("config serialization failed: {e}")))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config);
    for (name, tensor) in net.named_params() {
        push_blob(&mut buf, &name, tensor.shape(), &tensor.data());
    }
    for (name, values) in net.named_buffers() {
        push_blob(&mut buf, &name, &[values.len()], &values);
    }
    atomic_write(path, &buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::Checkpoint {
                offset: self.bytes.len() as u64,
                msg: format!("truncated while reading {what} ({n} bytes at {})", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<HyperTransformerNet, ModelError> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::Checkpoint {
        offset: 0,
        msg: format!("cannot read {}: {e}", path.display()),
    })?;
    load_checkpoint_bytes(&bytes)
}

pub fn load_checkpoint_bytes(bytes: &[u8]) -> Result<HyperTransformerNet, ModelError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint {
            offset: 0,
            msg: "bad magic".into(),
        });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint {
            offset: 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let cfg_len = r.u32("config length")? as usize;
    let cfg_off = r.pos as u64;
    let cfg: ModelConfig = serde_json::from_slice(r.take(cfg_len, "config JSON")?)
        .map_err(|e| ModelError::Checkpoint {
            offset: cfg_off,
            msg: format!("bad config JSON: {e}"),
        })?;
    let net = HyperTransformerNet::new(cfg)?;
    let params = net.named_params();
    let mut param_iter = params.iter();
    let buffers = net.named_buffers();
    let mut buffer_iter = buffers.iter();
    while r.pos < bytes.len() {
        let name_len = r.u32("blob name length")? as usize;
        let name_off = r.pos as u64;
        let name = std::str::from_utf8(r.take(name_len, "blob name")?)
            .map_err(|_| ModelError::Checkpoint {
                offset: name_off,
                msg: "non-UTF8 blob name".into(),
            })?
            .to_string();
        let rank = r.u32("blob rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("blob dim")? as usize);
        }
        let n: usize = shape.iter().product();
        let payload = r.take(4 * n, "blob payload")?;
        let values: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if let Some((expect_name, tensor)) = param_iter.next() {
            if *expect_name != name || tensor.shape() != shape.as_slice() {
                return Err(ModelError::Checkpoint {
                    offset: name_off,
                    msg: format!(
                        "blob {name} {shape:?} does not match expected parameter {expect_name} {:?}",
                        tensor.shape()
                    ),
                });
            }
            tensor.update_data(|d| d.copy_from_slice(&values));
        } else if let Some((expect_name, buf)) = buffer_iter.next() {
            if *expect_name != name || buf.len() != n {
                return Err(ModelError::Checkpoint {
                    offset: name_off,
                    msg: format!("blob {name} does not match expected buffer {expect_name}"),
                });
            }
            net.set_buffer(&name, &values)?;
        } else {
            return Err(ModelError::Checkpoint {
                offset: name_off,
                msg: format!("unexpected extra blob {name}"),
            });
        }
    }
    if param_iter.next().is_some() || buffer_iter.next().is_some() {
        return Err(ModelError::Checkpoint {
            offset: bytes.len() as u64,
            msg: "checkpoint ends before all parameters were loaded".into(),
        });
    }
    Ok(net)
}
