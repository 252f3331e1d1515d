//! `LDNW` weight files (little-endian):
//!
//! ```text
//! "LDNW" | u32 version=1 | u32 count | count × { u16 name_len | name | u8 ndim | ndim × u32 | f32 values }
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsio;
use crate::network::config::ModelConfig;
use crate::network::model::LaneNet;
use crate::params::ModelParams;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LDNW";
pub const VERSION: u32 = 1;

pub fn encode_weights(params: &ModelParams<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + params.entries().iter().map(|p| 4 * p.tensor.len() + 64).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.entries() {
        let name = p.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Config(format!("parameter name `{}` is too long", p.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(p.tensor.ndim() as u8);
        for &d in p.tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_weights(params: &ModelParams<f32>, path: &Path) -> Result<()> {
    fsio::write_atomic(path, &encode_weights(params)?)
}

/// Decodes `bytes` into tensors shaped and named exactly like `template`,
/// failing on the first tensor that differs.
pub fn decode_weights(bytes: &[u8], template: &ModelParams<f32>, context: &str) -> Result<ModelParams<f32>> {
    let mut r = Reader { bytes, pos: 0, context };
    if r.take(4)? != MAGIC {
        return Err(Error::format(context, "bad magic, expected LDNW"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(context, format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let expected = template.entries();
    let mut tensors = Vec::with_capacity(expected.len());
    for (index, want) in expected.iter().enumerate() {
        if index >= count {
            return Err(Error::WeightMismatch {
                index,
                name: want.name.clone(),
                detail: format!("file holds only {count} tensors"),
            });
        }
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::format(context, format!("tensor #{index}: name is not UTF-8")))?
            .to_owned();
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if name != want.name {
            return Err(Error::WeightMismatch {
                index,
                name: want.name.clone(),
                detail: format!("file has `{name}`"),
            });
        }
        if shape != want.tensor.shape() {
            return Err(Error::WeightMismatch {
                index,
                name,
                detail: format!("file shape {:?}, model expects {:?}", shape, want.tensor.shape()),
            });
        }
        let len: usize = shape.iter().product();
        let raw = r.take(4 * len)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(Tensor::from_vec(&shape, data)?);
    }
    if count != expected.len() {
        return Err(Error::WeightMismatch {
            index: expected.len(),
            name: "<end>".into(),
            detail: format!("file holds {count} tensors, model expects {}", expected.len()),
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(context, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    template.with_tensors(tensors)
}

/// Loads a weight file for the architecture described by `config`.
pub fn load_weights(path: &Path, config: &ModelConfig) -> Result<(LaneNet, ModelParams<f32>)> {
    let (net, template) = LaneNet::build::<f32>(config)?;
    let bytes = fsio::read(path)?;
    let params = decode_weights(&bytes, &template, &path.display().to_string())?;
    Ok((net, params))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    context: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(
                self.context,
                format!("truncated: needed {n} bytes at offset {}, file is {} bytes", self.pos, self.bytes.len()),
            )
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
