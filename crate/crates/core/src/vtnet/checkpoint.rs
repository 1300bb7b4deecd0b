//! Binary checkpoint: `"VTN1"`, `u32` length + JSON config, `u32` array
//! count, then per array `u32` name length + name, `u32` rank + `u32` dims,
//! little-endian `f32` values; a trailing CRC-32 covers all preceding bytes.

use super::config::VTNetConfig;
use super::params::VTNetParams;
use crate::error::{Error, Result};
use crate::gradcore::{Parameters, Tensor};

pub const MAGIC: &[u8; 4] = b"VTN1";

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Values are stored as `f32`.
pub fn save_checkpoint(params: &VTNetParams, config: &VTNetConfig) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let json = serde_json::to_vec(config)?;
    put_u32(&mut out, json.len())?;
    out.extend_from_slice(&json);
    let named = params.named();
    put_u32(&mut out, named.len())?;
    for (name, tensor) in named {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, tensor.shape().len())?;
        for &d in tensor.shape() {
            put_u32(&mut out, d)?;
        }
        for &v in tensor.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

struct RawArray {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

fn decode(bytes: &[u8]) -> Result<(VTNetConfig, Vec<RawArray>)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("bad magic or unsupported version".into()));
    }
    if bytes.len() < MAGIC.len() + 4 {
        return Err(Error::Checkpoint("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let json_len = r.u32()?;
    let config: VTNetConfig = serde_json::from_slice(r.take(json_len)?)?;
    let count = r.u32()?;
    let mut arrays = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| Error::Checkpoint(format!("shape of `{name}` overflows")))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("array too large".into()))?)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        arrays.push(RawArray { name, shape, values });
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after arrays".into()));
    }
    Ok((config, arrays))
}

fn assemble(config: &VTNetConfig, arrays: Vec<RawArray>) -> Result<VTNetParams> {
    let mut params = VTNetParams::zeros(config)?;
    let expected: Vec<(String, Vec<usize>)> = params
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if expected.len() != arrays.len() {
        return Err(Error::shape(
            "checkpoint",
            format!("{} arrays stored, configuration needs {}", arrays.len(), expected.len()),
        ));
    }
    let mut tensors = Vec::with_capacity(arrays.len());
    for ((name, shape), raw) in expected.into_iter().zip(arrays) {
        if name != raw.name || shape != raw.shape {
            return Err(Error::shape(
                "checkpoint",
                format!("stored `{}` {:?}, expected `{name}` {shape:?}", raw.name, raw.shape),
            ));
        }
        tensors.push(Tensor::new(raw.shape, raw.values)?);
    }
    let mut iter = tensors.into_iter();
    params.visit_mut(&mut |t| *t = iter.next().expect("counted above"));
    if !params.all_finite() {
        return Err(Error::Checkpoint("non-finite parameter values".into()));
    }
    Ok(params)
}

/// Decodes a checkpoint against the configuration stored inside it.
pub fn load_checkpoint(bytes: &[u8]) -> Result<(VTNetParams, VTNetConfig)> {
    let (config, arrays) = decode(bytes)?;
    let params = assemble(&config, arrays)?;
    Ok((params, config))
}

/// Decodes a checkpoint and requires its arrays to fit `config`.
pub fn load_checkpoint_for(bytes: &[u8], config: &VTNetConfig) -> Result<VTNetParams> {
    let (_, arrays) = decode(bytes)?;
    assemble(config, arrays)
}
