//! `CO3W` checkpoint files.
//!
//! Layout, little-endian: magic `CO3W`, u32 version, u32 layer count, then per
//! layer u32 out, u32 in, u8 activation code, `out * in` f64 weights and `out`
//! f64 biases; a trailing u32 CRC32 covers every preceding byte. The high bit of
//! the activation byte marks the first layer of each stack so the stack
//! boundaries survive the flat layer list.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, Dense, MlpStack, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CO3W";
pub const CHECKPOINT_VERSION: u32 = 1;
const STACK_START: u8 = 0x80;

pub fn encode_checkpoint(stacks: &[&MlpStack]) -> Vec<u8> {
    encode_with_version(stacks, CHECKPOINT_VERSION)
}

fn encode_with_version(stacks: &[&MlpStack], version: u32) -> Vec<u8> {
    let layers: usize = stacks.iter().map(|s| s.layers().len()).sum();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(layers as u32).to_le_bytes());
    for s in stacks {
        for (i, l) in s.layers().iter().enumerate() {
            out.extend_from_slice(&(l.outputs() as u32).to_le_bytes());
            out.extend_from_slice(&(l.inputs() as u32).to_le_bytes());
            out.push(l.activation.code() | if i == 0 { STACK_START } else { 0 });
            for v in l.weight.data().iter().chain(&l.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.at.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("layer size overflows".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<MlpStack>> {
    if bytes.len() < 16 {
        return Err(Error::Format("checkpoint is truncated".into()));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Reader { bytes: payload, at: 4 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let count = r.u32()?;
    let mut stacks = Vec::new();
    let mut current: Vec<Dense> = Vec::new();
    for _ in 0..count {
        let out = r.u32()? as usize;
        let inp = r.u32()? as usize;
        let code = r.take(1)?[0];
        let activation = Activation::from_code(code & !STACK_START)
            .ok_or_else(|| Error::Format(format!("unknown activation code {}", code & !STACK_START)))?;
        if code & STACK_START != 0 && !current.is_empty() {
            stacks.push(MlpStack::from_layers(std::mem::take(&mut current))?);
        } else if code & STACK_START == 0 && current.is_empty() {
            return Err(Error::Format("first layer is not marked as a stack start".into()));
        }
        let weight = Tensor::from_vec(out, inp, r.f64s(out * inp)?)?;
        let bias = r.f64s(out)?;
        current.push(Dense::new(weight, bias, activation)?);
    }
    if !current.is_empty() {
        stacks.push(MlpStack::from_layers(current)?);
    }
    if r.at != payload.len() {
        return Err(Error::Format(format!("{} trailing bytes after the last layer", payload.len() - r.at)));
    }
    Ok(stacks)
}

pub fn save_checkpoint(stacks: &[&MlpStack], path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(stacks)).map_err(Error::at(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<MlpStack>> {
    decode_checkpoint(&std::fs::read(path).map_err(Error::at(path))?)
}
