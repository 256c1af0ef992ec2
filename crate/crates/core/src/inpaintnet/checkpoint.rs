//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//! `"RNCKPT"`, `u32` version, `u8` element width, `u32` config length and the
//! config text, `u32` entry count, then per entry sorted by name: `u32` name
//! length, name bytes, `u8` trainable flag, four `u32` dims, raw values.
//! Identical models always produce identical bytes.

use std::path::Path;

use super::config::GeneratorConfig;
use super::generator::Generator;
use crate::error::{Error, Result};
use crate::tensor::{Element, Module, Shape, Tensor};

pub const MAGIC: &[u8; 6] = b"RNCKPT";
pub const VERSION: u32 = 1;

pub fn to_bytes<T: Element>(generator: &Generator<T>) -> Vec<u8> {
    let mut params = generator.params();
    params.sort_by(|a, b| a.name().cmp(b.name()));
    let config = generator.config().to_text();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::BYTES);
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.name().len() as u32).to_le_bytes());
        out.extend_from_slice(p.name().as_bytes());
        out.push(u8::from(p.trainable()));
        for d in p.value().shape().dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value().data() {
            v.write_le(&mut out);
        }
    }
    out
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

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn from_bytes<T: Element>(bytes: &[u8]) -> Result<Generator<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let width = r.u8()?;
    if width != T::BYTES {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {width}-byte values, expected {}",
            T::BYTES
        )));
    }
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
    let config = GeneratorConfig::from_text(text)?;
    let mut generator = Generator::<T>::new(config, 0)?;

    let count = r.u32()? as usize;
    let mut loaded = std::collections::HashMap::with_capacity(count);
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_owned();
        let _trainable = r.u8()?;
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let shape = Shape::from_dims(dims);
        let raw = r.take(shape.numel() * width as usize)?;
        let data = raw.chunks_exact(width as usize).map(T::read_le).collect();
        loaded.insert(name, Tensor::from_vec(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    for p in generator.params_mut() {
        let value = loaded
            .remove(p.name())
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", p.name())))?;
        p.set_value(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    if let Some(extra) = loaded.keys().min() {
        return Err(Error::Checkpoint(format!("unexpected parameter `{extra}`")));
    }
    Ok(generator)
}

pub fn save<T: Element>(generator: &Generator<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(generator)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Element>(path: impl AsRef<Path>) -> Result<Generator<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
