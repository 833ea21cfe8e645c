//! FGS2 weight container.
//!
//! ```text
//! "FGS2"  u32 version (=1)  u32 tensor count
//! per tensor:
//!     u16 name length, UTF-8 name
//!     u8 rank, rank × u32 dims
//!     f32 values, row-major
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::network::{ModelConfig, ModelWeights};
use crate::tensor::Scalar;

pub const MAGIC: &[u8; 4] = b"FGS2";
pub const VERSION: u32 = 1;

/// Raw named tensors as stored in a container: name → (dims, values).
pub type NamedTensors = IndexMap<String, (Vec<usize>, Vec<f32>)>;

pub fn encode<T: Scalar>(weights: &ModelWeights<T>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(weights.len() as u32).to_le_bytes());
    for p in weights.iter() {
        let name = p.name.as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Weights(format!("tensor name '{}' too long", p.name)))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(name);
        let dims = p.file_dims();
        buf.push(dims.len() as u8);
        for d in dims {
            let d = u32::try_from(d).map_err(|_| Error::Weights(format!("dimension of '{}' too large", p.name)))?;
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for &v in p.value.data() {
            let v = v.to_f32().unwrap_or(f32::NAN);
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Weights(format!(
                "truncated file while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<NamedTensors> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Weights(format!("bad magic {magic:?}, expected \"FGS2\"")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Weights(format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut out = IndexMap::new();
    for idx in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Weights(format!("tensor {idx} has a non-UTF-8 name")))?
            .to_owned();
        let rank = r.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dims")? as usize);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Weights(format!("tensor '{name}' dims overflow")))?;
        let raw = r.take(
            numel
                .checked_mul(4)
                .ok_or_else(|| Error::Weights(format!("tensor '{name}' too large")))?,
            &format!("values of '{name}'"),
        )?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if out.insert(name.clone(), (dims, values)).is_some() {
            return Err(Error::Weights(format!("duplicate tensor '{name}'")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Weights(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

pub fn save_weights<T: Scalar>(weights: &ModelWeights<T>, path: &Path) -> Result<()> {
    let buf = encode(weights)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a container and validates it against `config`. Nothing is
/// returned unless every tensor is present and correctly shaped.
pub fn load_weights<T: Scalar>(path: &Path, config: &ModelConfig) -> Result<ModelWeights<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let named = decode(&bytes).map_err(|e| match e {
        Error::Weights(msg) => Error::Weights(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    let converted = named
        .into_iter()
        .map(|(k, (dims, vals))| (k, (dims, vals.into_iter().map(|v| T::lit(v as f64)).collect())))
        .collect();
    ModelWeights::from_named(config, converted)
}
