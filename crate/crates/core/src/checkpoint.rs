//! The `NTCK` named-tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "NTCK"  u32 version (=1)  u32 tensor_count
//! repeated tensor_count times:
//!     u16 name_len  name (UTF-8)  u8 dtype (0 = f32)  u8 rank  rank × u32 extents  payload
//! u32 iteration  u32 config_len  config (UTF-8)
//! ```
//!
//! Decoding validates the whole buffer before returning anything, so a
//! truncated or corrupt file never yields partial state.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"NTCK";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub tensors: IndexMap<String, Tensor>,
    pub iteration: u32,
    pub config: String,
}

impl Container {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Import(vec![format!("missing tensor {name}")]))
    }

    /// Looks up a `key=value` line of the config snapshot.
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.lines().find_map(|l| {
            let (k, v) = l.split_once('=')?;
            (k.trim() == key).then(|| v.trim())
        })
    }
}

pub fn encode(tensors: &[(String, Tensor)], iteration: u32, config: &str) -> Result<Vec<u8>> {
    let payload: usize = tensors.iter().map(|(n, t)| 8 + n.len() + 4 * (t.rank() + t.len())).sum();
    let mut out = Vec::with_capacity(16 + payload + config.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(tensors.len()).map_err(|_| too_big("tensor count"))?.to_le_bytes());
    for (name, t) in tensors {
        let len = u16::try_from(name.len()).map_err(|_| too_big("tensor name"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.push(u8::try_from(t.rank()).map_err(|_| too_big("tensor rank"))?);
        for &d in t.shape() {
            out.extend_from_slice(&u32::try_from(d).map_err(|_| too_big("extent"))?.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&iteration.to_le_bytes());
    out.extend_from_slice(&u32::try_from(config.len()).map_err(|_| too_big("config"))?.to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    Ok(out)
}

fn too_big(what: &str) -> Error {
    Error::contract("checkpoint::encode", format!("{what} exceeds the container limits"))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Corrupt(format!(
                "truncated while reading {what} at byte {} ({} bytes total)",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
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

pub fn decode(buf: &[u8]) -> Result<Container> {
    let mut c = Cursor { buf, pos: 0 };
    let magic: [u8; 4] = c.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: MAGIC,
        });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = c.u32("tensor count")? as usize;
    let mut tensors = IndexMap::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let len = c.u16("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::Corrupt(format!("tensor {i} has a non-UTF-8 name")))?
            .to_string();
        let dtype = c.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(Error::Corrupt(format!("{name}: unknown dtype {dtype}")));
        }
        let rank = c.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("extent")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|n| n.checked_mul(4).is_some())
            .ok_or_else(|| Error::Corrupt(format!("{name}: extents {shape:?} overflow")))?;
        let bytes = c.take(4 * n, &format!("payload of {name}"))?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Corrupt(format!("{name}: {e}")))?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::Corrupt(format!("duplicate tensor {name}")));
        }
    }
    let iteration = c.u32("iteration counter")?;
    let clen = c.u32("config length")? as usize;
    let config = std::str::from_utf8(c.take(clen, "config snapshot")?)
        .map_err(|_| Error::Corrupt("config snapshot is not UTF-8".into()))?
        .to_string();
    if c.pos != buf.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after the config snapshot",
            buf.len() - c.pos
        )));
    }
    Ok(Container {
        tensors,
        iteration,
        config,
    })
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_container(
    path: impl AsRef<Path>,
    tensors: &[(String, Tensor)],
    iteration: u32,
    config: &str,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(tensors, iteration, config)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Container> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
