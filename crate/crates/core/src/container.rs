//! The `LARK` binary container shared by checkpoints and preprocessed tensor files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LARK"                      4 bytes magic
//! version                     u32
//! metadata length             u32, followed by UTF-8 `key=value` lines
//! tensor count                u32
//! per tensor:
//!   name length               u16, followed by UTF-8 name
//!   rank                      u8
//!   dims                      u64 x rank
//!   data                      f64 x product(dims)
//! checksum                    u64, FNV-1a over every preceding byte
//! ```

use std::collections::BTreeMap;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LARK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "tensor {name}: shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { name, shape, data })
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::Shape(format!(
                "tensor {}: expected shape {shape:?}, found {:?}",
                self.name, self.shape
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<Tensor>,
}

pub fn checksum(bytes: &[u8]) -> u64 {
    let mut hasher = FnvHasher::default();
    hasher.write(bytes);
    hasher.finish()
}

impl Container {
    pub fn new(kind: &str) -> Self {
        let mut c = Container::default();
        c.set_meta("kind", kind);
        c
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("missing metadata key `{key}`")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key)?;
        raw.parse()
            .map_err(|_| Error::Format(format!("bad value `{raw}` for metadata key `{key}`")))
    }

    pub fn push(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        if self.tensors.iter().any(|t| t.name == name) {
            return Err(Error::Format(format!("duplicate tensor `{name}`")));
        }
        self.tensors.push(Tensor::new(name, shape, data)?);
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());

        let mut meta = String::new();
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Format(format!("metadata entry `{k}` not encodable")));
            }
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        out.extend_from_slice(&len_u32(meta.len())?.to_le_bytes());
        out.extend_from_slice(meta.as_bytes());

        out.extend_from_slice(&len_u32(self.tensors.len())?.to_le_bytes());
        for t in &self.tensors {
            let name_len = u16::try_from(t.name.len())
                .map_err(|_| Error::Format(format!("tensor name too long: {}", t.name)))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            let rank = u8::try_from(t.shape.len())
                .map_err(|_| Error::Format(format!("tensor {} rank too large", t.name)))?;
            out.push(rank);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let sum = checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 4 + 8 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a LARK container (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let (payload, trailer) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(trailer.try_into().unwrap());
        let computed = checksum(payload);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }

        let mut r = Reader {
            buf: payload,
            pos: 8,
        };
        let meta_len = r.u32()? as usize;
        let meta_text = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
        let mut meta = BTreeMap::new();
        for line in meta_text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad metadata line `{line}`")))?;
            meta.insert(k.to_string(), v.to_string());
        }

        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
                shape.push(usize::try_from(d).map_err(|_| Error::Format("dim overflow".into()))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("tensor {name} too large")))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("overflow".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Tensor { name, shape, data });
        }
        if r.pos != payload.len() {
            return Err(Error::Format("trailing bytes before checksum".into()));
        }
        Ok(Container { meta, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("length {n} exceeds u32")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("unexpected end of container".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Container {
        let mut c = Container::new("test");
        c.set_meta("hidden_size", 3);
        c.push("w", vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, f64::MIN_POSITIVE, 1e300])
            .unwrap();
        c.push("b", vec![3], vec![0.25, 0.5, 0.75]).unwrap();
        c
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"LARK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let n = bytes.len();
        let sum = u64::from_le_bytes(bytes[n - 8..].try_into().unwrap());
        assert_eq!(sum, checksum(&bytes[..n - 8]));
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let mut bytes = sample().to_bytes().unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(
            Container::from_bytes(&bytes),
            Err(Error::Checksum { .. })
        ));
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            Container::from_bytes(&bytes),
            Err(Error::Version { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn bad_magic() {
        assert!(matches!(
            Container::from_bytes(b"RIFF\x01\0\0\0\0\0\0\0\0\0\0\0"),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn shape_data_mismatch_rejected() {
        let mut c = Container::new("x");
        assert!(c.push("t", vec![2, 2], vec![1.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(rows in 0usize..5, cols in 1usize..5, seed in any::<u64>()) {
            let data: Vec<f64> = (0..rows * cols)
                .map(|i| ((seed.wrapping_mul(i as u64 + 1)) as f64).sin())
                .collect();
            let mut c = Container::new("prop");
            c.set_meta("seed", seed);
            c.push("t", vec![rows, cols], data).unwrap();
            let back = Container::from_bytes(&c.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
