//! Named-tensor binary files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ARST" | version u16 | count u32
//! count × ( name_len u16 | name utf-8 | dtype u8 | rank u8 | extents u32×rank | payload )
//! crc32 u32 over every preceding byte
//! ```
//!
//! dtype 0 is f32, 1 is f64. Names beginning with `__` are reserved for
//! non-tensor records (configuration blobs, counters).

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use arst_tensor::{DType, Scalar, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ARST";
pub const VERSION: u16 = 1;
pub const RESERVED_PREFIX: &str = "__";

#[derive(Debug, Clone, PartialEq)]
pub enum Stored {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl Stored {
    pub fn dtype(&self) -> DType {
        match self {
            Stored::F32(_) => DType::F32,
            Stored::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Stored::F32(t) => t.shape(),
            Stored::F64(t) => t.shape(),
        }
    }

    fn of<S: Scalar>(t: &Tensor<S>) -> Self {
        match S::DTYPE {
            DType::F32 => Stored::F32(t.cast()),
            DType::F64 => Stored::F64(t.cast()),
        }
    }

    /// Convert to `S`; exact when the stored dtype is `S` itself.
    pub fn to<S: Scalar>(&self) -> Tensor<S> {
        match self {
            Stored::F32(t) => t.cast(),
            Stored::F64(t) => t.cast(),
        }
    }

    fn bit_eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Stored::F32(a), Stored::F32(b)) => a.bit_eq(b),
            (Stored::F64(a), Stored::F64(b)) => a.bit_eq(b),
            _ => false,
        }
    }
}

/// Ordered collection of uniquely named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightFile {
    entries: Vec<(String, Stored)>,
}

impl WeightFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Stored)> {
        self.entries.iter().map(|(n, s)| (n.as_str(), s))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    pub fn insert_stored(&mut self, name: impl Into<String>, value: Stored) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name.len() > u16::MAX as usize {
            return Err(Error::Format(format!(
                "tensor name length {} is out of range",
                name.len()
            )));
        }
        if self.contains(&name) {
            return Err(Error::Format(format!("duplicate tensor name {name}")));
        }
        if value.shape().len() > u8::MAX as usize
            || value.shape().iter().any(|&e| e > u32::MAX as usize)
        {
            return Err(Error::Format(format!(
                "tensor {name} has unrepresentable shape {:?}",
                value.shape()
            )));
        }
        self.entries.push((name, value));
        Ok(())
    }

    /// Store `t` with its own dtype.
    pub fn insert<S: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<S>) -> Result<()> {
        self.insert_stored(name, Stored::of(t))
    }

    pub fn get(&self, name: &str) -> Option<&Stored> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn tensor<S: Scalar>(&self, name: &str) -> Result<Tensor<S>> {
        self.get(name)
            .map(Stored::to)
            .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
    }

    /// Store arbitrary bytes under a reserved name, one f32 per byte.
    pub fn insert_blob(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let name = reserved(name);
        let data: Vec<f32> = if bytes.is_empty() {
            vec![-1.0]
        } else {
            bytes.iter().map(|&b| b as f32).collect()
        };
        self.insert_stored(name, Stored::F32(Tensor::from_vec(&[data.len()], data)?))
    }

    pub fn blob(&self, name: &str) -> Result<Vec<u8>> {
        let t: Tensor<f32> = self.tensor(&reserved(name))?;
        if t.data() == [-1.0] {
            return Ok(Vec::new());
        }
        t.data()
            .iter()
            .map(|&v| {
                if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
                    Ok(v as u8)
                } else {
                    Err(Error::Format(format!(
                        "blob {name} holds non-byte value {v}"
                    )))
                }
            })
            .collect()
    }

    /// Names not listed in `known`, in file order.
    pub fn extras<'a>(&'a self, known: &HashSet<&str>) -> Vec<&'a str> {
        self.names().filter(|n| !known.contains(n)).collect()
    }

    /// True when both files hold the same names, dtypes and bits in order.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, a), (nb, b))| na == nb && a.bit_eq(b))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, value) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(value.dtype().tag());
            out.push(value.shape().len() as u8);
            for &e in value.shape() {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            match value {
                Stored::F32(t) => t
                    .data()
                    .iter()
                    .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                Stored::F64(t) => t
                    .data()
                    .iter()
                    .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parse a complete file. Nothing is returned unless the checksum and
    /// every record are valid.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 2 + 4 + 4 {
            return Err(Error::Format(format!(
                "file truncated at {} bytes",
                bytes.len()
            )));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored_crc = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if &body[..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let actual = crc32fast::hash(body);
        if actual != stored_crc {
            return Err(Error::Format(format!(
                "checksum mismatch: stored {stored_crc:08x}, computed {actual:08x}"
            )));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(r.array()?);
        let mut file = WeightFile::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.array()?) as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let [tag, rank] = r.array()?;
            let dtype = DType::from_tag(tag)
                .ok_or_else(|| Error::Format(format!("unknown dtype tag {tag}")))?;
            let shape = (0..rank)
                .map(|_| r.array().map(|b| u32::from_le_bytes(b) as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .ok_or_else(|| Error::Format(format!("tensor {name} is too large")))?;
            let payload = r.take(
                numel
                    .checked_mul(dtype.size())
                    .ok_or_else(|| Error::Format("overflow".into()))?,
            )?;
            let value = match dtype {
                DType::F32 => Stored::F32(Tensor::from_vec(
                    &shape,
                    payload
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )?),
                DType::F64 => Stored::F64(Tensor::from_vec(
                    &shape,
                    payload
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )?),
            };
            file.insert_stored(name, value)?;
        }
        if r.pos != body.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after last tensor",
                body.len() - r.pos
            )));
        }
        Ok(file)
    }

    /// Write atomically: a temporary sibling is renamed over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("partial");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.encode())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| {
            Error::Config(format!("cannot read weight file {}: {e}", path.display()))
        })?;
        Self::decode(&bytes)
    }
}

fn reserved(name: &str) -> String {
    if name.starts_with(RESERVED_PREFIX) {
        name.to_string()
    } else {
        format!("{RESERVED_PREFIX}{name}")
    }
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
            .ok_or_else(|| {
                Error::Format(format!(
                    "file truncated: need {n} bytes at offset {}",
                    self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}
