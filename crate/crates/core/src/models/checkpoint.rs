//! Binary parameter checkpoints.
//!
//! Layout (little endian): magic `CGCN`, u32 version, u32 parameter count,
//! then per parameter a u32-length UTF-8 name, u32 rows, u32 cols and the
//! f64 payload; then u32 metadata count and `(name, f64)` pairs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"CGCN";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub meta: BTreeMap<String, f64>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_name(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn name(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("name is not UTF-8".into()))
    }
}

impl Checkpoint {
    pub fn new(params: ParamStore) -> Self {
        Self {
            params,
            meta: BTreeMap::new(),
        }
    }

    pub fn meta(&self, key: &str) -> Result<f64> {
        self.meta
            .get(key)
            .copied()
            .ok_or_else(|| Error::Format(format!("checkpoint lacks {key}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(16 + self.params.numel() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_u32(&mut out, self.params.len())?;
        for (name, t) in self.params.iter() {
            put_name(&mut out, name)?;
            put_u32(&mut out, t.rows())?;
            put_u32(&mut out, t.cols())?;
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        put_u32(&mut out, self.meta.len())?;
        for (k, v) in &self.meta {
            put_name(&mut out, k)?;
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION as usize {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut params = ParamStore::new();
        for _ in 0..r.u32()? {
            let name = r.name()?;
            let (rows, cols) = (r.u32()?, r.u32()?);
            let len = rows
                .checked_mul(cols)
                .filter(|&l| l <= (bytes.len() - r.pos) / 8)
                .ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            params.insert(name, Tensor::new(rows, cols, data)?);
        }
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.name()?;
            meta.insert(k, r.f64()?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self { params, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
