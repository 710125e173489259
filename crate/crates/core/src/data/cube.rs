//! HSIT cube and HSIL label files.
//!
//! Both formats are little-endian with a 4-byte magic and a `u32` version:
//!
//! ```text
//! HSIT: "HSIT" | u32 version=1 | u32 H | u32 W | u32 B | H*W*B f32 (band fastest)
//! HSIL: "HSIL" | u32 version=1 | u32 H | u32 W | u16 classes | H*W u16
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const CUBE_MAGIC: &[u8; 4] = b"HSIT";
const LABEL_MAGIC: &[u8; 4] = b"HSIL";
const VERSION: u32 = 1;

/// Hyperspectral raster, row-major `(row, col, band)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f32>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Format(format!(
                "cube dimensions must be positive, got {height}x{width}x{bands}"
            )));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(bands))
            .ok_or_else(|| Error::Format("cube dimensions overflow".into()))?;
        if data.len() != expected {
            return Err(Error::Format(format!(
                "cube payload has {} values, expected {expected}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite reflectance at offset {i}")));
        }
        Ok(Self {
            height,
            width,
            bands,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Spectrum of the pixel at flat index `p = row * width + col`.
    pub fn spectrum(&self, p: usize) -> &[f32] {
        &self.data[p * self.bands..(p + 1) * self.bands]
    }

    /// Copy with each band rescaled to [0, 1]; constant bands become 0.
    pub fn min_max_normalized(&self) -> Vec<f64> {
        let b = self.bands;
        let mut lo = vec![f64::INFINITY; b];
        let mut hi = vec![f64::NEG_INFINITY; b];
        for px in self.data.chunks_exact(b) {
            for (k, &v) in px.iter().enumerate() {
                lo[k] = lo[k].min(f64::from(v));
                hi[k] = hi[k].max(f64::from(v));
            }
        }
        let mut out = Vec::with_capacity(self.data.len());
        for px in self.data.chunks_exact(b) {
            for (k, &v) in px.iter().enumerate() {
                let range = hi[k] - lo[k];
                out.push(if range > 0.0 {
                    (f64::from(v) - lo[k]) / range
                } else {
                    0.0
                });
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.data.len());
        out.extend_from_slice(CUBE_MAGIC);
        for v in [VERSION, self.height as u32, self.width as u32, self.bands as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(CUBE_MAGIC)?;
        r.version()?;
        let h = r.u32()? as usize;
        let w = r.u32()? as usize;
        let b = r.u32()? as usize;
        let count = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(b))
            .filter(|c| c.checked_mul(4).is_some())
            .ok_or_else(|| Error::Format("cube dimensions overflow".into()))?;
        let payload = r.take(count * 4, "cube payload")?;
        r.finish()?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(h, w, b, data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

/// Per-pixel ground truth; 0 is unlabeled, 1..=classes are classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    classes: u16,
    labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, classes: u16, labels: Vec<u16>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Format("label map dimensions must be positive".into()));
        }
        if height.checked_mul(width) != Some(labels.len()) {
            return Err(Error::Format(format!(
                "label payload has {} values, expected {height}x{width}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > classes) {
            return Err(Error::Format(format!("label {bad} exceeds class count {classes}")));
        }
        Ok(Self {
            height,
            width,
            classes,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> u16 {
        self.classes
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, p: usize) -> u16 {
        self.labels[p]
    }

    pub fn annotated(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != 0)
            .map(|(i, _)| i)
    }

    pub fn matches(&self, cube: &HsiCube) -> bool {
        self.height == cube.height && self.width == cube.width
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + 2 * self.labels.len());
        out.extend_from_slice(LABEL_MAGIC);
        for v in [VERSION, self.height as u32, self.width as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.classes.to_le_bytes());
        for v in &self.labels {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(LABEL_MAGIC)?;
        r.version()?;
        let h = r.u32()? as usize;
        let w = r.u32()? as usize;
        let c = r.u16()?;
        let count = h
            .checked_mul(w)
            .filter(|c| c.checked_mul(2).is_some())
            .ok_or_else(|| Error::Format("label dimensions overflow".into()))?;
        let payload = r.take(count * 2, "label payload")?;
        r.finish()?;
        let labels = payload
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        Self::new(h, w, c, labels)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format(format!(
                "truncated {what}: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let m = self.take(4, "magic")?;
        if m != expected {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(m),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let v = self.u32()?;
        if v != VERSION {
            return Err(Error::Format(format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4, "header")?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2, "header")?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}
