//! The `MFRG` binary container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "MFRG"
//! version    u32
//! rows       u64
//! cols       u64
//! kind       u32 length + UTF-8 bytes
//! data       rows × cols f64, row-major
//! sections   u32 count, then per section:
//!              tag u32 length + UTF-8 bytes
//!              payload u64 length + bytes
//! ```
//!
//! Feature tables, PCA models, metrics, classifiers and fused feature sets
//! all share this container; they differ in the kind tag and in which
//! trailing sections they carry.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MFRG";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub matrix: DMatrix<f64>,
    pub sections: Vec<(String, Vec<u8>)>,
}

impl Container {
    pub fn new(kind: impl Into<String>, matrix: DMatrix<f64>) -> Self {
        Container {
            kind: kind.into(),
            matrix,
            sections: Vec::new(),
        }
    }

    pub fn with_section(mut self, tag: impl Into<String>, payload: Vec<u8>) -> Self {
        self.sections.push((tag.into(), payload));
        self
    }

    pub fn section(&self, tag: &str) -> Option<&[u8]> {
        self.sections
            .iter()
            .find(|(t, _)| t == tag)
            .map(|(_, p)| p.as_slice())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (rows, cols) = self.matrix.shape();
        let mut out = Vec::with_capacity(32 + rows * cols * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(rows as u64).to_le_bytes());
        out.extend_from_slice(&(cols as u64).to_le_bytes());
        put_str(&mut out, &self.kind);
        for i in 0..rows {
            for j in 0..cols {
                out.extend_from_slice(&self.matrix[(i, j)].to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (tag, payload) in &self.sections {
            put_str(&mut out, tag);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err("bad magic (expected MFRG)".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported container version {version}"));
        }
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let kind = r.string()?;
        let len = rows
            .checked_mul(cols)
            .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
            .ok_or_else(|| format!("truncated data: {rows}x{cols} matrix does not fit"))?;
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.f64()?);
        }
        let matrix = DMatrix::from_row_slice(rows, cols, &data);
        let count = r.u32()?;
        let mut sections = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let tag = r.string()?;
            let n = r.u64()? as usize;
            sections.push((tag, r.take(n)?.to_vec()));
        }
        if r.remaining() != 0 {
            return Err(format!("{} trailing bytes", r.remaining()));
        }
        Ok(Container {
            kind,
            matrix,
            sections,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Container::from_bytes(&bytes).map_err(|message| Error::Format {
            path: path.to_path_buf(),
            message,
        })
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if n > self.remaining() {
            return Err(format!("unexpected end of data at byte {}", self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }
}

/// Section payload: u64 count followed by length-prefixed strings.
pub fn encode_strings<S: AsRef<str>>(items: &[S]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(items.len() as u64).to_le_bytes());
    for s in items {
        put_str(&mut out, s.as_ref());
    }
    out
}

pub fn decode_strings(payload: &[u8]) -> std::result::Result<Vec<String>, String> {
    let mut r = Reader {
        bytes: payload,
        pos: 0,
    };
    let n = r.u64()? as usize;
    let mut out = Vec::with_capacity(n.min(payload.len()));
    for _ in 0..n {
        out.push(r.string()?);
    }
    Ok(out)
}

/// Section payload: u64 count followed by little-endian f64 values.
pub fn encode_f64s(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + values.len() * 8);
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_f64s(payload: &[u8]) -> std::result::Result<Vec<f64>, String> {
    let mut r = Reader {
        bytes: payload,
        pos: 0,
    };
    let n = r.u64()? as usize;
    if n.checked_mul(8) != Some(r.remaining()) {
        return Err("f64 section length mismatch".into());
    }
    (0..n).map(|_| r.f64()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let c = Container::new("gist", DMatrix::from_row_slice(1, 2, &[1.0, 2.0]));
        let b = c.to_bytes();
        assert_eq!(&b[0..4], b"MFRG");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[24..28].try_into().unwrap()), 4);
        assert_eq!(&b[28..32], b"gist");
        assert_eq!(f64::from_le_bytes(b[32..40].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(b[40..48].try_into().unwrap()), 2.0);
    }

    #[test]
    fn sections_round_trip() {
        let c = Container::new("x", DMatrix::zeros(0, 3))
            .with_section("ids", encode_strings(&["a", "bb"]))
            .with_section("v", encode_f64s(&[1.5, -2.0]));
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(decode_strings(back.section("ids").unwrap()).unwrap(), vec!["a", "bb"]);
        assert_eq!(decode_f64s(back.section("v").unwrap()).unwrap(), vec![1.5, -2.0]);
    }

    #[test]
    fn rejects_truncated() {
        let c = Container::new("x", DMatrix::from_element(4, 4, 1.0));
        let b = c.to_bytes();
        assert!(Container::from_bytes(&b[..b.len() - 9]).is_err());
        assert!(Container::from_bytes(b"NOPE").is_err());
    }
}
