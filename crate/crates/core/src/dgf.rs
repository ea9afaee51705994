//! `DGF1` binary grid files.
//!
//! Layout (all little-endian): magic `DGF1`, `u32` width, `u32` height,
//! `f32` cell size, `u32` channel count, then per channel a `u16` name
//! length, the UTF-8 name and `width * height` `f32` values, row-major
//! with `j` outer and `i` inner.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{DslpError, Result};
use crate::field::GridField;

pub const MAGIC: &[u8; 4] = b"DGF1";

/// In-memory image of a `DGF1` file. Values are kept as `f32` so a
/// read/write cycle reproduces the input bytes exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct DgfFile {
    pub width: u32,
    pub height: u32,
    pub cell_size: f32,
    pub channels: Vec<(String, Vec<f32>)>,
}

impl DgfFile {
    pub fn new(width: usize, height: usize, cell_size: f64) -> Self {
        Self {
            width: width as u32,
            height: height as u32,
            cell_size: cell_size as f32,
            channels: Vec::new(),
        }
    }

    pub fn push_field(&mut self, name: impl Into<String>, field: &GridField) -> Result<()> {
        if field.width() as u32 != self.width || field.height() as u32 != self.height {
            return Err(DslpError::DimensionMismatch(format!(
                "field {}x{} in a {}x{} file",
                field.width(),
                field.height(),
                self.width,
                self.height
            )));
        }
        self.channels
            .push((name.into(), field.values().iter().map(|&v| v as f32).collect()));
        Ok(())
    }

    pub fn channel(&self, name: &str) -> Option<&[f32]> {
        self.channels
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn has(&self, name: &str) -> bool {
        self.channel(name).is_some()
    }

    pub fn field(&self, name: &str) -> Result<GridField> {
        let values = self
            .channel(name)
            .ok_or_else(|| DslpError::Format(format!("missing channel `{name}`")))?;
        GridField::from_values(
            self.width as usize,
            self.height as usize,
            self.cell_size as f64,
            values.iter().map(|&v| v as f64).collect(),
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let n = (self.width as usize) * (self.height as usize);
        let mut out = Vec::with_capacity(20 + self.channels.len() * (n * 4 + 16));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.cell_size.to_le_bytes());
        out.extend_from_slice(&(self.channels.len() as u32).to_le_bytes());
        for (name, values) in &self.channels {
            let len = u16::try_from(name.len())
                .map_err(|_| DslpError::Format(format!("channel name too long: {} bytes", name.len())))?;
            if values.len() != n {
                return Err(DslpError::Format(format!(
                    "channel `{name}` has {} values, expected {n}",
                    values.len()
                )));
            }
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(DslpError::Format("bad magic, expected DGF1".into()));
        }
        let width = read_u32(&mut r)?;
        let height = read_u32(&mut r)?;
        let cell_size = f32::from_bits(read_u32(&mut r)?);
        let count = read_u32(&mut r)?;
        let n = (width as usize)
            .checked_mul(height as usize)
            .ok_or_else(|| DslpError::Format("grid too large".into()))?;
        let mut channels = Vec::new();
        for _ in 0..count {
            let mut len = [0u8; 2];
            read_exact(&mut r, &mut len)?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| DslpError::Format("channel name is not UTF-8".into()))?;
            if r.len() < n * 4 {
                return Err(DslpError::Format(format!("truncated channel `{name}`")));
            }
            let (data, rest) = r.split_at(n * 4);
            r = rest;
            let values = data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            channels.push((name, values));
        }
        if !r.is_empty() {
            return Err(DslpError::Format(format!("{} trailing bytes", r.len())));
        }
        Ok(Self {
            width,
            height,
            cell_size,
            channels,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| DslpError::Format("unexpected end of file".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut f = DgfFile::new(8, 9, 0.5);
        f.push_field("ab", &GridField::filled(8, 9, 0.5, 1.0).unwrap()).unwrap();
        let b = f.to_bytes().unwrap();
        assert_eq!(&b[0..4], b"DGF1");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 8);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 9);
        assert_eq!(f32::from_le_bytes(b[12..16].try_into().unwrap()), 0.5);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 1);
        assert_eq!(u16::from_le_bytes(b[20..22].try_into().unwrap()), 2);
        assert_eq!(&b[22..24], b"ab");
        assert_eq!(b.len(), 24 + 72 * 4);
        assert_eq!(f32::from_le_bytes(b[24..28].try_into().unwrap()), 1.0);
    }

    #[test]
    fn rejects_garbage() {
        assert!(DgfFile::from_bytes(b"DGF2").is_err());
        assert!(DgfFile::from_bytes(b"DGF1\x08\0\0\0").is_err());
        let mut f = DgfFile::new(8, 8, 1.0);
        f.push_field("x", &GridField::zeros(8, 8, 1.0).unwrap()).unwrap();
        let mut b = f.to_bytes().unwrap();
        b.pop();
        assert!(DgfFile::from_bytes(&b).is_err());
        b.extend_from_slice(&[0, 0]);
        assert!(DgfFile::from_bytes(&b).is_err());
    }

    #[test]
    fn field_mismatch_is_rejected() {
        let mut f = DgfFile::new(8, 8, 1.0);
        assert!(f.push_field("x", &GridField::zeros(9, 8, 1.0).unwrap()).is_err());
        assert!(f.field("missing").is_err());
    }

    proptest! {
        #[test]
        fn bytes_round_trip_bit_exact(
            w in 8u32..12, h in 8u32..12, cs in 0.01f32..4.0,
            names in proptest::collection::vec("[a-z_0-9]{0,12}", 0..4),
            seed in any::<u64>(),
        ) {
            let n = (w * h) as usize;
            let mut s = seed;
            let channels = names.into_iter().map(|name| {
                let vals = (0..n).map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    f32::from_bits((s >> 32) as u32)
                }).collect();
                (name, vals)
            }).collect();
            let f = DgfFile { width: w, height: h, cell_size: cs, channels };
            let bytes = f.to_bytes().unwrap();
            let back = DgfFile::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }
}
