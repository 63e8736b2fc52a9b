//! Binary containers for descriptors and feature maps.
//!
//! Descriptor container:
//!
//! ```text
//! "DESC0001"            8 bytes magic
//! count                 u32 little-endian
//! dim                   u32 little-endian
//! count × dim × f32     little-endian, row-major
//! ```
//!
//! Feature-map container:
//!
//! ```text
//! "FMAP0001"            8 bytes magic
//! count                 u32 little-endian
//! per entry:
//!   H, W, C             u32 little-endian each
//!   H × W × C × f32     little-endian, (y, x, c) row-major
//! ```

use std::io::{Read, Write};

use crate::aggregation::FeatureMap;
use crate::error::{Error, Result};

pub const DESCRIPTOR_MAGIC: &[u8; 8] = b"DESC0001";
pub const FEATURE_MAP_MAGIC: &[u8; 8] = b"FMAP0001";

/// Row-major block of descriptors as stored on disk (not normalized).
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorBlock {
    pub dim: usize,
    pub data: Vec<f32>,
}

impl DescriptorBlock {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::param(format!("{} values do not form rows of dim {dim}", data.len())));
        }
        Ok(DescriptorBlock { dim, data })
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::ingest_at(
                format!("truncated container: expected {n} bytes of {what}, found {}", self.bytes.len() - self.pos),
                self.pos as u64,
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        let got = self.take(8, "magic")?;
        if got != expected {
            return Err(Error::ingest_at(
                format!(
                    "bad magic: expected {:?}, found {:?}",
                    String::from_utf8_lossy(expected),
                    String::from_utf8_lossy(got)
                ),
                0,
            ));
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let start = self.pos;
        let len = n.checked_mul(4).ok_or_else(|| Error::ingest_at("size overflow", start as u64))?;
        let raw = self.take(len, what)?;
        let vals: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::ingest_at(format!("non-finite value in {what}"), (start + 4 * i) as u64));
        }
        Ok(vals)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::ingest_at(
                format!("{} trailing bytes after container payload", self.bytes.len() - self.pos),
                self.pos as u64,
            ));
        }
        Ok(())
    }
}

pub fn decode_descriptors(bytes: &[u8]) -> Result<DescriptorBlock> {
    let mut c = Cursor { bytes, pos: 0 };
    c.magic(DESCRIPTOR_MAGIC)?;
    let count = c.u32("count")? as usize;
    let dim = c.u32("dim")? as usize;
    if dim == 0 {
        return Err(Error::ingest_at("dimension must be positive", 12));
    }
    let data = c.f32s(count * dim, "descriptor data")?;
    c.finish()?;
    Ok(DescriptorBlock { dim, data })
}

pub fn encode_descriptors(block: &DescriptorBlock) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * block.data.len());
    out.extend_from_slice(DESCRIPTOR_MAGIC);
    out.extend_from_slice(&(block.count() as u32).to_le_bytes());
    out.extend_from_slice(&(block.dim as u32).to_le_bytes());
    for v in &block.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_descriptors(mut r: impl Read) -> Result<DescriptorBlock> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode_descriptors(&buf)
}

pub fn write_descriptors(mut w: impl Write, block: &DescriptorBlock) -> Result<()> {
    w.write_all(&encode_descriptors(block))?;
    Ok(())
}

pub fn decode_feature_maps(bytes: &[u8]) -> Result<Vec<FeatureMap>> {
    let mut c = Cursor { bytes, pos: 0 };
    c.magic(FEATURE_MAP_MAGIC)?;
    let count = c.u32("count")? as usize;
    let mut maps = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let at = c.pos as u64;
        let h = c.u32("height")? as usize;
        let w = c.u32("width")? as usize;
        let ch = c.u32("channels")? as usize;
        if h == 0 || w == 0 || ch == 0 {
            return Err(Error::ingest_at(format!("entry {i} has an empty shape {h}x{w}x{ch}"), at));
        }
        let n = h.checked_mul(w).and_then(|v| v.checked_mul(ch)).ok_or_else(|| Error::ingest_at("shape overflow", at))?;
        let data = c.f32s(n, "activations")?;
        maps.push(FeatureMap::new(h, w, ch, data).map_err(|e| Error::ingest_at(e.to_string(), at))?);
    }
    c.finish()?;
    Ok(maps)
}

pub fn encode_feature_maps(maps: &[FeatureMap]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(FEATURE_MAP_MAGIC);
    out.extend_from_slice(&(maps.len() as u32).to_le_bytes());
    for m in maps {
        for v in [m.height(), m.width(), m.channels()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_feature_maps(mut r: impl Read) -> Result<Vec<FeatureMap>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode_feature_maps(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn descriptor_layout_is_bit_exact() {
        let block = DescriptorBlock::new(2, vec![1.0, -2.5, 0.0, 3.0]).unwrap();
        let bytes = encode_descriptors(&block);
        assert_eq!(&bytes[..8], b"DESC0001");
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[20..24], &(-2.5f32).to_le_bytes());
        assert_eq!(bytes.len(), 32);
    }

    #[test]
    fn bad_magic_names_expected() {
        let mut bytes = encode_descriptors(&DescriptorBlock::new(1, vec![1.0]).unwrap());
        bytes[0] = b'X';
        let err = decode_descriptors(&bytes).unwrap_err();
        assert!(err.to_string().contains("DESC0001"), "{err}");
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode_descriptors(&DescriptorBlock::new(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let err = decode_descriptors(&bytes[..30]).unwrap_err();
        assert_eq!(err, Error::Ingest { message: err_msg(&err), offset: Some(16) });
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_descriptors(&long), Err(Error::Ingest { offset: Some(32), .. })));
    }

    fn err_msg(e: &Error) -> String {
        match e {
            Error::Ingest { message, .. } => message.clone(),
            _ => panic!("not an ingest error"),
        }
    }

    #[test]
    fn feature_map_layout() {
        let fm = FeatureMap::new(1, 2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let bytes = encode_feature_maps(&[fm.clone()]);
        assert_eq!(&bytes[..8], b"FMAP0001");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..24], &[1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(decode_feature_maps(&bytes).unwrap(), vec![fm]);
        let mut bad = bytes.clone();
        bad[..8].copy_from_slice(b"DESC0001");
        assert!(decode_feature_maps(&bad).unwrap_err().to_string().contains("FMAP0001"));
    }

    proptest! {
        #[test]
        fn descriptor_container_roundtrips(dim in 1usize..8, rows in 0usize..6, seed in any::<u64>()) {
            let data: Vec<f32> = (0..dim * rows).map(|i| ((seed.wrapping_add(i as u64) % 997) as f32) * 0.37 - 100.0).collect();
            let block = DescriptorBlock::new(dim, data).unwrap();
            let decoded = decode_descriptors(&encode_descriptors(&block)).unwrap();
            prop_assert_eq!(&decoded.data, &block.data);
            prop_assert_eq!(decoded.count(), rows);
        }
    }
}
