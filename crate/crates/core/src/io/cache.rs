//! Binary embedding cache.
//!
//! Layout (all integers little-endian):
//!
//! | bytes            | field                                   |
//! |------------------|-----------------------------------------|
//! | 4                | magic `L2ME`                            |
//! | 4 (u32)          | format version, currently 1             |
//! | 4 (u32)          | vector dimension                        |
//! | 4 (u32)          | record count                            |
//! | per record       | u16 key length, UTF-8 key, dim x f32    |
//!
//! Records are written in lexicographic key order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"L2ME";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCache {
    dim: usize,
    entries: BTreeMap<String, Vec<f32>>,
}

impl EmbeddingCache {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds a vector. Rejects duplicate keys, wrong dimensions, and
    /// non-finite entries.
    pub fn insert(&mut self, key: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let key = key.into();
        let fail = |reason: String| Error::Validation { id: key.clone(), reason };
        if vector.len() != self.dim {
            return Err(fail(format!("vector has dim {}, cache dim is {}", vector.len(), self.dim)));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(fail("vector has a non-finite entry".into()));
        }
        if key.len() > usize::from(u16::MAX) {
            return Err(fail("key longer than 65535 bytes".into()));
        }
        if self.entries.contains_key(&key) {
            return Err(fail("duplicate key".into()));
        }
        self.entries.insert(key, vector);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dim = u32::try_from(self.dim).map_err(|_| Error::invalid("dim exceeds u32"))?;
        let count = u32::try_from(self.entries.len()).map_err(|_| Error::invalid("count exceeds u32"))?;
        let mut out = Vec::with_capacity(16 + self.entries.len() * (2 + 16 + 4 * self.dim));
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&dim.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        for (key, vec) in &self.entries {
            out.extend_from_slice(&(key.len() as u16).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            for v in vec {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CACHE_MAGIC {
            return Err(Error::Format("bad magic, expected `L2ME`".into()));
        }
        let version = r.u32()?;
        if version != CACHE_VERSION {
            return Err(Error::Format(format!("unsupported cache version {version}")));
        }
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut cache = EmbeddingCache::new(dim);
        for i in 0..count {
            let key_len = usize::from(r.u16()?);
            let key = std::str::from_utf8(r.take(key_len)?)
                .map_err(|e| Error::Format(format!("record {i}: key is not UTF-8: {e}")))?
                .to_string();
            let raw = r.take(4 * dim)?;
            let vector = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            cache.insert(key, vector)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "declared {count} records but {} trailing bytes remain",
                bytes.len() - r.pos
            )));
        }
        Ok(cache)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated file: wanted {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_embedding_cache(path: impl AsRef<Path>) -> Result<EmbeddingCache> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingCache::from_bytes(&bytes)
}

pub fn write_embedding_cache(cache: &EmbeddingCache, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, cache.to_bytes()?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zeros_round_trip_bit_exact() {
        let mut c = EmbeddingCache::new(512);
        c.insert("a", vec![0.0; 512]).unwrap();
        let back = EmbeddingCache::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn header_layout() {
        let mut c = EmbeddingCache::new(2);
        c.insert("k", vec![1.0, -2.0]).unwrap();
        let b = c.to_bytes().unwrap();
        assert_eq!(&b[0..4], b"L2ME");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..16], &1u32.to_le_bytes());
        assert_eq!(&b[16..18], &1u16.to_le_bytes());
        assert_eq!(b[18], b'k');
        assert_eq!(&b[19..23], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 27);
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let mut b = EmbeddingCache::new(4).to_bytes().unwrap();
        b[..4].copy_from_slice(b"XXXX");
        assert!(matches!(EmbeddingCache::from_bytes(&b), Err(Error::Format(_))));
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let mut c = EmbeddingCache::new(2);
        c.insert("a", vec![1.0, 2.0]).unwrap();
        c.insert("b", vec![3.0, 4.0]).unwrap();
        let mut b = c.to_bytes().unwrap();
        b[12..16].copy_from_slice(&1u32.to_le_bytes());
        assert!(matches!(EmbeddingCache::from_bytes(&b), Err(Error::Format(_))));
        b[12..16].copy_from_slice(&3u32.to_le_bytes());
        assert!(matches!(EmbeddingCache::from_bytes(&b), Err(Error::Format(_))));
    }

    #[test]
    fn duplicate_key_is_a_validation_error() {
        let mut c = EmbeddingCache::new(1);
        c.insert("a", vec![1.0]).unwrap();
        assert!(matches!(c.insert("a", vec![2.0]), Err(Error::Validation { .. })));
        // Also when it appears twice in a file.
        let mut b = c.to_bytes().unwrap();
        b[12..16].copy_from_slice(&2u32.to_le_bytes());
        let rec = b[16..].to_vec();
        b.extend_from_slice(&rec);
        assert!(matches!(EmbeddingCache::from_bytes(&b), Err(Error::Validation { .. })));
    }

    #[test]
    fn dim_mismatch_is_a_validation_error() {
        let mut c = EmbeddingCache::new(3);
        assert!(matches!(c.insert("a", vec![1.0, 2.0]), Err(Error::Validation { .. })));
        assert!(c.insert("b", vec![f32::NAN, 0.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_preserves_bits(
            entries in proptest::collection::btree_map("[a-z:]{0,12}", proptest::collection::vec(-1e6f32..1e6, 5), 0..8)
        ) {
            let mut c = EmbeddingCache::new(5);
            for (k, v) in &entries {
                c.insert(k.clone(), v.clone()).unwrap();
            }
            let back = EmbeddingCache::from_bytes(&c.to_bytes().unwrap()).unwrap();
            for (k, v) in &entries {
                let got = back.get(k).unwrap();
                prop_assert!(got.iter().zip(v).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
            prop_assert_eq!(back.len(), entries.len());
        }
    }
}
