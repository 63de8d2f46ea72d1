//! Provider backed by a precomputed embedding cache.
//!
//! Text entries live under `text:<caption>`; image entries under
//! `image:<sha256 of width, height and pixel bytes>` so any process that
//! renders the same raster finds the same vector.

use sha2::{Digest, Sha256};

use super::{EmbeddingProvider, LatentVector};
use crate::error::{Error, Result};
use crate::io::EmbeddingCache;
use crate::overlay::RasterFrame;

pub fn text_key(text: &str) -> String {
    format!("text:{text}")
}

pub fn image_key(frame: &RasterFrame) -> String {
    let mut h = Sha256::new();
    h.update(frame.width_px.to_le_bytes());
    h.update(frame.height_px.to_le_bytes());
    h.update(&frame.pixels);
    let digest = h.finalize();
    let mut key = String::with_capacity(6 + 64);
    key.push_str("image:");
    for b in digest.iter() {
        key.push_str(&format!("{b:02x}"));
    }
    key
}

/// Returns the stored vector for `key`, bit for bit.
pub fn cached_embed(key: &str, cache: &EmbeddingCache) -> Result<LatentVector> {
    let v = cache.get(key).ok_or_else(|| Error::Lookup(key.to_string()))?;
    LatentVector::new(v.to_vec())
}

#[derive(Debug, Clone)]
pub struct CachedProvider {
    cache: EmbeddingCache,
}

impl CachedProvider {
    /// Fails if the cache was written for a different dimension.
    pub fn new(cache: EmbeddingCache, dim: usize) -> Result<Self> {
        if cache.dim() != dim {
            return Err(Error::shape(format!(
                "embedding cache has dim {}, provider expects {dim}",
                cache.dim()
            )));
        }
        Ok(Self { cache })
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }
}

impl EmbeddingProvider for CachedProvider {
    fn dim(&self) -> usize {
        self.cache.dim()
    }

    fn embed_text(&self, text: &str) -> Result<LatentVector> {
        if text.is_empty() {
            return Err(Error::invalid("cannot embed an empty string"));
        }
        cached_embed(&text_key(text), &self.cache)
    }

    fn embed_image(&self, frame: &RasterFrame) -> Result<LatentVector> {
        cached_embed(&image_key(frame), &self.cache)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_returns_stored_bits() {
        let mut cache = EmbeddingCache::new(3);
        let stored = vec![1.0e-30f32, -0.0, 7.25];
        cache.insert("text:hello", stored.clone()).unwrap();
        let v = cached_embed("text:hello", &cache).unwrap();
        assert!(v.as_slice().iter().zip(&stored).all(|(a, b)| a.to_bits() == b.to_bits()));
        let p = CachedProvider::new(cache, 3).unwrap();
        assert_eq!(p.embed_text("hello").unwrap(), v);
    }

    #[test]
    fn missing_key_names_the_key() {
        let cache = EmbeddingCache::new(3);
        match cached_embed("text:nope", &cache) {
            Err(Error::Lookup(k)) => assert_eq!(k, "text:nope"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_at_construction() {
        assert!(matches!(CachedProvider::new(EmbeddingCache::new(512), 256), Err(Error::Shape(_))));
    }

    #[test]
    fn image_keys_depend_on_content() {
        let a = RasterFrame::solid(4, 4, [255, 255, 255]);
        let mut b = a.clone();
        b.pixels[0] = 0;
        assert_ne!(image_key(&a), image_key(&b));
        assert_eq!(image_key(&a), image_key(&a.clone()));
        assert_eq!(image_key(&a).len(), 6 + 64);
    }
}
