//! Frozen joint text/image embedding providers.
//!
//! The model never owns these encoders; it only consumes their vectors.
//! [`StubProvider`] is a deterministic offline stand-in and
//! [`CachedProvider`] serves vectors computed elsewhere and stored in an
//! embedding cache file.

mod cached;
mod stub;

pub use cached::{cached_embed, image_key, text_key, CachedProvider};
pub use stub::{stub_embed_text, StubProvider};

use crate::error::{Error, Result};
use crate::overlay::RasterFrame;

/// A vector in the shared embedding space. Entries are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector(Vec<f32>);

impl LatentVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("latent vector must not be empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("latent vector has a non-finite entry"));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::invalid("cannot normalize a zero vector"));
        }
        Ok(Self(self.0.iter().map(|&v| (f64::from(v) / n) as f32).collect()))
    }
}

/// Source of frozen text and image embeddings. Implementations are
/// deterministic and immutable after construction.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<LatentVector>;
    fn embed_image(&self, frame: &RasterFrame) -> Result<LatentVector>;
}

/// `a . b / (|a| |b|)`, accumulated in `f64`.
pub fn cosine_similarity(a: &LatentVector, b: &LatentVector) -> Result<f64> {
    cosine_slices(a.as_slice(), b.as_slice())
}

pub(crate) fn cosine_slices(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("cosine of dims {} and {}", a.len(), b.len())));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Mean of per-frame embeddings, re-normalized to unit length.
pub fn pool_image_embeddings(frames: &[LatentVector]) -> Result<LatentVector> {
    let first = frames.first().ok_or_else(|| Error::invalid("no frame embeddings to pool"))?;
    let dim = first.dim();
    let mut acc = vec![0.0f64; dim];
    for f in frames {
        if f.dim() != dim {
            return Err(Error::shape(format!("frame embedding dims {} and {dim} differ", f.dim())));
        }
        for (a, &v) in acc.iter_mut().zip(f.as_slice()) {
            *a += f64::from(v);
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::invalid("pooled embedding is the zero vector"));
    }
    LatentVector::new(acc.iter().map(|v| (v / norm) as f32).collect())
}
