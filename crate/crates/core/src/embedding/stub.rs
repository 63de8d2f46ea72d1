//! Deterministic stand-in for frozen text/image encoders.
//!
//! Text: each motion class owns an anchor direction (anchors are mutually
//! orthonormal when `dim` allows). A text mentioning a class keyword maps to
//! `normalize(anchor + 0.15 * u)` where `u` is a unit vector seeded by the
//! text itself and orthogonal to every anchor, so same-class texts have
//! cosine >= (1 - 0.15^2) / (1 + 0.15^2) ~ 0.956 and different classes
//! stay within 0.15^2 / (1 + 0.15^2) ~ 0.022 of orthogonal. Texts without a
//! class keyword map to the seeded direction alone.
//!
//! Images: the frame is reduced to an 8x8 grid of per-channel ink coverage
//! (how far each block is from white), then sent through a fixed seeded
//! Gaussian projection and normalized.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{EmbeddingProvider, LatentVector};
use crate::error::{Error, Result};
use crate::overlay::RasterFrame;
use crate::traj::MotionClass;

const PERTURBATION: f64 = 0.15;
const BLOCKS: usize = 8;
const IMAGE_FEATURES: usize = BLOCKS * BLOCKS * 3 + 1;

fn rng_for(domain: &str, seed: u64, payload: &[u8]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(domain.as_bytes());
    h.update(seed.to_le_bytes());
    h.update(payload);
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

#[derive(Debug, Clone)]
pub struct StubProvider {
    dim: usize,
    seed: u64,
    anchors: Vec<Vec<f64>>,
    /// Number of leading anchors that are exactly orthonormal.
    orthonormal: usize,
    projection: Array2<f32>,
}

impl StubProvider {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid(format!("stub embedding dim must be at least 2, got {dim}")));
        }
        let mut rng = rng_for("anchors", seed, &[]);
        let mut anchors: Vec<Vec<f64>> = Vec::with_capacity(MotionClass::ALL.len());
        let mut orthonormal = 0;
        for i in 0..MotionClass::ALL.len() {
            let mut a = gaussian(&mut rng, dim);
            if i < dim {
                // Gram-Schmidt against earlier anchors, twice for stability.
                for _ in 0..2 {
                    for prev in &anchors {
                        let d = dot(&a, prev);
                        a.iter_mut().zip(prev).for_each(|(x, p)| *x -= d * p);
                    }
                }
                orthonormal += 1;
            }
            anchors.push(unit(a));
        }
        let mut prng = rng_for("image-projection", seed, &[]);
        let scale = 1.0 / (IMAGE_FEATURES as f64).sqrt();
        let projection = Array2::from_shape_fn((dim, IMAGE_FEATURES), |_| {
            let g: f64 = StandardNormal.sample(&mut prng);
            (g * scale) as f32
        });
        Ok(Self { dim, seed, anchors, orthonormal, projection })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn text_vector(&self, text: &str) -> Vec<f64> {
        let mut rng = rng_for("text", self.seed, text.as_bytes());
        let mut u = gaussian(&mut rng, self.dim);
        let Some(class) = MotionClass::detect(text) else {
            return unit(u);
        };
        let idx = MotionClass::ALL.iter().position(|c| *c == class).expect("class in ALL");
        if self.orthonormal == MotionClass::ALL.len() && self.dim > self.orthonormal {
            for _ in 0..2 {
                for a in &self.anchors {
                    let d = dot(&u, a);
                    u.iter_mut().zip(a).for_each(|(x, p)| *x -= d * p);
                }
            }
        }
        let u = unit(u);
        let v: Vec<f64> = self.anchors[idx].iter().zip(&u).map(|(a, p)| a + PERTURBATION * p).collect();
        unit(v)
    }

    fn image_features(frame: &RasterFrame) -> Vec<f64> {
        let (w, h) = (frame.width_px as usize, frame.height_px as usize);
        let mut sums = vec![0.0f64; BLOCKS * BLOCKS * 3];
        let mut counts = vec![0usize; BLOCKS * BLOCKS];
        for y in 0..h {
            let by = y * BLOCKS / h.max(1);
            let row = &frame.pixels[3 * y * w..3 * (y + 1) * w];
            for x in 0..w {
                let b = by * BLOCKS + x * BLOCKS / w.max(1);
                counts[b] += 1;
                for c in 0..3 {
                    sums[3 * b + c] += f64::from(255 - row[3 * x + c]);
                }
            }
        }
        let mut feats: Vec<f64> = sums
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let n = counts[i / 3];
                if n == 0 { 0.0 } else { s / (255.0 * n as f64) }
            })
            .collect();
        feats.push(1.0);
        feats
    }
}

impl EmbeddingProvider for StubProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<LatentVector> {
        if text.is_empty() {
            return Err(Error::invalid("cannot embed an empty string"));
        }
        LatentVector::new(self.text_vector(text).into_iter().map(|v| v as f32).collect())
    }

    fn embed_image(&self, frame: &RasterFrame) -> Result<LatentVector> {
        if frame.pixels.len() != 3 * frame.width_px as usize * frame.height_px as usize {
            return Err(Error::invalid("raster buffer length must be 3 * W * H"));
        }
        if frame.width_px == 0 || frame.height_px == 0 {
            return Err(Error::invalid("cannot embed an empty raster"));
        }
        let feats = Self::image_features(frame);
        let out: Vec<f64> = self
            .projection
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(&feats).map(|(&p, f)| f64::from(p) * f).sum())
            .collect();
        LatentVector::new(unit(out).into_iter().map(|v| v as f32).collect())
    }
}

/// One-off text embedding with a fresh stub provider.
pub fn stub_embed_text(text: &str, dim: usize, seed: u64) -> Result<LatentVector> {
    StubProvider::new(dim, seed)?.embed_text(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::cosine_similarity;

    #[test]
    fn deterministic_and_unit_norm() {
        let p = StubProvider::new(512, 0).unwrap();
        let a = p.embed_text("object moving left").unwrap();
        let b = StubProvider::new(512, 0).unwrap().embed_text("object moving left").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 512);
        for text in ["object moving left", "a red ball", "x"] {
            assert!((p.embed_text(text).unwrap().norm() - 1.0).abs() < 1e-6);
        }
        assert!(p.embed_text("").is_err());
        assert!(StubProvider::new(1, 0).is_err());
    }

    #[test]
    fn class_anchor_separation_by_direct_computation() {
        let p = StubProvider::new(512, 3).unwrap();
        let left = p.embed_text("object moving left").unwrap();
        let left2 = p.embed_text("thing moving left").unwrap();
        let right = p.embed_text("object moving right").unwrap();
        assert!(cosine_similarity(&left, &left2).unwrap() >= 0.95);
        assert!(cosine_similarity(&left, &right).unwrap() <= 0.1);
    }

    #[test]
    fn separation_holds_for_whole_vocabulary() {
        for dim in [16, 64, 512] {
            let p = StubProvider::new(dim, 1).unwrap();
            let texts: Vec<(MotionClass, String)> = MotionClass::ALL
                .iter()
                .flat_map(|c| {
                    [(*c, c.caption().to_string()), (*c, c.name().to_string()), (*c, format!("the thing {}", c.keywords()[0]))]
                })
                .collect();
            let embs: Vec<LatentVector> = texts.iter().map(|(_, t)| p.embed_text(t).unwrap()).collect();
            for i in 0..texts.len() {
                for j in i + 1..texts.len() {
                    let c = cosine_similarity(&embs[i], &embs[j]).unwrap();
                    if texts[i].0 == texts[j].0 {
                        assert!(c >= 0.95, "dim {dim}: {:?} vs {:?} = {c}", texts[i].1, texts[j].1);
                    } else {
                        assert!(c <= 0.1, "dim {dim}: {:?} vs {:?} = {c}", texts[i].1, texts[j].1);
                    }
                }
            }
        }
    }

    #[test]
    fn image_embedding_is_deterministic_and_content_sensitive() {
        let p = StubProvider::new(64, 0).unwrap();
        let white = RasterFrame::solid(32, 32, [255, 255, 255]);
        let mut marked = white.clone();
        for i in 0..60 {
            marked.pixels[3 * i] = 0;
        }
        let a = p.embed_image(&white).unwrap();
        assert_eq!(a, p.embed_image(&white).unwrap());
        assert!((a.norm() - 1.0).abs() < 1e-6);
        assert_ne!(a, p.embed_image(&marked).unwrap());
    }
}
