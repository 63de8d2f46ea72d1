//! Training objectives.
//!
//! Trajectory losses take `[T, N, 2]` tensors and come in two flavours:
//! a plain value and a `*_grad` form returning the value together with its
//! gradient with respect to the prediction (the second argument). Cosine
//! losses differentiate with respect to the trajectory latent.

use ndarray::{Array1, Array3, ArrayView1, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::embedding::LatentVector;
use crate::error::{Error, Result};
use crate::io::{ReconNorm, RunConfig};
use crate::real::Real;

fn same_shape<F>(p: &ArrayView3<F>, q: &ArrayView3<F>) -> Result<(usize, usize)> {
    if p.dim() != q.dim() {
        return Err(Error::invalid(format!("trajectory shapes differ: {:?} vs {:?}", p.dim(), q.dim())));
    }
    let (t, n, c) = p.dim();
    if c != 2 || t == 0 || n == 0 {
        return Err(Error::invalid(format!("expected a non-empty [T, N, 2] tensor, got {:?}", p.dim())));
    }
    Ok((t, n))
}

fn count<F: Real>(n: usize) -> F {
    F::from_usize(n).expect("count representable")
}

fn sign<F: Real>(v: F) -> F {
    if v > F::zero() {
        F::one()
    } else if v < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

pub fn loss_recon<F: Real>(p: ArrayView3<F>, q: ArrayView3<F>, norm: ReconNorm) -> Result<F> {
    let (t, n) = same_shape(&p, &q)?;
    let total: F = match norm {
        ReconNorm::L1 => p.iter().zip(q.iter()).map(|(&a, &b)| (a - b).abs()).sum(),
        ReconNorm::L2 => p.iter().zip(q.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum(),
    };
    Ok(total / count(n * t))
}

pub fn loss_recon_grad<F: Real>(p: ArrayView3<F>, q: ArrayView3<F>, norm: ReconNorm) -> Result<(F, Array3<F>)> {
    let value = loss_recon(p, q, norm)?;
    let (t, n, _) = p.dim();
    let scale = F::one() / count(n * t);
    let mut grad = Array3::zeros(q.raw_dim());
    ndarray::Zip::from(&mut grad).and(&p).and(&q).for_each(|g, &a, &b| {
        *g = match norm {
            ReconNorm::L1 => sign(b - a) * scale,
            ReconNorm::L2 => F::lit(2.0) * (b - a) * scale,
        };
    });
    Ok((value, grad))
}

/// Same formula as the L1 reconstruction term, applied to the trajectory
/// decoded from the caption embedding.
pub fn loss_text_recon<F: Real>(p: ArrayView3<F>, p_text: ArrayView3<F>) -> Result<F> {
    loss_recon(p, p_text, ReconNorm::L1)
}

pub fn loss_text_recon_grad<F: Real>(p: ArrayView3<F>, p_text: ArrayView3<F>) -> Result<(F, Array3<F>)> {
    loss_recon_grad(p, p_text, ReconNorm::L1)
}

pub fn loss_vel<F: Real>(p: ArrayView3<F>, q: ArrayView3<F>) -> Result<F> {
    loss_vel_grad(p, q).map(|(v, _)| v)
}

pub fn loss_vel_grad<F: Real>(p: ArrayView3<F>, q: ArrayView3<F>) -> Result<(F, Array3<F>)> {
    let (t, n) = same_shape(&p, &q)?;
    if t < 2 {
        return Err(Error::invalid("velocity loss needs at least two frames"));
    }
    let scale = F::one() / count(n * (t - 1));
    let two = F::lit(2.0);
    let mut total = F::zero();
    let mut grad = Array3::zeros(q.raw_dim());
    for f in 0..t - 1 {
        for j in 0..n {
            for c in 0..2 {
                let e = (p[[f + 1, j, c]] - p[[f, j, c]]) - (q[[f + 1, j, c]] - q[[f, j, c]]);
                total = total + e * e;
                grad[[f + 1, j, c]] = grad[[f + 1, j, c]] - two * e * scale;
                grad[[f, j, c]] = grad[[f, j, c]] + two * e * scale;
            }
        }
    }
    Ok((total * scale, grad))
}

/// Per-axis extent of one frame with the indices attaining max and min.
/// Ties resolve to the lowest point index.
fn extent<F: Real>(frame: ArrayView3<F>, t: usize, c: usize) -> (F, usize, usize) {
    let n = frame.dim().1;
    let (mut hi, mut lo) = (0, 0);
    for j in 1..n {
        if frame[[t, j, c]] > frame[[t, hi, c]] {
            hi = j;
        }
        if frame[[t, j, c]] < frame[[t, lo, c]] {
            lo = j;
        }
    }
    (frame[[t, hi, c]] - frame[[t, lo, c]], hi, lo)
}

pub fn loss_range<F: Real>(p: ArrayView3<F>, q: ArrayView3<F>) -> Result<F> {
    loss_range_grad(p, q).map(|(v, _)| v)
}

pub fn loss_range_grad<F: Real>(p: ArrayView3<F>, q: ArrayView3<F>) -> Result<(F, Array3<F>)> {
    let (t, _) = same_shape(&p, &q)?;
    let two = F::lit(2.0);
    let mut total = F::zero();
    let mut grad = Array3::zeros(q.raw_dim());
    for f in 0..t {
        for c in 0..2 {
            let (rp, _, _) = extent(p, f, c);
            let (rq, hi, lo) = extent(q, f, c);
            let d = rq - rp;
            total = total + d * d;
            grad[[f, hi, c]] = grad[[f, hi, c]] + two * d;
            grad[[f, lo, c]] = grad[[f, lo, c]] - two * d;
        }
    }
    Ok((total, grad))
}

/// `1 - cos(z, e)` and its gradient with respect to `z`.
pub fn loss_cosine_grad<F: Real>(z: ArrayView1<F>, e: ArrayView1<F>) -> Result<(F, Array1<F>)> {
    if z.len() != e.len() {
        return Err(Error::shape(format!("latent dims differ: {} vs {}", z.len(), e.len())));
    }
    let zn = z.dot(&z).sqrt();
    let en = e.dot(&e).sqrt();
    if zn == F::zero() || en == F::zero() {
        return Err(Error::invalid("cosine loss of a zero vector"));
    }
    let cos = z.dot(&e) / (zn * en);
    let grad = z.mapv(|v| v * cos / (zn * zn)) - e.mapv(|v| v / (zn * en));
    Ok((F::one() - cos, grad))
}

fn cosine_loss(z: &LatentVector, e: &LatentVector) -> Result<f64> {
    let z = Array1::from_iter(z.as_slice().iter().map(|&v| f64::from(v)));
    let e = Array1::from_iter(e.as_slice().iter().map(|&v| f64::from(v)));
    let (v, _) = loss_cosine_grad(z.view(), e.view())?;
    Ok(v.clamp(0.0, 2.0))
}

pub fn loss_text(z_p: &LatentVector, text_emb: &LatentVector) -> Result<f64> {
    cosine_loss(z_p, text_emb)
}

pub fn loss_image(z_p: &LatentVector, pooled_image_emb: &LatentVector) -> Result<f64> {
    cosine_loss(z_p, pooled_image_emb)
}

/// Unweighted loss values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub recon: f64,
    pub vel: f64,
    pub range: f64,
    pub text: f64,
    pub image: f64,
    pub text_recon: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub vel: f64,
    pub range: f64,
    pub text: f64,
    pub image: f64,
    pub text_recon: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `(name, value)` for every term, total last.
    pub fn terms(&self) -> [(&'static str, f64); 7] {
        [
            ("recon", self.recon),
            ("vel", self.vel),
            ("range", self.range),
            ("text", self.text),
            ("image", self.image),
            ("text_recon", self.text_recon),
            ("total", self.total),
        ]
    }
}

/// Effective weight of each term: its lambda, or 0 when toggled off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub recon: f64,
    pub vel: f64,
    pub range: f64,
    pub text: f64,
    pub image: f64,
    pub text_recon: f64,
}

impl LossWeights {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let lambdas = [
            ("lambda_vel", cfg.lambda_vel),
            ("lambda_range", cfg.lambda_range),
            ("lambda_text", cfg.lambda_text),
            ("lambda_image", cfg.lambda_image),
            ("lambda_text_recon", cfg.lambda_text_recon),
        ];
        for (name, v) in lambdas {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        let on = |enabled: bool, w: f64| if enabled { w } else { 0.0 };
        Ok(Self {
            recon: on(cfg.enable_recon, 1.0),
            vel: on(cfg.enable_vel, cfg.lambda_vel),
            range: on(cfg.enable_range, cfg.lambda_range),
            text: on(cfg.enable_text, cfg.lambda_text),
            image: on(cfg.enable_image, cfg.lambda_image),
            text_recon: on(cfg.enable_text_recon, cfg.lambda_text_recon),
        })
    }
}

pub fn loss_total(c: &LossComponents, cfg: &RunConfig) -> Result<LossBreakdown> {
    let w = LossWeights::from_config(cfg)?;
    let total = w.recon * c.recon
        + w.vel * c.vel
        + w.range * c.range
        + w.text * c.text
        + w.image * c.image
        + w.text_recon * c.text_recon;
    Ok(LossBreakdown {
        recon: c.recon,
        vel: c.vel,
        range: c.range,
        text: c.text,
        image: c.image,
        text_recon: c.text_recon,
        total,
    })
}
