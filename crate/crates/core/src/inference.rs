//! Generation from latent conditions and latent-space utilities.

use ndarray::Array2;

use crate::embedding::{cosine_similarity, pool_image_embeddings, EmbeddingProvider, LatentVector};
use crate::error::{Error, Result};
use crate::io::DecodeMode;
use crate::model::Model;
use crate::overlay::{render_sequence, Backgrounds, OverlayStyle, RasterFrame};
use crate::traj::{denormalize, init_grid, normalize, normalize_point_set, GridSpec, TrajectorySequence};

/// Decodes a trajectory for `condition` starting from a grid over
/// `grid.bbox_px`. Coordinates leaving the frame are clamped to its border.
pub fn generate(
    model: &Model<f32>,
    condition: &LatentVector,
    grid: &GridSpec,
    width_px: u32,
    height_px: u32,
    mode: DecodeMode,
    description: Option<&str>,
) -> Result<TrajectorySequence> {
    let cfg = model.config();
    if condition.dim() != cfg.latent_dim {
        return Err(Error::shape(format!(
            "condition has dim {}, model expects {}",
            condition.dim(),
            cfg.latent_dim
        )));
    }
    if mode != cfg.decode_mode {
        return Err(Error::invalid(format!(
            "model was built for {:?} decoding, {mode:?} requested",
            cfg.decode_mode
        )));
    }
    if grid.rows != cfg.grid_rows || grid.cols != cfg.grid_cols {
        return Err(Error::shape(format!(
            "grid {}x{} does not match the model's {}x{}",
            grid.rows, grid.cols, cfg.grid_rows, cfg.grid_cols
        )));
    }
    grid.validate()?;
    if !grid.within_frame(width_px, height_px) {
        return Err(Error::invalid(format!("bbox {:?} lies outside the {width_px}x{height_px} frame", grid.bbox_px)));
    }
    if condition.is_zero() {
        log::warn!("generating from a zero condition vector");
    }
    let p0 = normalize_point_set(init_grid(grid)?.view(), width_px, height_px)?;
    let traj = model.decode(condition, p0.view(), cfg.num_frames)?;
    if traj.points.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("decoder produced a non-finite coordinate"));
    }
    let points_px = denormalize(&traj, width_px, height_px)?;
    let mut seq = TrajectorySequence {
        id: "generated".into(),
        width_px,
        height_px,
        points_px,
        visibility: None,
        captions: vec![description.unwrap_or("generated").to_string()],
        grid_rows: grid.rows,
        grid_cols: grid.cols,
        mask_bbox_px: Some(grid.bbox_px),
    };
    let clamped = seq.clamp_to_frame();
    if clamped > 0 {
        log::debug!("clamped {clamped} generated coordinates to the frame");
    }
    seq.validate()?;
    Ok(seq)
}

pub fn condition_from_text(provider: &dyn EmbeddingProvider, text: &str) -> Result<LatentVector> {
    provider.embed_text(text)
}

/// Pooled, re-normalized embedding of the given frames.
pub fn condition_from_image(provider: &dyn EmbeddingProvider, frames: &[RasterFrame]) -> Result<LatentVector> {
    let embs = frames.iter().map(|f| provider.embed_image(f)).collect::<Result<Vec<_>>>()?;
    pool_image_embeddings(&embs)
}

/// Same pooling as [`condition_from_image`], over rendered overlay frames.
pub fn condition_from_overlay(provider: &dyn EmbeddingProvider, frames: &[RasterFrame]) -> Result<LatentVector> {
    condition_from_image(provider, frames)
}

/// Renders `seq` as overlay trails on white and pools the frame embeddings.
pub fn overlay_condition(provider: &dyn EmbeddingProvider, seq: &TrajectorySequence, style: &OverlayStyle) -> Result<LatentVector> {
    let frames = render_sequence(seq, Backgrounds::Solid([255, 255, 255]), style)?;
    condition_from_overlay(provider, &frames)
}

fn same_dim(a: &LatentVector, b: &LatentVector) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("latent dims {} and {} differ", a.dim(), b.dim())));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

/// `(1 - alpha) * a + alpha * b`
pub fn interpolate(a: &LatentVector, b: &LatentVector, alpha: f64) -> Result<LatentVector> {
    same_dim(a, b)?;
    check_alpha(alpha)?;
    let out = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| ((1.0 - alpha) * f64::from(x) + alpha * f64::from(y)) as f32)
        .collect();
    LatentVector::new(out)
}

/// Spherical interpolation along the great circle between the directions
/// of `a` and `b`, with linearly interpolated length. Falls back to
/// [`interpolate`] for (anti)parallel inputs.
pub fn slerp(a: &LatentVector, b: &LatentVector, alpha: f64) -> Result<LatentVector> {
    same_dim(a, b)?;
    check_alpha(alpha)?;
    if alpha == 0.0 {
        return Ok(a.clone());
    }
    if alpha == 1.0 {
        return Ok(b.clone());
    }
    let cos = cosine_similarity(a, b)?;
    let omega = cos.acos();
    if omega.sin().abs() < 1e-6 {
        return interpolate(a, b, alpha);
    }
    let (na, nb) = (a.norm(), b.norm());
    let wa = ((1.0 - alpha) * omega).sin() / omega.sin();
    let wb = (alpha * omega).sin() / omega.sin();
    let len = (1.0 - alpha) * na + alpha * nb;
    let out = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| (len * (wa * f64::from(x) / na + wb * f64::from(y) / nb)) as f32)
        .collect();
    LatentVector::new(out)
}

/// `z_content + strength * z_style`
pub fn style_transfer(z_content: &LatentVector, z_style: &LatentVector, strength: f64) -> Result<LatentVector> {
    same_dim(z_content, z_style)?;
    if !strength.is_finite() {
        return Err(Error::invalid("strength must be finite"));
    }
    let out = z_content
        .as_slice()
        .iter()
        .zip(z_style.as_slice())
        .map(|(&c, &s)| (f64::from(c) + strength * f64::from(s)) as f32)
        .collect();
    LatentVector::new(out)
}

/// Trajectory latent of a sequence. With `overlay`, the encoder also sees
/// per-frame embeddings of the sequence's overlay rendering on white.
pub fn encode_sequence(
    model: &Model<f32>,
    seq: &TrajectorySequence,
    overlay: Option<(&dyn EmbeddingProvider, &OverlayStyle)>,
) -> Result<LatentVector> {
    let traj = normalize(seq)?;
    match overlay {
        None => model.encode(&traj, None),
        Some((provider, style)) => {
            let frames = render_sequence(seq, Backgrounds::Solid([255, 255, 255]), style)?;
            let feats = frames.iter().map(|f| provider.embed_image(f)).collect::<Result<Vec<_>>>()?;
            model.encode(&traj, Some(&feats))
        }
    }
}

/// Class names ranked by cosine similarity between the sequence latent and
/// each name's text embedding. Ties keep the order of `class_names`.
pub fn classify_zero_shot(
    model: &Model<f32>,
    provider: &dyn EmbeddingProvider,
    seq: &TrajectorySequence,
    class_names: &[String],
) -> Result<Vec<(String, f64)>> {
    if class_names.is_empty() {
        return Err(Error::invalid("no class names given"));
    }
    let z = encode_sequence(model, seq, None)?;
    rank_classes(&z, provider, class_names)
}

/// Ranking step of [`classify_zero_shot`] for a precomputed latent.
pub fn rank_classes(z: &LatentVector, provider: &dyn EmbeddingProvider, class_names: &[String]) -> Result<Vec<(String, f64)>> {
    if class_names.is_empty() {
        return Err(Error::invalid("no class names given"));
    }
    let mut scored = class_names
        .iter()
        .map(|name| Ok((name.clone(), cosine_similarity(z, &provider.embed_text(name)?)?)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    Ok(scored)
}

/// Centroid of each frame, `[T, 2]`.
pub fn centroids(seq: &TrajectorySequence) -> Array2<f64> {
    let n = seq.num_points() as f64;
    let mut out = Array2::zeros((seq.num_frames(), 2));
    for (t, frame) in seq.points_px.outer_iter().enumerate() {
        for p in frame.rows() {
            out[[t, 0]] += p[0] / n;
            out[[t, 1]] += p[1] / n;
        }
    }
    out
}
