//! Trajectory-trail rasterization.
//!
//! Each point's path from frame 0 through frame `t` is drawn as an
//! integer Bresenham polyline, with a filled disc marking its frame-`t`
//! position. All primitives are first accumulated into one coverage mask,
//! so overlapping primitives blend exactly once:
//! `out = round(opacity * color + (1 - opacity) * background)`.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::traj::TrajectorySequence;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlayStyle {
    pub color: [u8; 3],
    /// In `(0, 1]`.
    pub opacity: f64,
    pub point_radius_px: u32,
    pub line_width_px: u32,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self { color: [0, 255, 255], opacity: 0.5, point_radius_px: 2, line_width_px: 1 }
    }
}

impl OverlayStyle {
    pub fn validate(&self) -> Result<()> {
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return Err(Error::invalid(format!("opacity must lie in (0, 1], got {}", self.opacity)));
        }
        if self.point_radius_px == 0 || self.line_width_px == 0 {
            return Err(Error::invalid("point radius and line width must be at least 1"));
        }
        Ok(())
    }

    /// Parses `color=R,G,B,opacity=A[,radius=R][,width=W]`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut style = OverlayStyle::default();
        let mut key: Option<&str> = None;
        let mut color: Vec<u8> = Vec::new();
        for tok in spec.split(',').map(str::trim) {
            let value = match tok.split_once('=') {
                Some((k, v)) => {
                    key = Some(k.trim());
                    v.trim()
                }
                None => tok,
            };
            let bad = || Error::invalid(format!("bad style token `{tok}`"));
            match key {
                Some("color") => color.push(value.parse().map_err(|_| bad())?),
                Some("opacity") => style.opacity = value.parse().map_err(|_| bad())?,
                Some("radius") => style.point_radius_px = value.parse().map_err(|_| bad())?,
                Some("width") => style.line_width_px = value.parse().map_err(|_| bad())?,
                _ => return Err(bad()),
            }
        }
        if !color.is_empty() {
            if color.len() != 3 {
                return Err(Error::invalid("color needs exactly three components"));
            }
            style.color = [color[0], color[1], color[2]];
        }
        style.validate()?;
        Ok(style)
    }
}

/// RGB8 image, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterFrame {
    pub width_px: u32,
    pub height_px: u32,
    pub pixels: Vec<u8>,
}

impl RasterFrame {
    pub fn solid(width_px: u32, height_px: u32, color: [u8; 3]) -> Self {
        let n = width_px as usize * height_px as usize;
        let mut pixels = Vec::with_capacity(3 * n);
        for _ in 0..n {
            pixels.extend_from_slice(&color);
        }
        Self { width_px, height_px, pixels }
    }

    pub fn new(width_px: u32, height_px: u32, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != 3 * width_px as usize * height_px as usize {
            return Err(Error::invalid("pixel buffer length must be 3 * W * H"));
        }
        Ok(Self { width_px, height_px, pixels })
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y as usize * self.width_px as usize + x as usize);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width_px, self.height_px);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
        let mut writer = enc.write_header().map_err(to_io)?;
        writer.write_image_data(&self.pixels).map_err(to_io)?;
        writer.finish().map_err(to_io)
    }
}

/// What the trails are drawn on top of.
#[derive(Debug, Clone, Copy)]
pub enum Background<'a> {
    Solid([u8; 3]),
    Frame(&'a RasterFrame),
}

impl Background<'_> {
    pub const WHITE: Background<'static> = Background::Solid([255, 255, 255]);

    fn materialize(&self, w: u32, h: u32) -> Result<RasterFrame> {
        match self {
            Background::Solid(c) => Ok(RasterFrame::solid(w, h, *c)),
            Background::Frame(f) => {
                if f.width_px != w || f.height_px != h {
                    return Err(Error::invalid(format!(
                        "background is {}x{}, sequence frame is {w}x{h}",
                        f.width_px, f.height_px
                    )));
                }
                Ok((*f).clone())
            }
        }
    }
}

/// Per-frame backgrounds for a whole sequence.
#[derive(Debug, Clone, Copy)]
pub enum Backgrounds<'a> {
    Solid([u8; 3]),
    Frames(&'a [RasterFrame]),
}

struct Mask {
    w: i64,
    h: i64,
    bits: Vec<bool>,
}

impl Mask {
    fn new(w: u32, h: u32) -> Self {
        Self { w: i64::from(w), h: i64::from(h), bits: vec![false; w as usize * h as usize] }
    }

    fn set(&mut self, x: i64, y: i64) {
        if (0..self.w).contains(&x) && (0..self.h).contains(&y) {
            self.bits[(y * self.w + x) as usize] = true;
        }
    }

    fn stamp(&mut self, x: i64, y: i64, width: u32) {
        let lo = -(i64::from(width) - 1) / 2;
        let hi = i64::from(width) / 2;
        for dy in lo..=hi {
            for dx in lo..=hi {
                self.set(x + dx, y + dy);
            }
        }
    }

    fn line(&mut self, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), width: u32) {
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.stamp(x0, y0, width);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    fn disc(&mut self, (cx, cy): (i64, i64), radius: u32) {
        let r = i64::from(radius);
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    self.set(cx + dx, cy + dy);
                }
            }
        }
    }

    fn blend_into(&self, frame: &mut RasterFrame, style: &OverlayStyle) {
        let a = style.opacity;
        for (i, &on) in self.bits.iter().enumerate() {
            if on {
                for c in 0..3 {
                    let bg = f64::from(frame.pixels[3 * i + c]);
                    let v = a * f64::from(style.color[c]) + (1.0 - a) * bg;
                    frame.pixels[3 * i + c] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
}

fn pixel_of(points: &ArrayView2<f64>, j: usize) -> (i64, i64) {
    (points[[j, 0]].round() as i64, points[[j, 1]].round() as i64)
}

fn check(seq: &TrajectorySequence, style: &OverlayStyle) -> Result<()> {
    style.validate()?;
    if seq.points_px.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("sequence `{}` has non-finite coordinates", seq.id)));
    }
    Ok(())
}

/// Renders the trails of every point up to frame `t` plus frame-`t` markers.
pub fn render_overlay(
    seq: &TrajectorySequence,
    t: usize,
    background: Background<'_>,
    style: &OverlayStyle,
) -> Result<RasterFrame> {
    check(seq, style)?;
    if t >= seq.num_frames() {
        return Err(Error::invalid(format!("frame {t} out of range for {} frames", seq.num_frames())));
    }
    let mut frame = background.materialize(seq.width_px, seq.height_px)?;
    let mut mask = Mask::new(seq.width_px, seq.height_px);
    let pts = &seq.points_px;
    for j in 0..seq.num_points() {
        for s in 1..=t {
            let a = pixel_of(&pts.index_axis(ndarray::Axis(0), s - 1), j);
            let b = pixel_of(&pts.index_axis(ndarray::Axis(0), s), j);
            mask.line(a, b, style.line_width_px);
        }
        mask.disc(pixel_of(&pts.index_axis(ndarray::Axis(0), t), j), style.point_radius_px);
    }
    mask.blend_into(&mut frame, style);
    Ok(frame)
}

/// Renders all `T` frames; frame `t` shows trails through `t`.
pub fn render_sequence(
    seq: &TrajectorySequence,
    backgrounds: Backgrounds<'_>,
    style: &OverlayStyle,
) -> Result<Vec<RasterFrame>> {
    check(seq, style)?;
    let t_count = seq.num_frames();
    if let Backgrounds::Frames(f) = backgrounds {
        if f.len() != t_count {
            return Err(Error::invalid(format!("{} backgrounds for {t_count} frames", f.len())));
        }
    }
    let pts = &seq.points_px;
    let mut trail = Mask::new(seq.width_px, seq.height_px);
    let mut out = Vec::with_capacity(t_count);
    for t in 0..t_count {
        let bg = match backgrounds {
            Backgrounds::Solid(c) => Background::Solid(c),
            Backgrounds::Frames(f) => Background::Frame(&f[t]),
        };
        let mut frame = bg.materialize(seq.width_px, seq.height_px)?;
        let cur = pts.index_axis(ndarray::Axis(0), t);
        if t > 0 {
            let prev = pts.index_axis(ndarray::Axis(0), t - 1);
            for j in 0..seq.num_points() {
                trail.line(pixel_of(&prev, j), pixel_of(&cur, j), style.line_width_px);
            }
        }
        let mut mask = Mask { w: trail.w, h: trail.h, bits: trail.bits.clone() };
        for j in 0..seq.num_points() {
            mask.disc(pixel_of(&cur, j), style.point_radius_px);
        }
        mask.blend_into(&mut frame, style);
        out.push(frame);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traj::{synth_corpus, MotionClass, SynthOptions};
    use ndarray::Array3;

    fn stationary_at(x: f64, y: f64, frames: usize) -> TrajectorySequence {
        let mut p = Array3::zeros((frames, 1, 2));
        for t in 0..frames {
            p[[t, 0, 0]] = x;
            p[[t, 0, 1]] = y;
        }
        TrajectorySequence {
            id: "s".into(),
            width_px: 32,
            height_px: 32,
            points_px: p,
            visibility: None,
            captions: vec!["still".into()],
            grid_rows: 1,
            grid_cols: 1,
            mask_bbox_px: None,
        }
    }

    fn covered(f: &RasterFrame, bg: [u8; 3]) -> Vec<(u32, u32)> {
        let mut v = Vec::new();
        for y in 0..f.height_px {
            for x in 0..f.width_px {
                if f.pixel(x, y) != bg {
                    v.push((x, y));
                }
            }
        }
        v
    }

    #[test]
    fn half_cyan_on_white() {
        let seq = stationary_at(10.0, 10.0, 2);
        let f = render_overlay(&seq, 1, Background::WHITE, &OverlayStyle::default()).unwrap();
        let cov = covered(&f, [255, 255, 255]);
        // radius-2 disc: 13 pixels
        assert_eq!(cov.len(), 13);
        for (x, y) in cov {
            assert_eq!(f.pixel(x, y), [128, 255, 255]);
        }
    }

    #[test]
    fn full_opacity_paints_exact_color() {
        let seq = stationary_at(10.0, 10.0, 2);
        let style = OverlayStyle { opacity: 1.0, ..OverlayStyle::default() };
        let f = render_overlay(&seq, 0, Background::WHITE, &style).unwrap();
        for (x, y) in covered(&f, [255, 255, 255]) {
            assert_eq!(f.pixel(x, y), [0, 255, 255]);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let seq = stationary_at(10.0, 10.0, 2);
        let bg = RasterFrame::solid(16, 16, [0, 0, 0]);
        assert!(render_overlay(&seq, 0, Background::Frame(&bg), &OverlayStyle::default()).is_err());
        assert!(render_overlay(&seq, 2, Background::WHITE, &OverlayStyle::default()).is_err());
        let one = vec![RasterFrame::solid(32, 32, [0, 0, 0])];
        assert!(render_sequence(&seq, Backgrounds::Frames(&one), &OverlayStyle::default()).is_err());
    }

    #[test]
    fn sequence_matches_per_frame_rendering() {
        let seq = &synth_corpus(1, &[MotionClass::CircleCw], 4, &SynthOptions::default()).unwrap()[0];
        let style = OverlayStyle { line_width_px: 2, ..OverlayStyle::default() };
        let all = render_sequence(seq, Backgrounds::Solid([255, 255, 255]), &style).unwrap();
        assert_eq!(all.len(), seq.num_frames());
        for t in [0, 1, 7, seq.num_frames() - 1] {
            assert_eq!(all[t], render_overlay(seq, t, Background::WHITE, &style).unwrap());
        }
    }

    #[test]
    fn stationary_frames_are_identical_and_frame_zero_is_markers_only() {
        let seq = stationary_at(5.0, 20.0, 2);
        let frames = render_sequence(&seq, Backgrounds::Solid([255, 255, 255]), &OverlayStyle::default()).unwrap();
        assert_eq!(frames[0], frames[1]);

        let mut moving = stationary_at(5.0, 20.0, 2);
        moving.points_px[[1, 0, 0]] = 25.0;
        let f0 = render_overlay(&moving, 0, Background::WHITE, &OverlayStyle::default()).unwrap();
        assert_eq!(covered(&f0, [255, 255, 255]).len(), 13);
    }

    #[test]
    fn blend_stays_between_background_and_color() {
        let seq = &synth_corpus(1, &[MotionClass::Zigzag], 2, &SynthOptions::default()).unwrap()[0];
        let bg = RasterFrame::solid(seq.width_px, seq.height_px, [40, 200, 90]);
        for opacity in [0.3, 0.5, 0.7, 1.0] {
            let style = OverlayStyle { color: [250, 10, 128], opacity, ..OverlayStyle::default() };
            let f = render_overlay(seq, 20, Background::Frame(&bg), &style).unwrap();
            for px in f.pixels.chunks(3) {
                for c in 0..3 {
                    let (lo, hi) = (bg.pixels[c].min(style.color[c]), bg.pixels[c].max(style.color[c]));
                    assert!((lo..=hi).contains(&px[c]));
                }
            }
        }
    }

    #[test]
    fn trails_only_grow() {
        let seq = &synth_corpus(1, &[MotionClass::TranslateRight], 8, &SynthOptions::default()).unwrap()[0];
        let style = OverlayStyle { point_radius_px: 1, ..OverlayStyle::default() };
        let frames = render_sequence(seq, Backgrounds::Solid([255, 255, 255]), &style).unwrap();
        for t in 2..frames.len() {
            let marker = |&(x, y): &(u32, u32)| {
                (0..seq.num_points()).any(|j| {
                    let dx = i64::from(x) - seq.points_px[[t - 1, j, 0]].round() as i64;
                    let dy = i64::from(y) - seq.points_px[[t - 1, j, 1]].round() as i64;
                    dx * dx + dy * dy <= 1
                })
            };
            let trail: Vec<_> = covered(&frames[t - 1], [255, 255, 255]).into_iter().filter(|p| !marker(p)).collect();
            let now: std::collections::HashSet<_> = covered(&frames[t], [255, 255, 255]).into_iter().collect();
            assert!(!trail.is_empty());
            assert!(trail.iter().all(|p| now.contains(p)), "frame {t} lost trail pixels");
        }
    }

    #[test]
    fn style_parsing() {
        let s = OverlayStyle::parse("color=0,255,255,opacity=0.5").unwrap();
        assert_eq!(s, OverlayStyle::default());
        let s = OverlayStyle::parse("color=255,0,0,opacity=1,radius=3,width=2").unwrap();
        assert_eq!((s.color, s.opacity, s.point_radius_px, s.line_width_px), ([255, 0, 0], 1.0, 3, 2));
        assert!(OverlayStyle::parse("color=1,2").is_err());
        assert!(OverlayStyle::parse("opacity=0").is_err());
    }

    #[test]
    fn png_export_writes_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.png");
        RasterFrame::solid(4, 3, [1, 2, 3]).write_png(&p).unwrap();
        let bytes = std::fs::read(p).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
    }
}
