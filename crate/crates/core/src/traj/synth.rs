//! Seeded generator of labeled synthetic trajectories.
//!
//! Each item is a point grid rigidly carried by one parametric motion.
//! Motions are phase-locked to the grid's starting position so that the
//! class alone determines the motion direction; only magnitudes are sampled.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::TrajectorySequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MotionClass {
    TranslateLeft,
    TranslateRight,
    TranslateUp,
    TranslateDown,
    CircleCw,
    CircleCcw,
    Zigzag,
    Expand,
    Contract,
    Stationary,
}

impl MotionClass {
    pub const ALL: [MotionClass; 10] = [
        MotionClass::TranslateLeft,
        MotionClass::TranslateRight,
        MotionClass::TranslateUp,
        MotionClass::TranslateDown,
        MotionClass::CircleCw,
        MotionClass::CircleCcw,
        MotionClass::Zigzag,
        MotionClass::Expand,
        MotionClass::Contract,
        MotionClass::Stationary,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MotionClass::TranslateLeft => "translate-left",
            MotionClass::TranslateRight => "translate-right",
            MotionClass::TranslateUp => "translate-up",
            MotionClass::TranslateDown => "translate-down",
            MotionClass::CircleCw => "circle-cw",
            MotionClass::CircleCcw => "circle-ccw",
            MotionClass::Zigzag => "zigzag",
            MotionClass::Expand => "expand",
            MotionClass::Contract => "contract",
            MotionClass::Stationary => "stationary",
        }
    }

    pub fn caption(self) -> &'static str {
        match self {
            MotionClass::TranslateLeft => "object moving left",
            MotionClass::TranslateRight => "object moving right",
            MotionClass::TranslateUp => "object moving up",
            MotionClass::TranslateDown => "object moving down",
            MotionClass::CircleCw => "object circling clockwise",
            MotionClass::CircleCcw => "object circling counterclockwise",
            MotionClass::Zigzag => "object zigzagging",
            MotionClass::Expand => "object expanding",
            MotionClass::Contract => "object contracting",
            MotionClass::Stationary => "object staying still",
        }
    }

    /// Words that identify this class inside free text.
    pub fn keywords(self) -> &'static [&'static str] {
        match self {
            MotionClass::TranslateLeft => &["left", "leftward", "leftwards"],
            MotionClass::TranslateRight => &["right", "rightward", "rightwards"],
            MotionClass::TranslateUp => &["up", "upward", "upwards"],
            MotionClass::TranslateDown => &["down", "downward", "downwards"],
            MotionClass::CircleCw => &["clockwise", "cw"],
            MotionClass::CircleCcw => &["counterclockwise", "anticlockwise", "ccw"],
            MotionClass::Zigzag => &["zigzag", "zigzagging", "zigzags"],
            MotionClass::Expand => &["expand", "expanding", "expands", "growing"],
            MotionClass::Contract => &["contract", "contracting", "contracts", "shrinking"],
            MotionClass::Stationary => &["stationary", "still", "static", "motionless"],
        }
    }

    /// Finds the first motion-class keyword in `text`, scanning words left
    /// to right. `counter clockwise` / `anti-clockwise` count as one word.
    pub fn detect(text: &str) -> Option<MotionClass> {
        let words: Vec<String> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect();
        for (i, w) in words.iter().enumerate() {
            if w == "clockwise" && i > 0 && (words[i - 1] == "counter" || words[i - 1] == "anti") {
                return Some(MotionClass::CircleCcw);
            }
            if let Some(c) = MotionClass::ALL.iter().find(|c| c.keywords().contains(&w.as_str())) {
                return Some(*c);
            }
        }
        None
    }

    pub fn is_moving(self) -> bool {
        self != MotionClass::Stationary
    }
}

impl fmt::Display for MotionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MotionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MotionClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown motion class `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub num_frames: usize,
    pub width_px: u32,
    pub height_px: u32,
    /// Standard deviation of per-point, per-frame Gaussian jitter.
    pub jitter_px: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { grid_rows: 6, grid_cols: 6, num_frames: 30, width_px: 256, height_px: 256, jitter_px: 0.5 }
    }
}

const MARGIN_PX: f64 = 4.0;

/// Frame-`t` position of a point at offset `q` from the grid center, before
/// placement. `u` runs from 0 at the first frame to 1 at the last.
struct Motion {
    class: MotionClass,
    magnitude: f64,
    amplitude: f64,
}

impl Motion {
    fn sample(class: MotionClass, rng: &mut ChaCha8Rng) -> Self {
        let (magnitude, amplitude) = match class {
            MotionClass::TranslateLeft
            | MotionClass::TranslateRight
            | MotionClass::TranslateUp
            | MotionClass::TranslateDown => (rng.random_range(70.0..110.0), 0.0),
            MotionClass::CircleCw | MotionClass::CircleCcw => (rng.random_range(45.0..65.0), 0.0),
            MotionClass::Zigzag => (rng.random_range(70.0..110.0), rng.random_range(12.0..20.0)),
            MotionClass::Expand => (rng.random_range(1.6..2.0), 0.0),
            MotionClass::Contract => (rng.random_range(0.4..0.6), 0.0),
            MotionClass::Stationary => (0.0, 0.0),
        };
        Self { class, magnitude, amplitude }
    }

    fn offset(&self, q: [f64; 2], u: f64) -> [f64; 2] {
        let [qx, qy] = q;
        let d = self.magnitude;
        match self.class {
            MotionClass::TranslateLeft => [qx - d * u, qy],
            MotionClass::TranslateRight => [qx + d * u, qy],
            MotionClass::TranslateUp => [qx, qy - d * u],
            MotionClass::TranslateDown => [qx, qy + d * u],
            MotionClass::CircleCw | MotionClass::CircleCcw => {
                // Rigid rotation about a center `d` below the grid; with the
                // y axis pointing down, increasing angle is clockwise on screen.
                let dir = if self.class == MotionClass::CircleCw { 1.0 } else { -1.0 };
                let phi = dir * 1.5 * PI * u;
                let (s, c) = phi.sin_cos();
                let (rx, ry) = (qx, qy - d);
                [c * rx - s * ry, s * rx + c * ry + d]
            }
            MotionClass::Zigzag => [qx + d * u, qy - self.amplitude * triangle(3.0 * u)],
            MotionClass::Expand | MotionClass::Contract => {
                let s = d.powf(u);
                [qx * s, qy * s]
            }
            MotionClass::Stationary => [qx, qy],
        }
    }
}

/// Triangle wave with period 1: 0 -> 1 -> 0 -> -1 -> 0.
fn triangle(x: f64) -> f64 {
    let f = x - x.floor();
    if f < 0.25 {
        4.0 * f
    } else if f < 0.75 {
        2.0 - 4.0 * f
    } else {
        4.0 * f - 4.0
    }
}

/// Builds `num_per_class` sequences for each class, in the given class
/// order. Identical arguments always give identical output.
pub fn synth_corpus(
    num_per_class: usize,
    classes: &[MotionClass],
    seed: u64,
    opts: &SynthOptions,
) -> Result<Vec<TrajectorySequence>> {
    if opts.grid_rows == 0 || opts.grid_cols == 0 {
        return Err(Error::invalid("grid must have at least one row and column"));
    }
    if opts.num_frames < 2 {
        return Err(Error::invalid("need at least 2 frames"));
    }
    if !(opts.jitter_px >= 0.0 && opts.jitter_px.is_finite()) {
        return Err(Error::invalid("jitter must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, opts.jitter_px).map_err(|e| Error::invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(num_per_class * classes.len());
    for &class in classes {
        for idx in 0..num_per_class {
            out.push(synth_one(class, idx, opts, &jitter, &mut rng));
        }
    }
    Ok(out)
}

fn synth_one(
    class: MotionClass,
    idx: usize,
    opts: &SynthOptions,
    jitter: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> TrajectorySequence {
    let (rows, cols, frames) = (opts.grid_rows, opts.grid_cols, opts.num_frames);
    let n = rows * cols;
    let (w, h) = (f64::from(opts.width_px), f64::from(opts.height_px));
    let gw = rng.random_range(36.0..56.0_f64).min(w / 4.0);
    let gh = rng.random_range(36.0..56.0_f64).min(h / 4.0);
    let motion = Motion::sample(class, rng);

    let grid_offset = |i: usize| -> [f64; 2] {
        let (r, c) = (i / cols, i % cols);
        let fx = if cols == 1 { 0.5 } else { c as f64 / (cols - 1) as f64 };
        let fy = if rows == 1 { 0.5 } else { r as f64 / (rows - 1) as f64 };
        [(fx - 0.5) * gw, (fy - 0.5) * gh]
    };

    let mut rel = Array3::<f64>::zeros((frames, n, 2));
    for t in 0..frames {
        let u = t as f64 / (frames - 1) as f64;
        for i in 0..n {
            let [x, y] = motion.offset(grid_offset(i), u);
            rel[[t, i, 0]] = x;
            rel[[t, i, 1]] = y;
        }
    }

    // Place the grid center so the whole motion stays inside the frame.
    let place = |axis: usize, extent: f64, rng: &mut ChaCha8Rng| -> f64 {
        let lane = rel.index_axis(ndarray::Axis(2), axis);
        let lo = lane.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = lane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (min_c, max_c) = (MARGIN_PX - lo, extent - MARGIN_PX - hi);
        if min_c < max_c {
            rng.random_range(min_c..max_c)
        } else {
            extent / 2.0
        }
    };
    let cx = place(0, w, rng);
    let cy = place(1, h, rng);

    let mut points = rel;
    for t in 0..frames {
        for i in 0..n {
            let (jx, jy) = if opts.jitter_px > 0.0 {
                (jitter.sample(rng), jitter.sample(rng))
            } else {
                (0.0, 0.0)
            };
            points[[t, i, 0]] = (points[[t, i, 0]] + cx + jx).clamp(0.0, w);
            points[[t, i, 1]] = (points[[t, i, 1]] + cy + jy).clamp(0.0, h);
        }
    }

    let first = points.index_axis(ndarray::Axis(0), 0);
    TrajectorySequence {
        id: format!("{}/{idx:04}", class.name()),
        width_px: opts.width_px,
        height_px: opts.height_px,
        mask_bbox_px: Some(super::bbox_of(first)),
        points_px: points,
        visibility: None,
        captions: vec![class.caption().to_string()],
        grid_rows: rows,
        grid_cols: cols,
    }
}

/// Class label encoded in a synthetic sequence id (`<class>/<index>`).
pub fn class_from_id(id: &str) -> Option<MotionClass> {
    id.split('/').next().and_then(|s| s.parse().ok())
}
