//! Trajectory containers, the `[-1, 1]` coordinate normalization, and
//! initial point-grid placement.
//!
//! A sequence stores `T` frames of `N` tracked points as a `[T, N, 2]`
//! array of pixel coordinates. Coordinates are kept in `f64` at this layer;
//! the model converts to its own scalar type at the boundary.

mod synth;

pub use synth::{class_from_id, synth_corpus, MotionClass, SynthOptions};

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `N` tracked points over `T` frames, in pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySequence {
    pub id: String,
    pub width_px: u32,
    pub height_px: u32,
    /// `[T, N, 2]`, `(x, y)` per point.
    pub points_px: Array3<f64>,
    /// `[T, N]`. Carried through I/O; the model ignores it.
    pub visibility: Option<Array2<bool>>,
    pub captions: Vec<String>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub mask_bbox_px: Option<[f64; 4]>,
}

impl TrajectorySequence {
    pub fn num_frames(&self) -> usize {
        self.points_px.shape()[0]
    }

    pub fn num_points(&self) -> usize {
        self.points_px.shape()[1]
    }

    fn invalid(&self, reason: impl Into<String>) -> Error {
        Error::Validation { id: self.id.clone(), reason: reason.into() }
    }

    /// Checks every structural invariant. Coordinates must already lie
    /// inside the frame; call [`clamp_to_frame`](Self::clamp_to_frame) first
    /// for raw tracker output.
    pub fn validate(&self) -> Result<()> {
        let shape = self.points_px.shape();
        if shape[2] != 2 {
            return Err(self.invalid(format!("points must have 2 coordinates, got {}", shape[2])));
        }
        if shape[0] < 2 {
            return Err(self.invalid(format!("need at least 2 frames, got {}", shape[0])));
        }
        if shape[1] == 0 {
            return Err(self.invalid("need at least 1 point"));
        }
        if self.width_px == 0 || self.height_px == 0 {
            return Err(self.invalid("frame dimensions must be positive"));
        }
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(self.invalid("grid dimensions must be positive"));
        }
        if self.grid_rows * self.grid_cols != shape[1] {
            return Err(self.invalid(format!(
                "grid {}x{} does not match {} points",
                self.grid_rows, self.grid_cols, shape[1]
            )));
        }
        if self.captions.is_empty() {
            return Err(self.invalid("at least one caption is required"));
        }
        if let Some(vis) = &self.visibility {
            if vis.dim() != (shape[0], shape[1]) {
                return Err(self.invalid("visibility shape must be [T, N]"));
            }
        }
        let (w, h) = (f64::from(self.width_px), f64::from(self.height_px));
        for p in self.points_px.lanes(Axis(2)) {
            let (x, y) = (p[0], p[1]);
            if !x.is_finite() || !y.is_finite() {
                return Err(self.invalid("non-finite coordinate"));
            }
            if !(0.0..=w).contains(&x) || !(0.0..=h).contains(&y) {
                return Err(self.invalid(format!("coordinate ({x}, {y}) outside {w}x{h} frame")));
            }
        }
        Ok(())
    }

    /// Clamps coordinates into `[0, W] x [0, H]` and returns how many
    /// coordinate entries were changed.
    pub fn clamp_to_frame(&mut self) -> usize {
        let (w, h) = (f64::from(self.width_px), f64::from(self.height_px));
        let mut clamped = 0;
        for mut p in self.points_px.lanes_mut(Axis(2)) {
            for (c, hi) in [(0, w), (1, h)] {
                let v = p[c];
                if v.is_finite() {
                    let cv = v.clamp(0.0, hi);
                    if cv != v {
                        p[c] = cv;
                        clamped += 1;
                    }
                }
            }
        }
        clamped
    }

    /// Axis-aligned bounding box of the points at frame `t`.
    pub fn frame_bbox(&self, t: usize) -> [f64; 4] {
        bbox_of(self.points_px.index_axis(Axis(0), t))
    }
}

pub(crate) fn bbox_of(points: ArrayView2<f64>) -> [f64; 4] {
    let mut bb = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for p in points.rows() {
        bb[0] = bb[0].min(p[0]);
        bb[1] = bb[1].min(p[1]);
        bb[2] = bb[2].max(p[0]);
        bb[3] = bb[3].max(p[1]);
    }
    bb
}

/// Trajectory in normalized units, every coordinate in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedTrajectory {
    /// `[T, N, 2]`
    pub points: Array3<f64>,
}

impl NormalizedTrajectory {
    pub fn new(points: Array3<f64>) -> Result<Self> {
        if points.shape()[2] != 2 {
            return Err(Error::shape("normalized trajectory must be [T, N, 2]"));
        }
        Ok(Self { points })
    }

    pub fn num_frames(&self) -> usize {
        self.points.shape()[0]
    }

    pub fn num_points(&self) -> usize {
        self.points.shape()[1]
    }

    /// Flattens to `[T, 2N]` with `(x0, y0, x1, y1, ...)` per row.
    pub fn to_rows(&self) -> Array2<f64> {
        let (t, n, _) = self.points.dim();
        self.points
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((t, 2 * n))
            .expect("contiguous [T, N, 2]")
    }

    /// Inverse of [`to_rows`](Self::to_rows).
    pub fn from_rows(rows: Array2<f64>) -> Result<Self> {
        let (t, cols) = rows.dim();
        if cols % 2 != 0 {
            return Err(Error::shape(format!("row width {cols} is not 2N")));
        }
        let points = rows
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((t, cols / 2, 2))
            .map_err(|e| Error::shape(e.to_string()))?;
        Ok(Self { points })
    }
}

/// Maps pixels to `(2x/W - 1, 2y/H - 1)`.
pub fn normalize(seq: &TrajectorySequence) -> Result<NormalizedTrajectory> {
    if seq.width_px == 0 || seq.height_px == 0 {
        return Err(Error::invalid("frame dimensions must be positive"));
    }
    if seq.points_px.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("sequence `{}` has a non-finite coordinate", seq.id)));
    }
    let points = normalize_points(seq.points_px.view().into_dyn(), seq.width_px, seq.height_px)
        .into_dimensionality()
        .expect("rank preserved");
    Ok(NormalizedTrajectory { points })
}

fn normalize_points(points: ndarray::ArrayViewD<f64>, w: u32, h: u32) -> ndarray::ArrayD<f64> {
    let (w, h) = (f64::from(w), f64::from(h));
    let mut out = points.to_owned();
    for mut p in out.lanes_mut(Axis(points.ndim() - 1)) {
        p[0] = 2.0 * p[0] / w - 1.0;
        p[1] = 2.0 * p[1] / h - 1.0;
    }
    out
}

/// Normalizes a single point set `[N, 2]`.
pub fn normalize_point_set(points: ArrayView2<f64>, w: u32, h: u32) -> Result<Array2<f64>> {
    if w == 0 || h == 0 {
        return Err(Error::invalid("frame dimensions must be positive"));
    }
    if points.ncols() != 2 {
        return Err(Error::shape("point set must be [N, 2]"));
    }
    Ok(normalize_points(points.into_dyn(), w, h)
        .into_dimensionality()
        .expect("rank preserved"))
}

/// Maps normalized units back to pixels: `x = (x' + 1) W / 2`.
pub fn denormalize(traj: &NormalizedTrajectory, w: u32, h: u32) -> Result<Array3<f64>> {
    if w == 0 || h == 0 {
        return Err(Error::invalid("frame dimensions must be positive"));
    }
    let (wf, hf) = (f64::from(w), f64::from(h));
    let mut out = traj.points.clone();
    for mut p in out.lanes_mut(Axis(2)) {
        p[0] = (p[0] + 1.0) * wf / 2.0;
        p[1] = (p[1] + 1.0) * hf / 2.0;
    }
    Ok(out)
}

/// Rectangular point grid spanning a bounding box, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// `(x0, y0, x1, y1)`
    pub bbox_px: [f64; 4],
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let [x0, y0, x1, y1] = self.bbox_px;
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::invalid("grid rows and cols must be at least 1"));
        }
        if self.bbox_px.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("bbox has a non-finite coordinate"));
        }
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::invalid(format!(
                "degenerate bbox ({x0}, {y0}, {x1}, {y1})"
            )));
        }
        Ok(())
    }

    pub fn within_frame(&self, w: u32, h: u32) -> bool {
        let [x0, y0, x1, y1] = self.bbox_px;
        x0 >= 0.0 && y0 >= 0.0 && x1 <= f64::from(w) && y1 <= f64::from(h)
    }
}

fn spaced(lo: f64, hi: f64, count: usize, i: usize) -> f64 {
    if count == 1 {
        (lo + hi) / 2.0
    } else {
        lo + (hi - lo) * i as f64 / (count - 1) as f64
    }
}

/// Evenly spaced `rows x cols` points over the bbox in row-major order.
pub fn init_grid(spec: &GridSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    let [x0, y0, x1, y1] = spec.bbox_px;
    let mut out = Array2::zeros((spec.rows * spec.cols, 2));
    for r in 0..spec.rows {
        let y = spaced(y0, y1, spec.rows, r);
        for c in 0..spec.cols {
            let i = r * spec.cols + c;
            out[[i, 0]] = spaced(x0, x1, spec.cols, c);
            out[[i, 1]] = y;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn one_point_seq(x: f64, y: f64, w: u32, h: u32) -> TrajectorySequence {
        TrajectorySequence {
            id: "p".into(),
            width_px: w,
            height_px: h,
            points_px: Array3::from_shape_vec((2, 1, 2), vec![x, y, x, y]).unwrap(),
            visibility: None,
            captions: vec!["c".into()],
            grid_rows: 1,
            grid_cols: 1,
            mask_bbox_px: None,
        }
    }

    #[test]
    fn normalize_corners_and_midpoint() {
        for (x, y, ex, ey) in [(0.0, 0.0, -1.0, -1.0), (320.0, 240.0, 0.0, 0.0), (640.0, 480.0, 1.0, 1.0)] {
            let n = normalize(&one_point_seq(x, y, 640, 480)).unwrap();
            assert_eq!(n.points[[0, 0, 0]], ex);
            assert_eq!(n.points[[0, 0, 1]], ey);
        }
    }

    #[test]
    fn denormalize_inverts() {
        let t = NormalizedTrajectory::new(
            Array3::from_shape_vec((2, 1, 2), vec![0.0, 0.0, -1.0, -1.0]).unwrap(),
        )
        .unwrap();
        let px = denormalize(&t, 640, 480).unwrap();
        assert_eq!(px[[0, 0, 0]], 320.0);
        assert_eq!(px[[0, 0, 1]], 240.0);
        assert_eq!(px[[1, 0, 0]], 0.0);
        assert_eq!(px[[1, 0, 1]], 0.0);
        assert!(denormalize(&t, 0, 480).is_err());
    }

    #[test]
    fn normalize_rejects_non_finite() {
        let seq = one_point_seq(f64::NAN, 1.0, 10, 10);
        assert!(matches!(normalize(&seq), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn grid_even_spacing() {
        let g = init_grid(&GridSpec { rows: 6, cols: 6, bbox_px: [100.0, 50.0, 200.0, 150.0] }).unwrap();
        let xs: Vec<f64> = (0..6).map(|c| g[[c, 0]]).collect();
        let ys: Vec<f64> = (0..6).map(|r| g[[r * 6, 1]]).collect();
        assert_eq!(xs, vec![100.0, 120.0, 140.0, 160.0, 180.0, 200.0]);
        assert_eq!(ys, vec![50.0, 70.0, 90.0, 110.0, 130.0, 150.0]);
    }

    #[test]
    fn grid_corners_and_centroid() {
        let g = init_grid(&GridSpec { rows: 2, cols: 2, bbox_px: [0.0, 0.0, 10.0, 10.0] }).unwrap();
        assert_eq!(g, array![[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]]);
        let g = init_grid(&GridSpec { rows: 1, cols: 1, bbox_px: [0.0, 0.0, 10.0, 10.0] }).unwrap();
        assert_eq!(g, array![[5.0, 5.0]]);
    }

    #[test]
    fn grid_rejects_degenerate_bbox() {
        let spec = GridSpec { rows: 2, cols: 2, bbox_px: [5.0, 0.0, 5.0, 10.0] };
        assert!(matches!(init_grid(&spec), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn clamp_counts_out_of_bounds() {
        let mut seq = one_point_seq(5.0, 5.0, 10, 10);
        seq.points_px[[1, 0, 0]] = -3.0;
        seq.points_px[[1, 0, 1]] = 12.0;
        assert!(seq.validate().is_err());
        assert_eq!(seq.clamp_to_frame(), 2);
        assert_eq!(seq.points_px[[1, 0, 0]], 0.0);
        assert_eq!(seq.points_px[[1, 0, 1]], 10.0);
        seq.validate().unwrap();
    }

    #[test]
    fn validate_catches_grid_mismatch_and_short_sequences() {
        let mut seq = one_point_seq(5.0, 5.0, 10, 10);
        seq.grid_cols = 2;
        assert!(matches!(seq.validate(), Err(Error::Validation { .. })));
        let mut seq = one_point_seq(5.0, 5.0, 10, 10);
        seq.points_px = Array3::zeros((1, 1, 2));
        assert!(seq.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn round_trip_within_a_micro_pixel(
                w in 1u32..4096, h in 1u32..4096,
                fx in 0.0f64..=1.0, fy in 0.0f64..=1.0,
            ) {
                let seq = one_point_seq(fx * f64::from(w), fy * f64::from(h), w, h);
                let n = normalize(&seq).unwrap();
                prop_assert!(n.points.iter().all(|v| (-1.0..=1.0).contains(v)));
                let back = denormalize(&n, w, h).unwrap();
                for (a, b) in back.iter().zip(seq.points_px.iter()) {
                    prop_assert!((a - b).abs() < 1e-6);
                }
            }

            #[test]
            fn grid_is_row_major_monotone(rows in 1usize..9, cols in 1usize..9,
                x0 in 0.0f64..100.0, y0 in 0.0f64..100.0, dw in 1.0f64..200.0, dh in 1.0f64..200.0) {
                let g = init_grid(&GridSpec { rows, cols, bbox_px: [x0, y0, x0 + dw, y0 + dh] }).unwrap();
                prop_assert_eq!(g.nrows(), rows * cols);
                for r in 0..rows {
                    for c in 1..cols {
                        prop_assert!(g[[r * cols + c, 0]] >= g[[r * cols + c - 1, 0]]);
                    }
                    if r > 0 {
                        prop_assert!(g[[r * cols, 1]] >= g[[(r - 1) * cols, 1]]);
                    }
                }
            }
        }
    }
}
