use ndarray::{ArrayView3, Axis};

use crate::error::{Error, Result};

fn check_pair(gt: &ArrayView3<f64>, pred: &ArrayView3<f64>) -> Result<()> {
    if gt.dim() != pred.dim() {
        return Err(Error::invalid(format!("shapes differ: {:?} vs {:?}", gt.dim(), pred.dim())));
    }
    let (t, n, c) = gt.dim();
    if t == 0 || n == 0 || c != 2 {
        return Err(Error::invalid(format!("expected a non-empty [T, N, 2] tensor, got {:?}", gt.dim())));
    }
    Ok(())
}

fn dist(a: ArrayView3<f64>, b: ArrayView3<f64>, t: usize, j: usize) -> f64 {
    (a[[t, j, 0]] - b[[t, j, 0]]).hypot(a[[t, j, 1]] - b[[t, j, 1]])
}

/// Mean Euclidean point distance over all frames and points.
pub fn ade(gt: ArrayView3<f64>, pred: ArrayView3<f64>) -> Result<f64> {
    check_pair(&gt, &pred)?;
    let (t, n, _) = gt.dim();
    let mut sum = 0.0;
    for f in 0..t {
        for j in 0..n {
            sum += dist(gt, pred, f, j);
        }
    }
    Ok(sum / (t * n) as f64)
}

/// Mean Euclidean point distance at the last frame.
pub fn fde(gt: ArrayView3<f64>, pred: ArrayView3<f64>) -> Result<f64> {
    check_pair(&gt, &pred)?;
    let (t, n, _) = gt.dim();
    Ok((0..n).map(|j| dist(gt, pred, t - 1, j)).sum::<f64>() / n as f64)
}

/// `1 - mean |v_{t+1} - v_t|` over the `T - 2` velocity changes and all
/// points, clamped to `[0, 1]`. Expects normalized coordinates.
pub fn smoothness(traj: ArrayView3<f64>) -> Result<f64> {
    let (t, n, c) = traj.dim();
    if c != 2 || n == 0 {
        return Err(Error::invalid(format!("expected a [T, N, 2] tensor, got {:?}", traj.dim())));
    }
    if t < 3 {
        return Err(Error::invalid(format!("smoothness needs at least 3 frames, got {t}")));
    }
    let mut sum = 0.0;
    for f in 0..t - 2 {
        for j in 0..n {
            let ax = traj[[f + 2, j, 0]] - 2.0 * traj[[f + 1, j, 0]] + traj[[f, j, 0]];
            let ay = traj[[f + 2, j, 1]] - 2.0 * traj[[f + 1, j, 1]] + traj[[f, j, 1]];
            sum += ax.hypot(ay);
        }
    }
    Ok((1.0 - sum / ((t - 2) * n) as f64).clamp(0.0, 1.0))
}

/// Point-set mean of the last frame minus that of the first, `(dx, dy)`.
pub fn centroid_shift(traj: ArrayView3<f64>) -> (f64, f64) {
    let t = traj.dim().0;
    let first = traj.index_axis(Axis(0), 0).mean_axis(Axis(0)).expect("non-empty");
    let last = traj.index_axis(Axis(0), t - 1).mean_axis(Axis(0)).expect("non-empty");
    (last[0] - first[0], last[1] - first[1])
}
