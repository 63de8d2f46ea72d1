use ndarray::{Array2, Zip};

use crate::autodiff::ParamGrads;
use crate::model::ParamSet;

/// AdamW moment estimates, one slot per parameter tensor. `steps` counts
/// the updates each tensor has actually received.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub steps: Vec<u64>,
    pub m: Vec<Array2<f32>>,
    pub v: Vec<Array2<f32>>,
}

impl AdamState {
    pub fn zeros_like(params: &ParamSet<f32>) -> Self {
        let zeros: Vec<Array2<f32>> = (0..params.len()).map(|i| Array2::zeros(params.tensor(i).raw_dim())).collect();
        Self { steps: vec![0; params.len()], m: zeros.clone(), v: zeros }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    /// Applies one update. Tensors without a gradient are left untouched,
    /// weight decay included.
    pub fn step(&self, params: &mut ParamSet<f32>, grads: &ParamGrads<f32>, state: &mut AdamState) {
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let (lr, eps, wd) = (self.lr as f32, self.eps as f32, self.weight_decay as f32);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            state.steps[i] += 1;
            let t = state.steps[i] as i32;
            let c1 = 1.0 - b1.powi(t);
            let c2 = 1.0 - b2.powi(t);
            Zip::from(params.tensor_mut(i))
                .and(&mut state.m[i])
                .and(&mut state.v[i])
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / c1;
                    let vhat = *v / c2;
                    *p -= lr * (mhat / (vhat.sqrt() + eps) + wd * *p);
                });
        }
    }
}

/// Scales gradients so their global L2 norm is at most `max_norm`
/// (0 disables). Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ParamGrads<f32>, max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = (max_norm / norm) as f32;
        for g in grads.iter_mut().flatten() {
            g.mapv_inplace(|v| v * s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f32) -> Array2<f32> {
        Array2::from_elem((1, 1), v)
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = ParamSet::new();
        p.push("w", one(1.0));
        let mut st = AdamState::zeros_like(&p);
        let opt = AdamW { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 };
        opt.step(&mut p, &vec![Some(one(3.0))], &mut st);
        // Bias-corrected first step is lr * sign(g).
        assert!((p.tensor(0)[[0, 0]] - 0.9).abs() < 1e-6);
        assert_eq!(st.steps, vec![1]);
    }

    #[test]
    fn missing_gradient_skips_decay() {
        let mut p = ParamSet::new();
        p.push("w", one(2.0));
        let mut st = AdamState::zeros_like(&p);
        let opt = AdamW { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.5 };
        opt.step(&mut p, &vec![None], &mut st);
        assert_eq!(p.tensor(0)[[0, 0]], 2.0);
        assert_eq!(st.steps, vec![0]);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = ParamSet::new();
        p.push("w", one(2.0));
        let mut st = AdamState::zeros_like(&p);
        let opt = AdamW { lr: 0.0, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 };
        opt.step(&mut p, &vec![Some(one(-1.0))], &mut st);
        assert_eq!(p.tensor(0)[[0, 0]], 2.0);
    }

    #[test]
    fn clipping() {
        let mut g = vec![Some(one(3.0)), None, Some(one(4.0))];
        let n = clip_global_norm(&mut g, 1.0);
        assert!((n - 5.0).abs() < 1e-12);
        assert!((g[0].as_ref().unwrap()[[0, 0]] - 0.6).abs() < 1e-6);
        assert!((g[2].as_ref().unwrap()[[0, 0]] - 0.8).abs() < 1e-6);
        let mut small = vec![Some(one(0.1))];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].as_ref().unwrap()[[0, 0]], 0.1);
    }
}
