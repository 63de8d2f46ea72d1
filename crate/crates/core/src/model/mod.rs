//! Transformer trajectory encoder and displacement decoders.
//!
//! The encoder reads a `[T, 2N]` trajectory (one flattened point set per
//! frame), optionally adds projected per-frame overlay features, prepends a
//! learned prefix token and returns that token's output as the trajectory
//! latent. Layers are pre-norm with GELU feed-forward blocks.
//!
//! Two decoders exist, selected by [`DecodeMode`]: an autoregressive MLP
//! (`dec.*`) that maps `[z; p_{t-1}]` to the displacement for frame `t`, and
//! a direct head (`direct.*`) that maps `[z; p_0]` to all displacements at
//! once. A model carries only the head for its mode.

mod checkpoint;
mod params;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use params::ParamSet;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::embedding::LatentVector;
use crate::error::{Error, Result};
use crate::io::{DecodeMode, RunConfig};
use crate::real::Real;
use crate::traj::NormalizedTrajectory;

const LN_EPS: f64 = 1e-5;

/// Architecture hyperparameters. Derived from a [`RunConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub num_frames: usize,
    pub latent_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub decoder_hidden: usize,
    pub decode_mode: DecodeMode,
}

impl ModelConfig {
    pub fn from_run(cfg: &RunConfig) -> Result<Self> {
        let m = Self {
            grid_rows: cfg.grid_rows,
            grid_cols: cfg.grid_cols,
            num_frames: cfg.num_frames,
            latent_dim: cfg.latent_dim,
            layers: cfg.encoder_layers,
            heads: cfg.encoder_heads,
            ff_dim: cfg.feedforward_dim,
            decoder_hidden: cfg.decoder_hidden,
            decode_mode: cfg.decode_mode,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("grid_rows", self.grid_rows),
            ("grid_cols", self.grid_cols),
            ("latent_dim", self.latent_dim),
            ("encoder_heads", self.heads),
            ("feedforward_dim", self.ff_dim),
            ("decoder_hidden", self.decoder_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.num_frames < 2 {
            return Err(Error::invalid("num_frames must be at least 2"));
        }
        if self.latent_dim % self.heads != 0 {
            return Err(Error::invalid(format!(
                "latent_dim {} is not divisible by encoder_heads {}",
                self.latent_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn num_points(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    /// Width of one flattened frame, `2N`.
    pub fn coord_dim(&self) -> usize {
        2 * self.num_points()
    }

    fn head_prefix(&self) -> &'static str {
        match self.decode_mode {
            DecodeMode::Autoregressive => "dec",
            DecodeMode::Direct => "direct",
        }
    }

    /// Every parameter name with its shape, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, [usize; 2])> {
        let (d, c, t) = (self.latent_dim, self.coord_dim(), self.num_frames);
        let mut out: Vec<(String, [usize; 2])> = Vec::new();
        let mut add = |name: String, r: usize, c: usize| out.push((name, [r, c]));
        add("enc.in.w".into(), c, d);
        add("enc.in.b".into(), 1, d);
        add("enc.overlay.w".into(), d, d);
        add("enc.overlay.b".into(), 1, d);
        add("enc.prefix".into(), 1, d);
        add("enc.pos".into(), t + 1, d);
        for l in 0..self.layers {
            let p = format!("enc.l{l}");
            add(format!("{p}.ln1.g"), 1, d);
            add(format!("{p}.ln1.b"), 1, d);
            for m in ["q", "k", "v", "o"] {
                add(format!("{p}.attn.w{m}"), d, d);
                add(format!("{p}.attn.b{m}"), 1, d);
            }
            add(format!("{p}.ln2.g"), 1, d);
            add(format!("{p}.ln2.b"), 1, d);
            add(format!("{p}.ff.w1"), d, self.ff_dim);
            add(format!("{p}.ff.b1"), 1, self.ff_dim);
            add(format!("{p}.ff.w2"), self.ff_dim, d);
            add(format!("{p}.ff.b2"), 1, d);
        }
        add("enc.lnf.g".into(), 1, d);
        add("enc.lnf.b".into(), 1, d);
        let h = self.decoder_hidden;
        let head = self.head_prefix();
        let out_dim = match self.decode_mode {
            DecodeMode::Autoregressive => c,
            DecodeMode::Direct => (t - 1) * c,
        };
        add(format!("{head}.l1.w"), d + c, h);
        add(format!("{head}.l1.b"), 1, h);
        add(format!("{head}.l2.w"), h, h);
        add(format!("{head}.l2.b"), 1, h);
        add(format!("{head}.l3.w"), h, out_dim);
        add(format!("{head}.l3.b"), 1, out_dim);
        out
    }
}

/// Encoder and decoder parameters with their architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<F: Real = f32> {
    config: ModelConfig,
    params: ParamSet<F>,
}

impl<F: Real> Model<F> {
    /// Random initialization: Xavier-normal weights, zero biases, unit
    /// layer-norm gains, small prefix and positional tables. The last
    /// decoder layer starts at a tenth of the usual scale.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let last = format!("{}.l3.w", config.head_prefix());
        for (name, [r, c]) in config.param_shapes() {
            let std = if name.ends_with(".g") {
                params.push(name, Array2::ones((r, c)));
                continue;
            } else if name == "enc.prefix" || name == "enc.pos" {
                0.02
            } else if r == 1 {
                params.push(name, Array2::zeros((r, c)));
                continue;
            } else {
                let xavier = (2.0 / (r + c) as f64).sqrt();
                if name == last {
                    0.1 * xavier
                } else {
                    xavier
                }
            };
            let normal = Normal::new(0.0, std).expect("valid std");
            params.push(name, Array2::from_shape_fn((r, c), |_| F::lit(normal.sample(&mut rng))));
        }
        Ok(Self { config: *config, params })
    }

    /// Wraps existing parameters after checking names and shapes.
    pub fn from_params(config: &ModelConfig, params: ParamSet<F>) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        if expected.len() != params.len() {
            return Err(Error::shape(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (i, (name, shape)) in expected.iter().enumerate() {
            let t = params.tensor(i);
            if params.name(i) != name || [t.nrows(), t.ncols()] != *shape {
                return Err(Error::shape(format!(
                    "parameter {i}: expected `{name}` {shape:?}, found `{}` {:?}",
                    params.name(i),
                    [t.nrows(), t.ncols()]
                )));
            }
        }
        Ok(Self { config: *config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<F> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet<F> {
        self.params
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model { config: self.config, params: self.params.cast() }
    }

    /// Zeroes the decoder's output layer so every predicted displacement is 0.
    pub fn zero_final_layer(&mut self) {
        let head = self.config.head_prefix();
        for suffix in ["l3.w", "l3.b"] {
            if let Some(t) = self.params.get_mut(&format!("{head}.{suffix}")) {
                t.fill(F::zero());
            }
        }
    }

    fn latent_row(&self, z: &LatentVector) -> Result<Array2<F>> {
        if z.dim() != self.config.latent_dim {
            return Err(Error::shape(format!(
                "latent has dim {}, model expects {}",
                z.dim(),
                self.config.latent_dim
            )));
        }
        Ok(Array2::from_shape_fn((1, z.dim()), |(_, i)| F::lit(f64::from(z.as_slice()[i]))))
    }

    fn point_row(&self, points: ArrayView2<f64>) -> Result<Array2<F>> {
        let n = self.config.num_points();
        if points.dim() != (n, 2) {
            return Err(Error::shape(format!("expected a [{n}, 2] point set, got {:?}", points.dim())));
        }
        Ok(Array2::from_shape_fn((1, 2 * n), |(_, k)| F::lit(points[[k / 2, k % 2]])))
    }

    /// Trajectory latent `z_p`. Missing overlay features behave as zeros.
    pub fn encode(&self, traj: &NormalizedTrajectory, overlay: Option<&[LatentVector]>) -> Result<LatentVector> {
        let rows = traj.to_rows().mapv(F::lit);
        let overlay = match overlay {
            None => None,
            Some(feats) => Some(overlay_rows(feats, traj.num_frames(), self.config.latent_dim)?),
        };
        let mut g = Graph::new(&self.params);
        let x = g.input(rows);
        let o = overlay.map(|o| g.input(o));
        let z = encode_graph(&mut g, &self.config, x, o)?;
        latent_from(g.value(z))
    }

    /// One autoregressive step: displacement `[N, 2]` predicted from `prev`.
    pub fn decode_step(&self, z: &LatentVector, prev: ArrayView2<f64>) -> Result<Array2<f64>> {
        if self.config.decode_mode != DecodeMode::Autoregressive {
            return Err(Error::invalid("model has no autoregressive decoder"));
        }
        let zr = self.latent_row(z)?;
        let pr = self.point_row(prev)?;
        let mut g = Graph::new(&self.params);
        let zi = g.input(zr);
        let pi = g.input(pr);
        let inp = g.concat_cols(&[zi, pi]);
        let d = decoder_mlp(&mut g, "dec", inp);
        let n = self.config.num_points();
        let out = g.value(d);
        Ok(Array2::from_shape_fn((n, 2), |(j, c)| out[[0, 2 * j + c]].as_f64()))
    }

    /// Reconstruction with ground-truth previous frames; frame 0 is copied.
    pub fn decode_teacher_forced(&self, z: &LatentVector, gt: &NormalizedTrajectory) -> Result<NormalizedTrajectory> {
        let t = gt.num_frames();
        let mut out = gt.points.clone();
        for f in 1..t {
            let prev = gt.points.index_axis(ndarray::Axis(0), f - 1);
            let d = self.decode_step(z, prev)?;
            let next = &prev + &d;
            out.index_axis_mut(ndarray::Axis(0), f).assign(&next);
        }
        Ok(NormalizedTrajectory { points: out })
    }

    /// Free-running generation of `t` frames starting at `p0`.
    pub fn decode_autoregressive(&self, z: &LatentVector, p0: ArrayView2<f64>, t: usize) -> Result<NormalizedTrajectory> {
        if t < 2 {
            return Err(Error::invalid("need at least two frames"));
        }
        let n = self.config.num_points();
        if p0.dim() != (n, 2) {
            return Err(Error::shape(format!("expected a [{n}, 2] point set, got {:?}", p0.dim())));
        }
        let mut out = ndarray::Array3::zeros((t, n, 2));
        out.index_axis_mut(ndarray::Axis(0), 0).assign(&p0);
        let mut prev = p0.to_owned();
        for f in 1..t {
            let d = self.decode_step(z, prev.view())?;
            prev = &prev + &d;
            out.index_axis_mut(ndarray::Axis(0), f).assign(&prev);
        }
        Ok(NormalizedTrajectory { points: out })
    }

    /// All frames in one pass through the direct head.
    pub fn decode_direct(&self, z: &LatentVector, p0: ArrayView2<f64>, t: usize) -> Result<NormalizedTrajectory> {
        if self.config.decode_mode != DecodeMode::Direct {
            return Err(Error::invalid("model has no direct decoding head"));
        }
        if t < 2 {
            return Err(Error::invalid("need at least two frames"));
        }
        if t != self.config.num_frames {
            return Err(Error::shape(format!(
                "direct head predicts {} frames, {t} requested",
                self.config.num_frames
            )));
        }
        let zr = self.latent_row(z)?;
        let pr = self.point_row(p0)?;
        let mut g = Graph::new(&self.params);
        let zi = g.input(zr);
        let pi = g.input(pr);
        let offsets = direct_offsets_graph(&mut g, &self.config, zi, pi);
        let n = self.config.num_points();
        let v = g.value(offsets);
        let out = ndarray::Array3::from_shape_fn((t, n, 2), |(f, j, c)| {
            if f == 0 {
                p0[[j, c]]
            } else {
                p0[[j, c]] + v[[f - 1, 2 * j + c]].as_f64()
            }
        });
        Ok(NormalizedTrajectory { points: out })
    }

    /// Decodes with the model's own head.
    pub fn decode(&self, z: &LatentVector, p0: ArrayView2<f64>, t: usize) -> Result<NormalizedTrajectory> {
        match self.config.decode_mode {
            DecodeMode::Autoregressive => self.decode_autoregressive(z, p0, t),
            DecodeMode::Direct => self.decode_direct(z, p0, t),
        }
    }
}

pub(crate) fn overlay_rows<F: Real>(feats: &[LatentVector], t: usize, dim: usize) -> Result<Array2<F>> {
    if feats.len() != t {
        return Err(Error::shape(format!("{} overlay features for {t} frames", feats.len())));
    }
    if let Some(bad) = feats.iter().find(|f| f.dim() != dim) {
        return Err(Error::shape(format!("overlay feature has dim {}, expected {dim}", bad.dim())));
    }
    Ok(Array2::from_shape_fn((t, dim), |(f, i)| F::lit(f64::from(feats[f].as_slice()[i]))))
}

fn latent_from<F: Real>(row: ArrayView2<F>) -> Result<LatentVector> {
    LatentVector::new(row.iter().map(|v| v.as_f64() as f32).collect())
}

/// Encoder forward. `traj` is `[T, 2N]`, `overlay` is `[T, d]`; returns `[1, d]`.
pub(crate) fn encode_graph<F: Real>(
    g: &mut Graph<'_, F>,
    cfg: &ModelConfig,
    traj: Var,
    overlay: Option<Var>,
) -> Result<Var> {
    let (t, width) = g.value(traj).dim();
    if t != cfg.num_frames {
        return Err(Error::shape(format!(
            "trajectory has {t} frames, positional table covers {}",
            cfg.num_frames
        )));
    }
    if width != cfg.coord_dim() {
        return Err(Error::shape(format!("frame width {width}, expected {}", cfg.coord_dim())));
    }
    let d = cfg.latent_dim;
    let (w_in, b_in) = (g.param("enc.in.w"), g.param("enc.in.b"));
    let mut tokens = g.linear(traj, w_in, b_in);
    let b_ov = g.param("enc.overlay.b");
    tokens = match overlay {
        Some(o) => {
            let w_ov = g.param("enc.overlay.w");
            let proj = g.linear(o, w_ov, b_ov);
            g.add(tokens, proj)
        }
        None => g.add_row(tokens, b_ov),
    };
    let prefix = g.param("enc.prefix");
    let seq = g.concat_rows(&[prefix, tokens]);
    let pos = g.param("enc.pos");
    let mut x = g.add(seq, pos);

    let eps = F::lit(LN_EPS);
    let dh = d / cfg.heads;
    let att_scale = F::lit(1.0 / (dh as f64).sqrt());
    for l in 0..cfg.layers {
        let p = format!("enc.l{l}");
        let (g1, b1) = (g.param(&format!("{p}.ln1.g")), g.param(&format!("{p}.ln1.b")));
        let h = g.layer_norm(x, g1, b1, eps);
        let q = named_linear(g, h, &format!("{p}.attn.wq"), &format!("{p}.attn.bq"));
        let k = named_linear(g, h, &format!("{p}.attn.wk"), &format!("{p}.attn.bk"));
        let v = named_linear(g, h, &format!("{p}.attn.wv"), &format!("{p}.attn.bv"));
        let mut heads = Vec::with_capacity(cfg.heads);
        for hd in 0..cfg.heads {
            let qh = g.slice_cols(q, hd * dh, dh);
            let kh = g.slice_cols(k, hd * dh, dh);
            let vh = g.slice_cols(v, hd * dh, dh);
            let scores = g.matmul_nt(qh, kh);
            let scores = g.scale(scores, att_scale);
            let attn = g.softmax_rows(scores);
            heads.push(g.matmul(attn, vh));
        }
        let cat = g.concat_cols(&heads);
        let att_out = named_linear(g, cat, &format!("{p}.attn.wo"), &format!("{p}.attn.bo"));
        x = g.add(x, att_out);

        let (g2, b2) = (g.param(&format!("{p}.ln2.g")), g.param(&format!("{p}.ln2.b")));
        let h2 = g.layer_norm(x, g2, b2, eps);
        let f = named_linear(g, h2, &format!("{p}.ff.w1"), &format!("{p}.ff.b1"));
        let f = g.gelu(f);
        let f = named_linear(g, f, &format!("{p}.ff.w2"), &format!("{p}.ff.b2"));
        x = g.add(x, f);
    }
    let (gf, bf) = (g.param("enc.lnf.g"), g.param("enc.lnf.b"));
    let x = g.layer_norm(x, gf, bf, eps);
    Ok(g.slice_rows(x, 0, 1))
}

fn named_linear<F: Real>(g: &mut Graph<'_, F>, x: Var, w: &str, b: &str) -> Var {
    let (w, b) = (g.param(w), g.param(b));
    g.linear(x, w, b)
}

fn decoder_mlp<F: Real>(g: &mut Graph<'_, F>, head: &str, x: Var) -> Var {
    let mut h = x;
    for (i, layer) in ["l1", "l2", "l3"].iter().enumerate() {
        h = named_linear(g, h, &format!("{head}.{layer}.w"), &format!("{head}.{layer}.b"));
        if i < 2 {
            h = g.relu(h);
        }
    }
    h
}

/// Teacher-forced reconstruction of `[T, 2N]` ground truth from `z` `[1, d]`.
/// Row 0 of the result is the ground-truth first frame.
pub(crate) fn teacher_forced_graph<F: Real>(g: &mut Graph<'_, F>, z: Var, gt: Var) -> Var {
    let t = g.value(gt).nrows();
    let first = g.slice_rows(gt, 0, 1);
    let prev = g.slice_rows(gt, 0, t - 1);
    let zr = g.repeat_rows(z, t - 1);
    let inp = g.concat_cols(&[zr, prev]);
    let delta = decoder_mlp(g, "dec", inp);
    let next = g.add(prev, delta);
    g.concat_rows(&[first, next])
}

/// Cumulative offsets from `p0` for frames `1..T`, `[T-1, 2N]`.
fn direct_offsets_graph<F: Real>(g: &mut Graph<'_, F>, cfg: &ModelConfig, z: Var, p0: Var) -> Var {
    let inp = g.concat_cols(&[z, p0]);
    let flat = decoder_mlp(g, "direct", inp);
    let steps = g.reshape(flat, cfg.num_frames - 1, cfg.coord_dim());
    g.cumsum_rows(steps)
}

/// Direct-head decoding of all frames from `z` `[1, d]` and `p0` `[1, 2N]`.
pub(crate) fn direct_graph<F: Real>(g: &mut Graph<'_, F>, cfg: &ModelConfig, z: Var, p0: Var) -> Var {
    let t = cfg.num_frames;
    let offsets = direct_offsets_graph(g, cfg, z, p0);
    let anchor = g.repeat_rows(p0, t - 1);
    let next = g.add(anchor, offsets);
    g.concat_rows(&[p0, next])
}

/// Reconstruction graph for the model's decoding mode; `gt` is `[T, 2N]`.
pub(crate) fn reconstruct_graph<F: Real>(g: &mut Graph<'_, F>, cfg: &ModelConfig, z: Var, gt: Var) -> Var {
    match cfg.decode_mode {
        DecodeMode::Autoregressive => teacher_forced_graph(g, z, gt),
        DecodeMode::Direct => {
            let p0 = g.slice_rows(gt, 0, 1);
            direct_graph(g, cfg, z, p0)
        }
    }
}
