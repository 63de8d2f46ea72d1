//! Training loop: teacher-forced reconstruction plus caption-decoded
//! reconstruction, cosine alignment to text and pooled overlay embeddings,
//! AdamW updates.
//!
//! Each epoch draws its item order, caption choice and overlay dropout from
//! a ChaCha stream keyed by `(seed, epoch)`, so training can resume at any
//! epoch boundary and replay exactly. Per-item gradients are computed in
//! parallel and reduced in batch order.

mod optim;

pub use optim::{clip_global_norm, AdamState, AdamW};

use std::io::Write;
use std::path::PathBuf;

use ndarray::{Array2, Array3, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamGrads};
use crate::embedding::{pool_image_embeddings, EmbeddingProvider, LatentVector};
use crate::error::{Error, Result};
use crate::io::{ReconNorm, RunConfig};
use crate::losses::{self, loss_total, LossBreakdown, LossComponents, LossWeights};
use crate::model::{encode_graph, overlay_rows, reconstruct_graph, save_checkpoint, Checkpoint, Model, ModelConfig};
use crate::overlay::{render_sequence, Backgrounds};
use crate::real::Real;
use crate::traj::{normalize, TrajectorySequence};

/// One corpus item with everything the objective needs precomputed.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub id: String,
    /// Normalized trajectory, `[T, 2N]`.
    pub traj: Array2<f32>,
    pub captions: Vec<String>,
    pub caption_embs: Vec<LatentVector>,
    /// Per-frame overlay embeddings, `[T, d]`.
    pub overlay: Array2<f32>,
    pub pooled_image: LatentVector,
}

/// Renders overlays on white, embeds captions and frames. Items are
/// processed in parallel; output order follows the corpus.
pub fn prepare_items(
    corpus: &[TrajectorySequence],
    cfg: &RunConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<TrainItem>> {
    if provider.dim() != cfg.latent_dim {
        return Err(Error::shape(format!(
            "provider dim {} differs from latent_dim {}",
            provider.dim(),
            cfg.latent_dim
        )));
    }
    let style = cfg.overlay_style();
    style.validate()?;
    corpus
        .par_iter()
        .map(|seq| {
            if seq.num_frames() != cfg.num_frames || seq.num_points() != cfg.num_points() {
                return Err(Error::shape(format!(
                    "sequence `{}` is {}x{} (frames x points), configuration expects {}x{}",
                    seq.id,
                    seq.num_frames(),
                    seq.num_points(),
                    cfg.num_frames,
                    cfg.num_points()
                )));
            }
            let traj = normalize(seq)?.to_rows().mapv(|v| v as f32);
            let caption_embs = seq.captions.iter().map(|c| provider.embed_text(c)).collect::<Result<Vec<_>>>()?;
            let frames = render_sequence(seq, Backgrounds::Solid([255, 255, 255]), &style)?;
            let feats = frames.iter().map(|f| provider.embed_image(f)).collect::<Result<Vec<_>>>()?;
            let overlay = overlay_rows::<f32>(&feats, seq.num_frames(), cfg.latent_dim)?;
            let pooled_image = pool_image_embeddings(&feats)?;
            Ok(TrainItem {
                id: seq.id.clone(),
                traj,
                captions: seq.captions.clone(),
                caption_embs,
                overlay,
                pooled_image,
            })
        })
        .collect()
}

/// Inputs of the per-item objective in the working precision.
#[derive(Debug, Clone)]
pub struct ItemInputs<F> {
    /// `[T, 2N]`
    pub traj: Array2<F>,
    /// `[T, d]`, or `None` for the trajectory-only encoder path.
    pub overlay: Option<Array2<F>>,
    /// `[1, d]`
    pub text: Array2<F>,
    /// `[1, d]`
    pub image: Array2<F>,
}

fn latent_row<F: Real>(v: &LatentVector) -> Array2<F> {
    Array2::from_shape_fn((1, v.dim()), |(_, i)| F::lit(f64::from(v.as_slice()[i])))
}

impl<F: Real> ItemInputs<F> {
    pub fn from_item(item: &TrainItem, caption: usize, use_overlay: bool) -> Self {
        Self {
            traj: item.traj.mapv(|v| F::lit(f64::from(v))),
            overlay: use_overlay.then(|| item.overlay.mapv(|v| F::lit(f64::from(v)))),
            text: latent_row(&item.caption_embs[caption]),
            image: latent_row(&item.pooled_image),
        }
    }
}

fn as_points<F: Real>(rows: ArrayView2<F>) -> Array3<F> {
    let (t, w) = rows.dim();
    Array3::from_shape_fn((t, w / 2, 2), |(f, j, c)| rows[[f, 2 * j + c]])
}

fn as_rows<F: Real>(points: Array3<F>) -> Array2<F> {
    let (t, n, _) = points.dim();
    points.into_shape_with_order((t, 2 * n)).expect("contiguous")
}

/// Forward and backward pass of the full objective for one item. Returns
/// the unweighted components, the weighted total and parameter gradients.
pub fn objective<F: Real>(
    model: &Model<F>,
    inputs: &ItemInputs<F>,
    recon_norm: ReconNorm,
    weights: &LossWeights,
) -> Result<(LossComponents, F, ParamGrads<F>)> {
    let cfg = model.config();
    let mut g = Graph::new(model.params());
    let x = g.input(inputs.traj.clone());
    let o = inputs.overlay.clone().map(|o| g.input(o));
    let z = encode_graph(&mut g, cfg, x, o)?;
    let rec = reconstruct_graph(&mut g, cfg, z, x);
    let te = g.input(inputs.text.clone());
    let trec = reconstruct_graph(&mut g, cfg, te, x);

    let gt = as_points(inputs.traj.view());
    let rec_pts = as_points(g.value(rec));
    let trec_pts = as_points(g.value(trec));

    let (v_recon, d_recon) = losses::loss_recon_grad(gt.view(), rec_pts.view(), recon_norm)?;
    let (v_vel, d_vel) = losses::loss_vel_grad(gt.view(), rec_pts.view())?;
    let (v_range, d_range) = losses::loss_range_grad(gt.view(), rec_pts.view())?;
    let zrow = g.value(z).row(0).to_owned();
    let (v_text, d_text) = losses::loss_cosine_grad(zrow.view(), inputs.text.row(0))?;
    let (v_image, d_image) = losses::loss_cosine_grad(zrow.view(), inputs.image.row(0))?;
    let (v_trec, d_trec) = losses::loss_text_recon_grad(gt.view(), trec_pts.view())?;

    let d = zrow.len();
    let terms = [
        (weights.recon, rec, v_recon, as_rows(d_recon)),
        (weights.vel, rec, v_vel, as_rows(d_vel)),
        (weights.range, rec, v_range, as_rows(d_range)),
        (weights.text, z, v_text, d_text.into_shape_with_order((1, d)).expect("row")),
        (weights.image, z, v_image, d_image.into_shape_with_order((1, d)).expect("row")),
        (weights.text_recon, trec, v_trec, as_rows(d_trec)),
    ];
    let mut weighted = Vec::new();
    for (w, input, value, grad) in terms {
        if w > 0.0 {
            let s = g.scalar_fn(input, value, grad);
            weighted.push((s, F::lit(w)));
        }
    }
    let total = g.weighted_sum(&weighted);
    let grads = g.backward(total);
    let comps = LossComponents {
        recon: v_recon.as_f64(),
        vel: v_vel.as_f64(),
        range: v_range.as_f64(),
        text: v_text.as_f64(),
        image: v_image.as_f64(),
        text_recon: v_trec.as_f64(),
    };
    Ok((comps, g.scalar(total), grads))
}

/// One batch entry: the item, which caption to align with, and whether
/// the encoder sees overlay features.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub item: &'a TrainItem,
    pub caption: usize,
    pub use_overlay: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    #[serde(flatten)]
    pub losses: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model<f32>,
    pub optimizer: AdamState,
    /// Updates applied so far.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<StepRecord>,
}

impl TrainState {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let mcfg = ModelConfig::from_run(cfg)?;
        let model = Model::init(&mcfg, cfg.seed)?;
        let optimizer = AdamState::zeros_like(model.params());
        Ok(Self { model, optimizer, step: 0, epoch: 0, history: Vec::new() })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Self {
        let optimizer = ckpt.optimizer.unwrap_or_else(|| AdamState::zeros_like(ckpt.model.params()));
        Self { model: ckpt.model, optimizer, step: ckpt.step, epoch: ckpt.epoch, history: Vec::new() }
    }

    pub fn to_checkpoint(&self, cfg: &RunConfig) -> Checkpoint {
        Checkpoint {
            config: cfg.clone(),
            model: self.model.clone(),
            step: self.step,
            epoch: self.epoch,
            optimizer: Some(self.optimizer.clone()),
        }
    }
}

fn check_finite(b: &LossBreakdown, step: u64) -> Result<()> {
    for (term, v) in b.terms() {
        if !v.is_finite() {
            return Err(Error::NonFinite { term, step });
        }
    }
    Ok(())
}

/// One AdamW update on the batch mean of the objective.
pub fn train_step(state: &mut TrainState, batch: &[BatchItem<'_>], cfg: &RunConfig) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let weights = LossWeights::from_config(cfg)?;
    let model = &state.model;
    let results = batch
        .par_iter()
        .map(|b| {
            let inputs = ItemInputs::<f32>::from_item(b.item, b.caption, b.use_overlay);
            objective(model, &inputs, cfg.recon_norm, &weights).map_err(|e| match e {
                Error::InvalidInput(msg) => Error::invalid(format!("item `{}`: {msg}", b.item.id)),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let inv = 1.0 / batch.len() as f64;
    let mut mean = LossComponents::default();
    let mut grads: ParamGrads<f32> = vec![None; model.params().len()];
    for (c, _, g) in results {
        mean.recon += c.recon * inv;
        mean.vel += c.vel * inv;
        mean.range += c.range * inv;
        mean.text += c.text * inv;
        mean.image += c.image * inv;
        mean.text_recon += c.text_recon * inv;
        for (slot, gi) in grads.iter_mut().zip(g) {
            if let Some(gi) = gi {
                match slot {
                    Some(acc) => *acc += &gi,
                    None => *slot = Some(gi),
                }
            }
        }
    }
    let breakdown = loss_total(&mean, cfg)?;
    check_finite(&breakdown, state.step)?;

    let scale = inv as f32;
    for g in grads.iter_mut().flatten() {
        g.mapv_inplace(|v| v * scale);
    }
    clip_global_norm(&mut grads, cfg.grad_clip_norm);
    let opt = AdamW {
        lr: cfg.learning_rate,
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
        weight_decay: cfg.weight_decay,
    };
    opt.step(state.model.params_mut(), &grads, &mut state.optimizer);
    state.step += 1;
    state.history.push(StepRecord { step: state.step, epoch: state.epoch, losses: breakdown });
    Ok(breakdown)
}

/// Item order and per-item draws for one epoch.
pub fn epoch_plan(items: &[TrainItem], cfg: &RunConfig, epoch: usize) -> Vec<(usize, usize, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng);
    order
        .into_iter()
        .map(|i| {
            let caption = rng.random_range(0..items[i].caption_embs.len());
            let use_overlay = rng.random::<f64>() >= cfg.overlay_dropout;
            (i, caption, use_overlay)
        })
        .collect()
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Where to write `epoch-NNNN.l2mc` and `final.l2mc`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Receives one JSON line per step.
    pub log: Option<&'a mut dyn Write>,
    /// Continue from this checkpoint instead of a fresh initialization.
    pub resume: Option<Checkpoint>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<StepRecord>,
}

pub fn train(corpus: &[TrajectorySequence], cfg: &RunConfig, provider: &dyn EmbeddingProvider) -> Result<Checkpoint> {
    train_with(corpus, cfg, provider, TrainOptions::default()).map(|o| o.checkpoint)
}

pub fn train_with(
    corpus: &[TrajectorySequence],
    cfg: &RunConfig,
    provider: &dyn EmbeddingProvider,
    opts: TrainOptions<'_>,
) -> Result<TrainOutcome> {
    if corpus.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    let items = prepare_items(corpus, cfg, provider)?;
    train_items(&items, cfg, opts)
}

/// Training on already prepared items.
pub fn train_items(items: &[TrainItem], cfg: &RunConfig, mut opts: TrainOptions<'_>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    let mut state = match opts.resume.take() {
        Some(ckpt) => {
            let want = ModelConfig::from_run(cfg)?;
            if *ckpt.model.config() != want {
                return Err(Error::shape("resume checkpoint architecture differs from configuration"));
            }
            TrainState::from_checkpoint(ckpt)
        }
        None => TrainState::new(cfg)?,
    };
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    while state.epoch < cfg.epochs {
        let plan = epoch_plan(items, cfg, state.epoch);
        for chunk in plan.chunks(cfg.batch_size) {
            let batch: Vec<BatchItem> = chunk
                .iter()
                .map(|&(i, caption, use_overlay)| BatchItem { item: &items[i], caption, use_overlay })
                .collect();
            let losses = train_step(&mut state, &batch, cfg)?;
            if let Some(log) = opts.log.as_mut() {
                let rec = state.history.last().expect("step recorded");
                let line = serde_json::to_string(rec).map_err(|e| Error::Format(e.to_string()))?;
                writeln!(log, "{line}").map_err(|e| Error::io("<log>", e))?;
            }
            log::debug!("step {} total {:.6}", state.step, losses.total);
        }
        state.epoch += 1;
        if let Some(last) = state.history.last() {
            log::info!("epoch {}/{} total {:.6}", state.epoch, cfg.epochs, last.losses.total);
        }
        if let Some(dir) = &opts.checkpoint_dir {
            if cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0 && state.epoch < cfg.epochs {
                save_checkpoint(&state.to_checkpoint(cfg), dir.join(format!("epoch-{:04}.l2mc", state.epoch)))?;
            }
        }
    }
    let checkpoint = state.to_checkpoint(cfg);
    if let Some(dir) = &opts.checkpoint_dir {
        save_checkpoint(&checkpoint, dir.join("final.l2mc"))?;
    }
    Ok(TrainOutcome { checkpoint, history: state.history })
}
