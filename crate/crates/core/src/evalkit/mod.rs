//! Motion-quality metrics, text-to-trajectory retrieval and evaluation
//! reports.

mod metrics;
mod retrieval;

pub use metrics::{ade, centroid_shift, fde, smoothness};
pub use retrieval::{first_relevant_rank, recall_at_k, retrieval_from_latents, retrieval_recall, RecallEntry, RecallTable};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_similarity, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::inference::{encode_sequence, generate};
use crate::io::DecodeMode;
use crate::model::Model;
use crate::traj::{normalize, GridSpec, TrajectorySequence};

/// `cos(encode(seq), embed_text(caption))` on the trajectory-only path.
pub fn clip_sim(model: &Model<f32>, provider: &dyn EmbeddingProvider, seq: &TrajectorySequence, caption: &str) -> Result<f64> {
    let z = encode_sequence(model, seq, None)?;
    cosine_similarity(&z, &provider.embed_text(caption)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    #[default]
    Pixels,
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub ade: f64,
    pub fde: f64,
    pub smoothness: f64,
    pub clip_sim: f64,
    /// ADE of a grid that never moves, for reference.
    pub static_ade: f64,
    pub gen_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Mean and population standard deviation.
    pub fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count();
        if n == 0 {
            return Self::default();
        }
        let mean = values.clone().sum::<f64>() / n as f64;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Aggregates {
    pub ade: Summary,
    pub fde: Summary,
    pub smoothness: Summary,
    pub clip_sim: Summary,
    pub static_ade: Summary,
    pub gen_seconds: Summary,
}

impl Aggregates {
    pub fn from_rows(rows: &[EvalRow]) -> Self {
        Self {
            ade: Summary::of(rows.iter().map(|r| r.ade)),
            fde: Summary::of(rows.iter().map(|r| r.fde)),
            smoothness: Summary::of(rows.iter().map(|r| r.smoothness)),
            clip_sim: Summary::of(rows.iter().map(|r| r.clip_sim)),
            static_ade: Summary::of(rows.iter().map(|r| r.static_ade)),
            gen_seconds: Summary::of(rows.iter().map(|r| r.gen_seconds)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: DecodeMode,
    pub units: Units,
    pub rows: Vec<EvalRow>,
    pub aggregates: Aggregates,
    pub retrieval: Option<RecallTable>,
    pub runtime_seconds: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Per-sequence rows as comma-separated values with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,ade,fde,smoothness,clip_sim,static_ade,gen_seconds\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.id, r.ade, r.fde, r.smoothness, r.clip_sim, r.static_ade, r.gen_seconds
            );
        }
        out
    }

    /// Writes `<stem>.json` and `<stem>.csv`.
    pub fn write(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        let json = stem.with_extension("json");
        let csv = stem.with_extension("csv");
        fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }
}

/// Frame-0 bounding box of the ground truth, widened to at least one pixel
/// per axis so a collapsed point set still defines a grid.
pub fn initial_grid_of(seq: &TrajectorySequence) -> GridSpec {
    let [mut x0, mut y0, mut x1, mut y1] = seq.frame_bbox(0);
    let (w, h) = (f64::from(seq.width_px), f64::from(seq.height_px));
    if x1 - x0 < 1.0 {
        let c = ((x0 + x1) / 2.0).clamp(0.5, w - 0.5);
        (x0, x1) = (c - 0.5, c + 0.5);
    }
    if y1 - y0 < 1.0 {
        let c = ((y0 + y1) / 2.0).clamp(0.5, h - 0.5);
        (y0, y1) = (c - 0.5, c + 0.5);
    }
    GridSpec { rows: seq.grid_rows, cols: seq.grid_cols, bbox_px: [x0, y0, x1, y1] }
}

fn to_units(seq: &TrajectorySequence, units: Units) -> Result<Array3<f64>> {
    match units {
        Units::Pixels => Ok(seq.points_px.clone()),
        Units::Normalized => Ok(normalize(seq)?.points),
    }
}

/// Evaluates one already generated sequence against its ground truth.
pub fn score_generated(
    model: &Model<f32>,
    provider: &dyn EmbeddingProvider,
    gt: &TrajectorySequence,
    generated: &TrajectorySequence,
    units: Units,
    gen_seconds: f64,
) -> Result<EvalRow> {
    let caption = gt.captions.first().ok_or_else(|| Error::invalid(format!("`{}` has no caption", gt.id)))?;
    let g = to_units(gt, units)?;
    let p = to_units(generated, units)?;
    let frozen = p.index_axis(Axis(0), 0).insert_axis(Axis(0)).broadcast(p.dim()).expect("same shape").to_owned();
    Ok(EvalRow {
        id: gt.id.clone(),
        ade: ade(g.view(), p.view())?,
        fde: fde(g.view(), p.view())?,
        smoothness: smoothness(normalize(generated)?.points.view())?,
        clip_sim: clip_sim(model, provider, generated, caption)?,
        static_ade: ade(g.view(), frozen.view())?,
        gen_seconds,
    })
}

/// Generates each test item from its first caption and frame-0 grid and
/// scores it against the ground truth.
pub fn evaluate_generation(
    model: &Model<f32>,
    provider: &dyn EmbeddingProvider,
    test: &[TrajectorySequence],
    mode: DecodeMode,
    units: Units,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::invalid("evaluation corpus is empty"));
    }
    let start = Instant::now();
    let mut rows = Vec::with_capacity(test.len());
    for seq in test {
        let caption = seq.captions.first().ok_or_else(|| Error::invalid(format!("`{}` has no caption", seq.id)))?;
        let grid = initial_grid_of(seq);
        let t0 = Instant::now();
        let cond = provider.embed_text(caption)?;
        let mut generated = generate(model, &cond, &grid, seq.width_px, seq.height_px, mode, Some(caption))?;
        let dt = t0.elapsed().as_secs_f64();
        generated.id = seq.id.clone();
        rows.push(score_generated(model, provider, seq, &generated, units, dt)?);
    }
    Ok(EvalReport {
        mode,
        units,
        aggregates: Aggregates::from_rows(&rows),
        rows,
        retrieval: None,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}
