//! Ablation studies: train one model per configuration variant on the same
//! data and compare generation quality on the same held-out items.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::evalkit::{evaluate_generation, retrieval_recall, Units};
use crate::io::{DecodeMode, ReconNorm, RunConfig};
use crate::training::{prepare_items, train_items, TrainOptions};
use crate::traj::TrajectorySequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Study {
    /// Full objective against single loss terms switched off.
    Loss,
    /// L1 against L2 reconstruction.
    Recon,
    /// Autoregressive against direct decoding.
    Decoding,
}

impl Study {
    pub const ALL: [Study; 3] = [Study::Loss, Study::Recon, Study::Decoding];

    pub fn name(self) -> &'static str {
        match self {
            Study::Loss => "loss",
            Study::Recon => "recon",
            Study::Decoding => "decoding",
        }
    }

    /// Named configurations; the first is the reference.
    pub fn variants(self, base: &RunConfig) -> Vec<(String, RunConfig)> {
        let with = |name: &str, f: &dyn Fn(&mut RunConfig)| {
            let mut c = base.clone();
            f(&mut c);
            (name.to_string(), c)
        };
        match self {
            Study::Loss => vec![
                with("full", &|_| {}),
                with("no_text_recon", &|c| c.enable_text_recon = false),
                with("no_vel", &|c| c.enable_vel = false),
                with("no_range", &|c| c.enable_range = false),
                with("no_text", &|c| c.enable_text = false),
                with("no_image", &|c| c.enable_image = false),
            ],
            Study::Recon => vec![
                with("l1", &|c| c.recon_norm = ReconNorm::L1),
                with("l2", &|c| c.recon_norm = ReconNorm::L2),
            ],
            Study::Decoding => vec![
                with("autoregressive", &|c| c.decode_mode = DecodeMode::Autoregressive),
                with("direct", &|c| c.decode_mode = DecodeMode::Direct),
            ],
        }
    }
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Study::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown study `{s}` (expected loss, recon or decoding)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub ade_px: f64,
    pub fde_px: f64,
    pub smoothness: f64,
    pub clip_sim: f64,
    pub recall_at_1: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub study: Study,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Whether the reference configuration (first row) has ADE no worse
    /// than every other variant.
    pub fn reference_not_worse(&self) -> bool {
        match self.rows.split_first() {
            Some((reference, rest)) => rest.iter().all(|r| reference.ade_px <= r.ade_px),
            None => false,
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("### {} study\n\n", self.study.name());
        out.push_str("| variant | ADE (px) | FDE (px) | smoothness | clip sim | R@1 | final loss |\n");
        out.push_str("|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {:.3} | {:.3} | {:.4} | {:.4} | {:.1} | {:.5} |",
                r.variant, r.ade_px, r.fde_px, r.smoothness, r.clip_sim, r.recall_at_1, r.final_loss
            );
        }
        let _ = writeln!(
            out,
            "\nreference `{}` not worse than ablations on ADE: {}",
            self.rows.first().map(|r| r.variant.as_str()).unwrap_or("-"),
            if self.reference_not_worse() { "yes" } else { "no" }
        );
        out
    }
}

/// Trains every variant of `study` on `train` and scores it on `test`.
pub fn run_study(
    study: Study,
    base: &RunConfig,
    train: &[TrajectorySequence],
    test: &[TrajectorySequence],
    provider: &dyn EmbeddingProvider,
) -> Result<AblationTable> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid("ablation needs non-empty train and test sets"));
    }
    // Variants differ only in objective and decoder, so inputs are shared.
    let items = prepare_items(train, base, provider)?;
    let mut rows = Vec::new();
    for (name, cfg) in study.variants(base) {
        log::info!("{} study: training `{name}`", study.name());
        let out = train_items(&items, &cfg, TrainOptions::default())?;
        let model = &out.checkpoint.model;
        let report = evaluate_generation(model, provider, test, cfg.decode_mode, Units::Pixels)?;
        let recall = retrieval_recall(model, provider, test, &[1], None)?;
        rows.push(AblationRow {
            variant: name,
            ade_px: report.aggregates.ade.mean,
            fde_px: report.aggregates.fde.mean,
            smoothness: report.aggregates.smoothness.mean,
            clip_sim: report.aggregates.clip_sim.mean,
            recall_at_1: recall.get(1).unwrap_or(0.0),
            final_loss: out.history.last().map(|h| h.losses.total).unwrap_or(f64::NAN),
        });
    }
    Ok(AblationTable { study, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_differ_in_one_switch() {
        let base = RunConfig::default();
        let loss = Study::Loss.variants(&base);
        assert_eq!(loss[0].1, base);
        assert!(!loss[1].1.enable_text_recon);
        assert_eq!(Study::Recon.variants(&base)[1].1.recon_norm, ReconNorm::L2);
        assert_eq!(Study::Decoding.variants(&base)[1].1.decode_mode, DecodeMode::Direct);
        assert_eq!("recon".parse::<Study>().unwrap(), Study::Recon);
        assert!("nope".parse::<Study>().is_err());
    }

    #[test]
    fn reference_comparison() {
        let row = |v: &str, ade: f64| AblationRow {
            variant: v.into(),
            ade_px: ade,
            fde_px: 0.0,
            smoothness: 1.0,
            clip_sim: 0.0,
            recall_at_1: 0.0,
            final_loss: 0.0,
        };
        let t = AblationTable { study: Study::Recon, rows: vec![row("l1", 1.0), row("l2", 2.0)] };
        assert!(t.reference_not_worse());
        assert!(t.to_markdown().contains("| l2 | 2.000 |"));
        let t2 = AblationTable { study: Study::Recon, rows: vec![row("l1", 3.0), row("l2", 2.0)] };
        assert!(!t2.reference_not_worse());
    }
}
