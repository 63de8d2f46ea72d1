//! Run configuration, read from a TOML key-value file.
//!
//! Every key is optional; an empty file yields the reference setup
//! (6x6 grid, 30 frames, 512-d latent, 4x4-head encoder, AdamW at 1e-4,
//! batch 32, 200 epochs, and the standard loss weights).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::overlay::OverlayStyle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReconNorm {
    #[default]
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Autoregressive,
    Direct,
}

impl std::str::FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ar" | "autoregressive" => Ok(DecodeMode::Autoregressive),
            "direct" => Ok(DecodeMode::Direct),
            _ => Err(Error::invalid(format!("unknown decode mode `{s}`"))),
        }
    }
}

/// Which loss terms contribute to the total objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossToggles {
    pub recon: bool,
    pub vel: bool,
    pub range: bool,
    pub text: bool,
    pub image: bool,
    pub text_recon: bool,
}

impl LossToggles {
    pub const ALL: LossToggles =
        LossToggles { recon: true, vel: true, range: true, text: true, image: true, text_recon: true };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub num_frames: usize,
    pub latent_dim: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub feedforward_dim: usize,
    pub decoder_hidden: usize,
    pub recon_norm: ReconNorm,
    pub decode_mode: DecodeMode,

    pub lambda_vel: f64,
    pub lambda_range: f64,
    pub lambda_text: f64,
    pub lambda_image: f64,
    pub lambda_text_recon: f64,
    pub enable_recon: bool,
    pub enable_vel: bool,
    pub enable_range: bool,
    pub enable_text: bool,
    pub enable_image: bool,
    pub enable_text_recon: bool,

    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip_norm: f64,
    /// Probability of withholding overlay features from the encoder for a
    /// training item, so the trajectory-only path stays in distribution.
    pub overlay_dropout: f64,
    /// Write a checkpoint every this many epochs (0: final only).
    pub checkpoint_every: usize,

    pub overlay_color: [u8; 3],
    pub overlay_opacity: f64,
    pub overlay_point_radius: u32,
    pub overlay_line_width: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid_rows: 6,
            grid_cols: 6,
            num_frames: 30,
            latent_dim: 512,
            encoder_layers: 4,
            encoder_heads: 4,
            feedforward_dim: 1024,
            decoder_hidden: 1024,
            recon_norm: ReconNorm::L1,
            decode_mode: DecodeMode::Autoregressive,
            lambda_vel: 0.01,
            lambda_range: 0.1,
            lambda_text: 0.1,
            lambda_image: 0.1,
            lambda_text_recon: 0.5,
            enable_recon: true,
            enable_vel: true,
            enable_range: true,
            enable_text: true,
            enable_image: true,
            enable_text_recon: true,
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 200,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            grad_clip_norm: 1.0,
            overlay_dropout: 0.5,
            checkpoint_every: 0,
            overlay_color: [0, 255, 255],
            overlay_opacity: 0.5,
            overlay_point_radius: 2,
            overlay_line_width: 1,
        }
    }
}

impl RunConfig {
    pub fn num_points(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn toggles(&self) -> LossToggles {
        LossToggles {
            recon: self.enable_recon,
            vel: self.enable_vel,
            range: self.enable_range,
            text: self.enable_text,
            image: self.enable_image,
            text_recon: self.enable_text_recon,
        }
    }

    pub fn set_toggles(&mut self, t: LossToggles) {
        self.enable_recon = t.recon;
        self.enable_vel = t.vel;
        self.enable_range = t.range;
        self.enable_text = t.text;
        self.enable_image = t.image;
        self.enable_text_recon = t.text_recon;
    }

    pub fn overlay_style(&self) -> OverlayStyle {
        OverlayStyle {
            color: self.overlay_color,
            opacity: self.overlay_opacity,
            point_radius_px: self.overlay_point_radius,
            line_width_px: self.overlay_line_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return bad("grid_rows and grid_cols must be at least 1".into());
        }
        if self.num_frames < 2 {
            return bad(format!("num_frames must be at least 2, got {}", self.num_frames));
        }
        if self.latent_dim < 2 {
            return bad("latent_dim must be at least 2".into());
        }
        if self.encoder_heads == 0 || self.latent_dim % self.encoder_heads != 0 {
            return bad(format!(
                "encoder_heads {} must divide latent_dim {}",
                self.encoder_heads, self.latent_dim
            ));
        }
        if self.feedforward_dim == 0 || self.decoder_hidden == 0 {
            return bad("feedforward_dim and decoder_hidden must be positive".into());
        }
        for (name, v) in [
            ("lambda_vel", self.lambda_vel),
            ("lambda_range", self.lambda_range),
            ("lambda_text", self.lambda_text),
            ("lambda_image", self.lambda_image),
            ("lambda_text_recon", self.lambda_text_recon),
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
            ("grad_clip_norm", self.grad_clip_norm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.overlay_dropout) {
            return bad("overlay_dropout must lie in [0, 1]".into());
        }
        self.overlay_style().validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_reference_defaults() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.lambda_vel, 0.01);
        assert_eq!(c.lambda_range, 0.1);
        assert_eq!(c.lambda_text, 0.1);
        assert_eq!(c.lambda_image, 0.1);
        assert_eq!(c.lambda_text_recon, 0.5);
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.epochs, 200);
        assert_eq!((c.latent_dim, c.encoder_layers, c.encoder_heads, c.feedforward_dim), (512, 4, 4, 1024));
        assert_eq!(c.num_points(), 36);
    }

    #[test]
    fn keys_override_defaults() {
        let c = RunConfig::from_toml_str("recon_norm = \"l2\"\ndecode_mode = \"direct\"\nepochs = 3\n").unwrap();
        assert_eq!(c.recon_norm, ReconNorm::L2);
        assert_eq!(c.decode_mode, DecodeMode::Direct);
        assert_eq!(c.epochs, 3);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml_str("lambda_text = -0.1").is_err());
        assert!(RunConfig::from_toml_str("encoder_heads = 3").is_err());
        assert!(RunConfig::from_toml_str("no_such_key = 1").is_err());
        assert!(RunConfig::from_toml_str("overlay_opacity = 0.0").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.seed = 9;
        c.enable_image = false;
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }
}
