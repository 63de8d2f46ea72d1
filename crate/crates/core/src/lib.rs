//! Language-guided 2D point-trajectory auto-encoder.
//!
//! A transformer encoder maps point trajectories into a frozen joint
//! text/image embedding space; a displacement decoder turns latents (from
//! trajectories or from text) back into trajectories. See the README for
//! file formats and the command-line tool.

pub mod ablation;
pub mod autodiff;
pub mod embedding;
pub mod error;
pub mod evalkit;
pub mod inference;
pub mod io;
pub mod losses;
pub mod model;
pub mod overlay;
pub mod real;
pub mod training;
pub mod traj;

pub use embedding::{cosine_similarity, EmbeddingProvider, LatentVector};
pub use error::{Error, Result};
pub use io::{DecodeMode, ReconNorm, RunConfig};
pub use model::{Checkpoint, Model, ModelConfig};
pub use traj::{GridSpec, NormalizedTrajectory, TrajectorySequence};
