//! Checkpoint container.
//!
//! ```text
//! "L2MC" | u32 LE version | u64 LE manifest length | manifest JSON | tensor data
//! ```
//!
//! The manifest records the run configuration, counters and one entry per
//! tensor (`name`, `shape`, byte `offset` into the data section, element
//! count `len`). Tensor data is row-major little-endian `f32`. Optimizer
//! moments, when present, are stored as `adam.m.<param>` / `adam.v.<param>`.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ParamSet};
use crate::error::{Error, Result};
use crate::io::RunConfig;
use crate::training::AdamState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"L2MC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: Model<f32>,
    /// Optimizer updates applied so far.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn seed(&self) -> u64 {
        self.config.seed
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    step: u64,
    epoch: usize,
    seed: u64,
    config: RunConfig,
    adam_steps: Option<Vec<u64>>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    offset: u64,
    len: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.model.params();
        let mut named: Vec<(String, &Array2<f32>)> = params.iter().map(|(n, t)| (n.to_string(), t)).collect();
        if let Some(opt) = &self.optimizer {
            for (i, name) in params.names().iter().enumerate() {
                named.push((format!("adam.m.{name}"), &opt.m[i]));
            }
            for (i, name) in params.names().iter().enumerate() {
                named.push((format!("adam.v.{name}"), &opt.v[i]));
            }
        }
        let mut tensors = Vec::with_capacity(named.len());
        let mut offset = 0u64;
        for (name, t) in &named {
            let len = t.len() as u64;
            tensors.push(TensorEntry { name: name.clone(), shape: [t.nrows(), t.ncols()], offset, len });
            offset += 4 * len;
        }
        let manifest = Manifest {
            step: self.step,
            epoch: self.epoch,
            seed: self.config.seed,
            config: self.config.clone(),
            adam_steps: self.optimizer.as_ref().map(|o| o.steps.clone()),
            tensors,
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &named {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(fmt(&format!("unsupported version {version}")));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if mlen > body.len() {
            return Err(fmt("truncated manifest"));
        }
        let manifest: Manifest =
            serde_json::from_slice(&body[..mlen]).map_err(|e| fmt(&format!("manifest: {e}")))?;
        let data = &body[mlen..];

        let mut expected_offset = 0u64;
        let mut tensors: Vec<(String, Array2<f32>)> = Vec::with_capacity(manifest.tensors.len());
        for entry in &manifest.tensors {
            let [r, c] = entry.shape;
            if entry.len != (r * c) as u64 || entry.offset != expected_offset {
                return Err(fmt(&format!("inconsistent entry for `{}`", entry.name)));
            }
            let start = entry.offset as usize;
            let end = start + 4 * entry.len as usize;
            if end > data.len() {
                return Err(fmt(&format!("tensor `{}` runs past end of file", entry.name)));
            }
            let values: Vec<f32> = data[start..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            let arr = Array2::from_shape_vec((r, c), values).expect("length checked");
            tensors.push((entry.name.clone(), arr));
            expected_offset = end as u64;
        }
        if expected_offset as usize != data.len() {
            return Err(fmt("trailing bytes after tensor data"));
        }

        manifest.config.validate()?;
        let mcfg = ModelConfig::from_run(&manifest.config)?;
        let n_params = mcfg.param_shapes().len();
        let with_opt = manifest.adam_steps.is_some();
        let expected_count = if with_opt { 3 * n_params } else { n_params };
        if tensors.len() != expected_count {
            return Err(Error::shape(format!(
                "checkpoint holds {} tensors, configuration implies {expected_count}",
                tensors.len()
            )));
        }
        let mut rest = tensors.into_iter();
        let mut params = ParamSet::new();
        for (name, t) in rest.by_ref().take(n_params) {
            params.push(name, t);
        }
        let model = Model::from_params(&mcfg, params)?;
        let optimizer = match manifest.adam_steps {
            None => None,
            Some(steps) => {
                if steps.len() != n_params {
                    return Err(fmt("optimizer step count list has the wrong length"));
                }
                let mut m = Vec::with_capacity(n_params);
                let mut v = Vec::with_capacity(n_params);
                for (i, (name, t)) in rest.enumerate() {
                    let (kind, pid) = if i < n_params { ("m", i) } else { ("v", i - n_params) };
                    let pname = model.params().name(pid);
                    let ptensor = model.params().tensor(pid);
                    if name != format!("adam.{kind}.{pname}") || t.dim() != ptensor.dim() {
                        return Err(Error::shape(format!("optimizer tensor `{name}` does not match `{pname}`")));
                    }
                    if kind == "m" {
                        m.push(t);
                    } else {
                        v.push(t);
                    }
                }
                Some(AdamState { steps, m, v })
            }
        };
        Ok(Checkpoint { config: manifest.config, model, step: manifest.step, epoch: manifest.epoch, optimizer })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = ckpt.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// Loads a checkpoint and requires its architecture to match `expected`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &RunConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    let want = ModelConfig::from_run(expected)?;
    if *ckpt.model.config() != want {
        return Err(Error::shape(format!(
            "checkpoint architecture {:?} does not match configuration {:?}",
            ckpt.model.config(),
            want
        )));
    }
    Ok(ckpt)
}
