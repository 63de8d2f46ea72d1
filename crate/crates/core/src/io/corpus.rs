//! Line-delimited JSON corpus: one self-contained sequence record per line.
//!
//! Keys are written in a fixed order and every coordinate with six
//! decimals, so a given corpus always serializes to the same bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::traj::TrajectorySequence;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    width_px: u32,
    height_px: u32,
    num_points: usize,
    num_frames: usize,
    grid_rows: usize,
    grid_cols: usize,
    points_px: Vec<Vec<[f64; 2]>>,
    #[serde(default)]
    visibility: Option<Vec<Vec<bool>>>,
    captions: Vec<String>,
    #[serde(default)]
    mask_bbox_px: Option<[f64; 4]>,
}

impl Record {
    fn into_sequence(self) -> Result<(TrajectorySequence, usize)> {
        let fail = |reason: String| Error::Validation { id: self.id.clone(), reason };
        if self.num_points != self.grid_rows * self.grid_cols {
            return Err(fail(format!(
                "num_points {} != grid_rows {} * grid_cols {}",
                self.num_points, self.grid_rows, self.grid_cols
            )));
        }
        if self.points_px.len() != self.num_frames {
            return Err(fail(format!(
                "num_frames {} but {} frames present",
                self.num_frames,
                self.points_px.len()
            )));
        }
        if let Some(t) = self.points_px.iter().position(|f| f.len() != self.num_points) {
            return Err(fail(format!("frame {t} does not have {} points", self.num_points)));
        }
        let flat: Vec<f64> = self.points_px.iter().flatten().flatten().copied().collect();
        let points_px = Array3::from_shape_vec((self.num_frames, self.num_points, 2), flat)
            .map_err(|e| fail(e.to_string()))?;
        let visibility = match self.visibility {
            None => None,
            Some(v) => {
                if v.len() != self.num_frames || v.iter().any(|f| f.len() != self.num_points) {
                    return Err(fail("visibility must be [num_frames][num_points]".into()));
                }
                let flat: Vec<bool> = v.into_iter().flatten().collect();
                Some(Array2::from_shape_vec((self.num_frames, self.num_points), flat).expect("checked shape"))
            }
        };
        let mut seq = TrajectorySequence {
            id: self.id,
            width_px: self.width_px,
            height_px: self.height_px,
            points_px,
            visibility,
            captions: self.captions,
            grid_rows: self.grid_rows,
            grid_cols: self.grid_cols,
            mask_bbox_px: self.mask_bbox_px,
        };
        let clamped = seq.clamp_to_frame();
        seq.validate()?;
        Ok((seq, clamped))
    }
}

/// Parses corpus text. Blank lines are skipped.
pub fn read_corpus_str(text: &str) -> Result<Vec<TrajectorySequence>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(line).map_err(|e| Error::Parse { line: i + 1, reason: e.to_string() })?;
        let (seq, clamped) = record.into_sequence()?;
        if clamped > 0 {
            log::warn!("sequence `{}`: clamped {clamped} out-of-frame coordinates", seq.id);
        }
        out.push(seq);
    }
    Ok(out)
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<TrajectorySequence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_corpus_str(&text)
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization is infallible")
}

fn write_record(out: &mut String, seq: &TrajectorySequence) {
    let (t, n) = (seq.num_frames(), seq.num_points());
    write!(
        out,
        "{{\"id\":{},\"width_px\":{},\"height_px\":{},\"num_points\":{n},\"num_frames\":{t},\"grid_rows\":{},\"grid_cols\":{},\"points_px\":[",
        json_str(&seq.id),
        seq.width_px,
        seq.height_px,
        seq.grid_rows,
        seq.grid_cols
    )
    .unwrap();
    for f in 0..t {
        out.push_str(if f == 0 { "[" } else { ",[" });
        for j in 0..n {
            if j > 0 {
                out.push(',');
            }
            write!(out, "[{:.6},{:.6}]", seq.points_px[[f, j, 0]], seq.points_px[[f, j, 1]]).unwrap();
        }
        out.push(']');
    }
    out.push(']');
    if let Some(vis) = &seq.visibility {
        out.push_str(",\"visibility\":[");
        for (f, row) in vis.rows().into_iter().enumerate() {
            if f > 0 {
                out.push(',');
            }
            let cells: Vec<&str> = row.iter().map(|&v| if v { "true" } else { "false" }).collect();
            write!(out, "[{}]", cells.join(",")).unwrap();
        }
        out.push(']');
    }
    let caps: Vec<String> = seq.captions.iter().map(|c| json_str(c)).collect();
    write!(out, ",\"captions\":[{}]", caps.join(",")).unwrap();
    if let Some([x0, y0, x1, y1]) = seq.mask_bbox_px {
        write!(out, ",\"mask_bbox_px\":[{x0:.6},{y0:.6},{x1:.6},{y1:.6}]").unwrap();
    }
    out.push_str("}\n");
}

/// Serializes a corpus after validating every record.
pub fn write_corpus_string(seqs: &[TrajectorySequence]) -> Result<String> {
    let mut out = String::new();
    for seq in seqs {
        seq.validate()?;
        write_record(&mut out, seq);
    }
    Ok(out)
}

pub fn write_corpus(seqs: &[TrajectorySequence], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = write_corpus_string(seqs)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
