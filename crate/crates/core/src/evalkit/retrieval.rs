use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_similarity, EmbeddingProvider, LatentVector};
use crate::error::{Error, Result};
use crate::inference::encode_sequence;
use crate::model::Model;
use crate::overlay::OverlayStyle;
use crate::traj::TrajectorySequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallEntry {
    pub k: usize,
    /// Percentage in `[0, 100]`.
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallTable {
    pub queries: usize,
    pub gallery: usize,
    pub entries: Vec<RecallEntry>,
}

impl RecallTable {
    pub fn get(&self, k: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.k == k).map(|e| e.recall)
    }
}

/// 1-based rank of the best-placed relevant item when `scores` are sorted
/// descending, ties broken by lower index. `None` if nothing is relevant.
pub fn first_relevant_rank(scores: &[f64], relevant: impl Fn(usize) -> bool) -> Option<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    order.iter().position(|&i| relevant(i)).map(|p| p + 1)
}

/// Recall@K from one score row per query. `relevant(q, i)` says whether
/// gallery item `i` answers query `q`.
pub fn recall_at_k(scores: &[Vec<f64>], relevant: impl Fn(usize, usize) -> bool, ks: &[usize]) -> Result<RecallTable> {
    if scores.is_empty() {
        return Err(Error::invalid("no retrieval queries"));
    }
    let gallery = scores[0].len();
    if gallery == 0 || scores.iter().any(|row| row.len() != gallery) {
        return Err(Error::invalid("score rows must be non-empty and of equal length"));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::invalid("K values must be positive"));
    }
    let ranks: Vec<Option<usize>> =
        scores.iter().enumerate().map(|(q, row)| first_relevant_rank(row, |i| relevant(q, i))).collect();
    let entries = ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count();
            RecallEntry { k, recall: 100.0 * hits as f64 / scores.len() as f64 }
        })
        .collect();
    Ok(RecallTable { queries: scores.len(), gallery, entries })
}

/// Text-to-trajectory retrieval over `corpus`. Every `(sequence, caption)`
/// pair is a query ranked against all sequence latents. A sequence counts
/// as a correct answer when its caption list contains the query text, so
/// with unique captions only the query's own sequence is relevant.
pub fn retrieval_recall(
    model: &Model<f32>,
    provider: &dyn EmbeddingProvider,
    corpus: &[TrajectorySequence],
    ks: &[usize],
    overlay: Option<&OverlayStyle>,
) -> Result<RecallTable> {
    if corpus.is_empty() {
        return Err(Error::invalid("retrieval corpus is empty"));
    }
    let latents = corpus
        .iter()
        .map(|s| encode_sequence(model, s, overlay.map(|st| (provider, st))))
        .collect::<Result<Vec<_>>>()?;
    retrieval_from_latents(&latents, provider, corpus, ks)
}

pub fn retrieval_from_latents(
    latents: &[LatentVector],
    provider: &dyn EmbeddingProvider,
    corpus: &[TrajectorySequence],
    ks: &[usize],
) -> Result<RecallTable> {
    let mut queries: Vec<&str> = Vec::new();
    for seq in corpus {
        if seq.captions.is_empty() {
            return Err(Error::Validation { id: seq.id.clone(), reason: "no captions".into() });
        }
        queries.extend(seq.captions.iter().map(String::as_str));
    }
    let scores = queries
        .iter()
        .map(|q| {
            let e = provider.embed_text(q)?;
            latents.iter().map(|z| cosine_similarity(&e, z)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    recall_at_k(&scores, |q, i| corpus[i].captions.iter().any(|c| c == queries[q]), ks)
}
