//! Kernel database and hierarchical retrieval: logic similarity, then a hard
//! dsl/backend filter, then shape similarity.

mod db;
mod embed;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use db::{DbRecord, KernelDb, PerfRecord, ScanFilter, StorageError};
pub use embed::{cosine, normalize, tokens, EmbeddingProvider, HashEmbedder, DEFAULT_DIMENSION};

use crate::agents::{ChatMessage, ChatProvider, ChatRequest, ProviderError};
use crate::task::OperatorSpec;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("task has no name or reference to extract features from")]
    EmptyTask,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("feature extraction failed: {source}")]
    Provider { source: ProviderError, transcript: Vec<ChatMessage> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// Stage-one cosine threshold on logic embeddings.
    pub tau_sim: f64,
    pub k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> RetrievalConfig {
        RetrievalConfig { tau_sim: 0.3, k: 2 }
    }
}

const FEATURE_PROMPT: &str = "Summarize the tensor operator below as one line of key=value pairs covering \
op_type, computation logic, dtype and rank. Reply with the line only.";

/// Feature summary of a task: from the provider when given, otherwise read
/// straight off the manifest.
pub fn extract_features(q: &OperatorSpec, provider: Option<&dyn ChatProvider>) -> Result<String, RetrievalError> {
    if q.name.trim().is_empty() && q.reference.trim().is_empty() {
        return Err(RetrievalError::EmptyTask);
    }
    let Some(p) = provider else { return Ok(q.features()) };
    let messages = vec![
        ChatMessage::system(FEATURE_PROMPT),
        ChatMessage::user(format!("{}\n\nreference sketch:\n{}", q.features(), q.reference)),
    ];
    let req = ChatRequest { model: p.model_id().to_string(), messages, temperature: 0.0, max_tokens: 256, seed: None };
    p.complete(&req).map_err(|source| RetrievalError::Provider { source, transcript: req.messages.clone() })
}

/// A retrieved record with the two similarity scores that ranked it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub record: DbRecord,
    pub logic_score: f64,
    pub shape_score: f64,
}

/// Intermediate sets of the three stages, as (id, score) lists.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stages {
    /// Records whose logic similarity exceeds the threshold, in db order.
    pub similar: Vec<(String, f64)>,
    /// `similar` restricted to the requested dsl and backend.
    pub filtered: Vec<(String, f64)>,
    /// Top-k of `filtered` by shape similarity, ties by id.
    pub ranked: Vec<(String, f64)>,
}

/// Runs the three stages with precomputed query vectors.
pub fn retrieve_vectors(
    logic: &[f64],
    shape: &[f64],
    records: &[DbRecord],
    backend: &str,
    dsl: &str,
    k: usize,
    tau_sim: f64,
) -> (Vec<Retrieved>, Stages) {
    let mut stages = Stages::default();
    let mut kept = Vec::new();
    for r in records {
        let s = cosine(logic, &r.logic_embedding);
        if s > tau_sim {
            stages.similar.push((r.id.clone(), s));
            if r.dsl == dsl && r.backend == backend {
                stages.filtered.push((r.id.clone(), s));
                kept.push(Retrieved { record: r.clone(), logic_score: s, shape_score: cosine(shape, &r.shape_embedding) });
            }
        }
    }
    kept.sort_by(|a, b| b.shape_score.total_cmp(&a.shape_score).then_with(|| a.record.id.cmp(&b.record.id)));
    kept.truncate(k);
    stages.ranked = kept.iter().map(|r| (r.record.id.clone(), r.shape_score)).collect();
    (kept, stages)
}

/// Top-`k` records for `q` that target `dsl` on `backend`.
#[allow(clippy::too_many_arguments)]
pub fn retrieve(
    q: &OperatorSpec,
    db: &KernelDb,
    backend: &str,
    dsl: &str,
    cfg: &RetrievalConfig,
    embedder: &dyn EmbeddingProvider,
    provider: Option<&dyn ChatProvider>,
) -> Result<Vec<Retrieved>, RetrievalError> {
    if cfg.k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    let features = extract_features(q, provider)?;
    let logic = embedder.embed(&features);
    let shape = embedder.embed(&q.shape_text());
    let records = db.scan(&ScanFilter::default());
    Ok(retrieve_vectors(&logic, &shape, &records, backend, dsl, cfg.k, cfg.tau_sim).0)
}

/// Builds a database record for a verified kernel of `task`.
pub fn make_record(
    task: &OperatorSpec,
    embedder: &dyn EmbeddingProvider,
    dsl: &str,
    backend: &str,
    code: &str,
    sketch: &str,
    perf: Option<PerfRecord>,
) -> DbRecord {
    let features = task.features();
    let shape_info = task.shape_text();
    let mut r = DbRecord {
        id: String::new(),
        logic_embedding: embedder.embed(&features),
        shape_embedding: embedder.embed(&shape_info),
        features,
        dsl: dsl.to_string(),
        backend: backend.to_string(),
        op_type: task.category.as_str().to_string(),
        shape_info,
        code: code.to_string(),
        sketch: sketch.to_string(),
        perf,
        analysis: String::new(),
    };
    r.id = r.content_id();
    r
}

#[cfg(test)]
mod tests;
