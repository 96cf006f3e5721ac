use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::history::{digest, report_digest, AgentRole, ExecutionHistory, HistoryEntry};
use super::{route_with, NextAgent};
use crate::agents::{code, design, AgentError, ChatProvider, CodeRequest, DesignRequest, Inspiration, Sampling};
use crate::knowledge::{assemble_context, compress_api_docs, labels, ContextInputs, DocSet, PromptSection, Stage};
use crate::retrieval::{make_record, retrieve, EmbeddingProvider, KernelDb, PerfRecord, RetrievalConfig, Retrieved};
use crate::sketch::{print_sketch, Sketch};
use crate::task::OperatorSpec;
use crate::verify::{verify_kernel, BackendAdapter, Dsl, KernelCandidate, VerifyConfig, VerifyReport, VerifyStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Verification attempts before giving up.
    pub max_iterations: u32,
    pub dsl: Dsl,
    pub work_dir: PathBuf,
    pub verify: VerifyConfig,
    pub retrieval: RetrievalConfig,
    pub use_retrieval: bool,
    /// Let the provider choose API documents for the Coder.
    pub llm_compression: bool,
    /// Let the provider classify runtime failures and write suggestions.
    pub llm_conductor: bool,
    /// Let the provider write the retrieval feature text.
    pub llm_features: bool,
    pub sampling: Sampling,
    /// Prepended to candidate ids and the artifact directory.
    pub candidate_prefix: String,
    /// Passed to the first Designer call.
    pub inspiration: Option<Inspiration>,
    /// Store passing kernels in the database.
    pub store_results: bool,
}

impl Default for PipelineConfig {
    fn default() -> PipelineConfig {
        let verify = VerifyConfig::default();
        PipelineConfig {
            max_iterations: 6,
            dsl: Dsl::C,
            work_dir: verify.work_dir.clone(),
            verify,
            retrieval: RetrievalConfig::default(),
            use_retrieval: true,
            llm_compression: false,
            llm_conductor: false,
            llm_features: false,
            sampling: Sampling::default(),
            candidate_prefix: String::new(),
            inspiration: None,
            store_results: true,
        }
    }
}

/// Shared collaborators of a pipeline run.
#[derive(Clone, Copy)]
pub struct PipelineContext<'a> {
    pub provider: &'a dyn ChatProvider,
    pub backend: &'a dyn BackendAdapter,
    pub docset: &'a DocSet,
    pub db: Option<&'a KernelDb>,
    pub embedder: &'a dyn EmbeddingProvider,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub task: String,
    pub status: VerifyStatus,
    pub iterations: u32,
    pub speedup: Option<f64>,
    pub candidate: String,
    /// Digest of the final report; equals the last history entry's output.
    pub report_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub candidate: KernelCandidate,
    pub report: VerifyReport,
    pub sketch_text: String,
    pub history: ExecutionHistory,
    pub iterations: u32,
    pub db_id: Option<String>,
    pub artifacts: PathBuf,
}

impl PipelineResult {
    pub fn summary(&self, task: &str) -> RunSummary {
        RunSummary {
            task: task.into(),
            status: self.report.status,
            iterations: self.iterations,
            speedup: self.report.speedup(),
            candidate: self.candidate.id.clone(),
            report_digest: report_digest(&self.report),
        }
    }
}

/// Best failing attempt kept when iterations run out.
#[derive(Debug, Clone, PartialEq)]
pub struct BestAttempt {
    pub candidate: KernelCandidate,
    pub report: VerifyReport,
    pub sketch_text: String,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no passing kernel after {iterations} iterations")]
    ExhaustedIterations { iterations: u32, best: Option<Box<BestAttempt>>, history: ExecutionHistory },
    #[error("agent call failed: {source}")]
    Agent { source: AgentError, history: ExecutionHistory },
    #[error("writing artifacts: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    pub fn history(&self) -> Option<&ExecutionHistory> {
        match self {
            PipelineError::ExhaustedIterations { history, .. } | PipelineError::Agent { history, .. } => Some(history),
            PipelineError::Io(_) => None,
        }
    }
}

fn entry(iteration: u32, agent: AgentRole, input: &str, output: &str) -> HistoryEntry {
    HistoryEntry {
        seq: 0,
        iteration,
        agent,
        inputs_digest: digest(input),
        outputs_digest: digest(output),
        report: None,
        class: None,
        decision: None,
        escalated: false,
        suggestion: String::new(),
    }
}

fn write(dir: &Path, name: &str, body: &str) -> std::io::Result<()> {
    std::fs::write(dir.join(name), body)
}

/// Lower is better: passing kernels by latency, then failures by status
/// and violation fraction.
fn rank(r: &VerifyReport) -> (u8, f64) {
    match r.status {
        VerifyStatus::Pass => (0, r.mean_gen_us().unwrap_or(f64::MAX)),
        VerifyStatus::NumericFail => (1, r.violation_fraction),
        VerifyStatus::RuntimeFail | VerifyStatus::Timeout => (2, 0.0),
        VerifyStatus::CompileFail => (3, 0.0),
    }
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Runs Designer, Coder and Verifier in a loop, routing each failure back to
/// the agent that owns it, until a kernel passes or the iteration budget is
/// spent. Artifacts land in `work_dir/<task>/pipeline`.
pub fn run_pipeline(task: &OperatorSpec, cfg: &PipelineConfig, ctx: &PipelineContext<'_>) -> Result<PipelineResult, PipelineError> {
    let name = sanitize(&task.name);
    let artifacts = cfg.work_dir.join(&name).join(format!("{}pipeline", cfg.candidate_prefix));
    std::fs::create_dir_all(&artifacts)?;
    let mut verify_cfg = cfg.verify.clone();
    verify_cfg.work_dir = cfg.work_dir.clone();
    let provider = ctx.provider;
    let conductor = cfg.llm_conductor.then_some(provider);

    let retrieved: Vec<Retrieved> = match (cfg.use_retrieval, ctx.db) {
        (true, Some(db)) => {
            let fp = cfg.llm_features.then_some(provider);
            retrieve(task, db, ctx.backend.id(), cfg.dsl.as_str(), &cfg.retrieval, ctx.embedder, fp).unwrap_or_default()
        }
        _ => Vec::new(),
    };
    let expert_notes: Vec<PromptSection> = {
        let inp = ContextInputs::new(task, ctx.docset, Stage::Conductor);
        assemble_context(&inp).into_iter().filter(|s| s.label == labels::EXPERT).collect()
    };

    let mut history = ExecutionHistory::new();
    let mut next = NextAgent::Designer;
    let mut feedback: Option<String> = None;
    let mut sketch: Option<(Sketch, String)> = None;
    let mut previous_source: Option<String> = None;
    let mut error_log: Option<String> = None;
    let mut suggestion: Option<String> = None;
    let mut best: Option<BestAttempt> = None;
    let mut inspiration = cfg.inspiration.clone();

    for iteration in 1..=cfg.max_iterations {
        let sampling = Sampling { seed: cfg.sampling.seed.map(|s| s.wrapping_add(u64::from(iteration))), ..cfg.sampling };
        if next == NextAgent::Designer || sketch.is_none() {
            let mut inp = ContextInputs::new(task, ctx.docset, Stage::Designer);
            inp.retrieved = &retrieved;
            inp.feedback = feedback.as_deref();
            let req = DesignRequest { task: task.clone(), context: assemble_context(&inp), inspiration: inspiration.take(), sampling };
            let input = crate::knowledge::render_sections(&req.context);
            match design(&req, provider) {
                Ok(d) => {
                    let text = print_sketch(&d.sketch).unwrap_or_else(|_| d.sketch_text.clone());
                    write(&artifacts, &format!("i{iteration}_design.usk"), &text)?;
                    history.push(entry(iteration, AgentRole::Designer, &input, &text));
                    sketch = Some((d.sketch, text));
                    previous_source = None;
                    error_log = None;
                    suggestion = None;
                }
                Err(AgentError::MalformedOutput { message, .. }) => {
                    let mut e = entry(iteration, AgentRole::Designer, &input, "");
                    e.suggestion = format!("designer output rejected: {message}");
                    history.push(e);
                    feedback = Some(format!("The previous sketch was rejected by the parser:\n{message}"));
                    continue;
                }
                Err(source) => return Err(PipelineError::Agent { source, history }),
            }
        }
        let (sk, sketch_text) = sketch.clone().expect("sketch set above");

        let mut inp = ContextInputs::new(task, ctx.docset, Stage::Coder);
        inp.sketch = Some(&sk);
        inp.retrieved = &retrieved;
        let chosen;
        if cfg.llm_compression {
            chosen = compress_api_docs(&ctx.docset.api, &task.features(), &sk, Some(provider), inp.api_budget).unwrap_or_default();
            inp.api = Some(&chosen);
        }
        let req = CodeRequest {
            sketch: sk.clone(),
            dsl: cfg.dsl,
            context: assemble_context(&inp),
            previous_source: previous_source.clone(),
            error_log: error_log.clone(),
            suggestion: suggestion.clone(),
            sampling,
        };
        let input = crate::agents::code_prompt(&req).iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n");
        let cand_id = format!("{}{}-i{iteration}", cfg.candidate_prefix, task.name);
        let (source, report) = match code(&req, provider) {
            Ok(c) => {
                write(&artifacts, &format!("i{iteration}_code.{}", cfg.dsl.fence()), &c.source)?;
                history.push(entry(iteration, AgentRole::Coder, &input, &c.source));
                let mut cand = KernelCandidate::new(&cand_id, cfg.dsl, ctx.backend.id(), c.source.clone());
                cand.sketch = Some(sketch_text.clone());
                let r = verify_kernel(&cand, task, ctx.backend, &verify_cfg);
                (c.source, r)
            }
            Err(AgentError::MalformedOutput { message, .. }) => {
                history.push(entry(iteration, AgentRole::Coder, &input, ""));
                (String::new(), VerifyReport::failure(VerifyStatus::CompileFail, format!("coder output rejected: {message}")))
            }
            Err(source) => return Err(PipelineError::Agent { source, history }),
        };

        let routing = route_with(&report, &history, conductor, &expert_notes);
        let mut v = entry(iteration, AgentRole::Verifier, &source, "");
        v.outputs_digest = report_digest(&report);
        v.report = Some(report.clone());
        v.class = routing.class;
        v.decision = Some(routing.next);
        v.escalated = routing.escalated;
        v.suggestion = routing.suggestion.clone();
        history.push(v);

        let mut cand = KernelCandidate::new(&cand_id, cfg.dsl, ctx.backend.id(), source.clone());
        cand.sketch = Some(sketch_text.clone());
        cand.status = Some(report.status);
        cand.latency_us = report.latency_gen_us.clone();

        if routing.next == NextAgent::Finish {
            let db_id = match (cfg.store_results, ctx.db) {
                (true, Some(db)) => {
                    let perf = report.mean_gen_us().map(|l| PerfRecord { latency_us: l, baseline_us: report.mean_base_us() });
                    let rec = make_record(task, ctx.embedder, cfg.dsl.as_str(), ctx.backend.id(), &source, &sketch_text, perf);
                    db.insert(rec).ok()
                }
                _ => None,
            };
            let result = PipelineResult { candidate: cand, report, sketch_text, history, iterations: iteration, db_id, artifacts };
            persist(&result.artifacts, &result.history, &serde_json::to_string_pretty(&result.summary(&task.name)).expect("summary serializes"))?;
            return Ok(result);
        }

        if best.as_ref().is_none_or(|b| rank(&report) < rank(&b.report)) {
            best = Some(BestAttempt { candidate: cand, report: report.clone(), sketch_text: sketch_text.clone() });
        }
        match routing.next {
            NextAgent::Coder => {
                previous_source = (!source.is_empty()).then_some(source);
                error_log = Some(report.diagnostics.clone());
                suggestion = Some(routing.suggestion);
            }
            _ => {
                feedback = Some(routing.suggestion);
                next = NextAgent::Designer;
                continue;
            }
        }
        next = NextAgent::Coder;
    }

    let summary = serde_json::json!({
        "task": task.name,
        "status": "exhausted",
        "iterations": cfg.max_iterations,
        "best": best.as_ref().map(|b| b.report.status),
    });
    persist(&artifacts, &history, &serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    Err(PipelineError::ExhaustedIterations { iterations: cfg.max_iterations, best: best.map(Box::new), history })
}

fn persist(dir: &Path, history: &ExecutionHistory, summary: &str) -> std::io::Result<()> {
    write(dir, "history.json", &serde_json::to_string_pretty(history).expect("history serializes"))?;
    write(dir, "summary.json", summary)
}
