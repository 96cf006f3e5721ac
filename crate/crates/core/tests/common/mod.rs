#![allow(dead_code)]

use std::path::{Path, PathBuf};

use kagent_core::agents::{ChatProvider, Rule, Transcript};
use kagent_core::bench::builtin_task;
use kagent_core::conductor::{run_pipeline, AgentRole, ErrorClass, ExecutionHistory, NextAgent, PipelineConfig, PipelineContext, PipelineError, PipelineResult};
use kagent_core::knowledge::DocSet;
use kagent_core::retrieval::{HashEmbedder, KernelDb};
use kagent_core::verify::{Dsl, InterpBackend};

pub fn usk(body: &str) -> String {
    format!("```usk\n{}\n```", body.trim_end())
}

/// Compiles and runs but writes zeros scaled from X, so every output element
/// is wrong: an algorithm-level failure.
pub const ZERO_WRITER: &str = "sketch add {
  symbols: N;
  tensors: X[N]: f32; Y[N]: f32; Z[N]: f32;
  a = alloc([N])
  load(X[0:N] -> a)
  mul(a, 0, a)
  store(a -> Z[0:N])
}
";

/// A scripted pipeline run and the routing it must produce.
pub struct Scenario {
    pub name: &'static str,
    pub rules: Vec<Rule>,
    pub agents: Vec<AgentRole>,
    pub decisions: Vec<(Option<ErrorClass>, NextAgent, bool)>,
}

pub fn scenarios() -> Vec<Scenario> {
    use AgentRole::*;
    let good = builtin_task("add").unwrap().reference;
    let broken = good.replacen("store(", "store((", 1);
    vec![
        Scenario {
            name: "one_shot",
            rules: vec![Rule::new(&["# Designer"], &[&usk(&good)]), Rule::new(&["# Coder"], &[&usk(&good)])],
            agents: vec![Designer, Coder, Verifier],
            decisions: vec![(None, NextAgent::Finish, false)],
        },
        Scenario {
            name: "coder_fix",
            rules: vec![Rule::new(&["# Designer"], &[&usk(&good)]), Rule::new(&["# Coder"], &[&usk(&broken), &usk(&good)])],
            agents: vec![Designer, Coder, Verifier, Coder, Verifier],
            decisions: vec![(Some(ErrorClass::Syntax), NextAgent::Coder, false), (None, NextAgent::Finish, false)],
        },
        Scenario {
            name: "designer_fix",
            rules: vec![Rule::new(&["# Designer"], &[&usk(ZERO_WRITER), &usk(&good)]), Rule::new(&["# Coder"], &[&usk(ZERO_WRITER), &usk(&good)])],
            agents: vec![Designer, Coder, Verifier, Designer, Coder, Verifier],
            decisions: vec![(Some(ErrorClass::Algorithm), NextAgent::Designer, false), (None, NextAgent::Finish, false)],
        },
    ]
}

pub fn transcript_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/transcripts").join(format!("{name}.json"))
}

pub fn load_transcript(name: &str) -> Transcript {
    Transcript::load(&transcript_path(name)).unwrap()
}

/// Owner of each failure class, written out independently of the library.
pub fn expected_owner(class: ErrorClass) -> NextAgent {
    match class {
        ErrorClass::Syntax | ErrorClass::ApiMisuse | ErrorClass::Runtime => NextAgent::Coder,
        ErrorClass::Algorithm | ErrorClass::MemoryPattern => NextAgent::Designer,
    }
}

pub fn agents(h: &ExecutionHistory) -> Vec<AgentRole> {
    h.entries().iter().map(|e| e.agent).collect()
}

/// Collaborators for running the add task on the interpreter.
pub struct Harness {
    pub dir: tempfile::TempDir,
    pub docs: DocSet,
    pub db: KernelDb,
    pub embedder: HashEmbedder,
    pub backend: InterpBackend,
}

impl Harness {
    pub fn new() -> Harness {
        Harness {
            dir: tempfile::tempdir().unwrap(),
            docs: DocSet::empty("sketch", "interp"),
            db: KernelDb::in_memory(),
            embedder: HashEmbedder::default(),
            backend: InterpBackend::new(),
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        let mut cfg = PipelineConfig { max_iterations: 6, dsl: Dsl::Sketch, work_dir: self.dir.path().into(), ..PipelineConfig::default() };
        cfg.verify.repetitions = 2;
        cfg.verify.warmup = 0;
        cfg
    }

    pub fn run_add(&self, p: &dyn ChatProvider) -> Result<PipelineResult, PipelineError> {
        let ctx = PipelineContext { provider: p, backend: &self.backend, docset: &self.docs, db: Some(&self.db), embedder: &self.embedder };
        run_pipeline(&builtin_task("add").unwrap(), &self.pipeline_config(), &ctx)
    }
}
