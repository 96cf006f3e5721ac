use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::report::{Dsl, KernelCandidate};
use crate::interp::{bind_shapes, eval_with, Binding, ComputeLibrary, Tensor};
use crate::sketch::{parse_and_validate, Sketch};
use crate::task::OperatorSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureKind {
    Compile,
    Runtime,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendFailure {
    pub kind: FailureKind,
    pub log: String,
}

impl BackendFailure {
    pub fn compile(log: impl Into<String>) -> BackendFailure {
        BackendFailure { kind: FailureKind::Compile, log: log.into() }
    }

    pub fn runtime(log: impl Into<String>) -> BackendFailure {
        BackendFailure { kind: FailureKind::Runtime, log: log.into() }
    }

    pub fn timeout(log: impl Into<String>) -> BackendFailure {
        BackendFailure { kind: FailureKind::Timeout, log: log.into() }
    }
}

impl fmt::Display for BackendFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} failure: {}", self.kind, self.log)
    }
}

/// A compiled kernel ready to run on concrete inputs.
pub trait Runner: Send + Sync {
    /// Runs once and returns every output tensor of the task.
    fn run(&self, b: &Binding) -> Result<BTreeMap<String, Tensor>, BackendFailure>;

    /// Runs `warmup` untimed then `reps` timed executions and returns the
    /// timed latencies in microseconds.
    fn profile(&self, b: &Binding, warmup: usize, reps: usize) -> Result<Vec<f64>, BackendFailure>;
}

/// Compile/run/profile capability for one target.
pub trait BackendAdapter: Send + Sync {
    fn id(&self) -> &str;

    /// Builds a runner. `workdir` is a scratch directory owned by this
    /// candidate.
    fn compile(&self, cand: &KernelCandidate, task: &OperatorSpec, workdir: &Path) -> Result<Box<dyn Runner>, BackendFailure>;

    /// Exclusive lease held while profiling so timings do not interfere.
    fn profile_lease(&self) -> &Mutex<()>;
}

/// Runs sketch candidates on the reference interpreter. Latency comes from
/// the interpreter's deterministic cost model, so repeated profiles agree
/// exactly.
#[derive(Debug, Default)]
pub struct InterpBackend {
    lease: Mutex<()>,
    library: Option<ComputeLibrary>,
}

impl InterpBackend {
    pub fn new() -> InterpBackend {
        InterpBackend::default()
    }

    pub fn with_library(library: ComputeLibrary) -> InterpBackend {
        InterpBackend { lease: Mutex::new(()), library: Some(library) }
    }
}

struct SketchRunner {
    sketch: Sketch,
    library: ComputeLibrary,
    outputs: Vec<String>,
}

impl SketchRunner {
    fn eval(&self, b: &Binding) -> Result<crate::interp::Evaluation, BackendFailure> {
        let rs = bind_shapes(&self.sketch, b).map_err(|e| BackendFailure::runtime(e.to_string()))?;
        eval_with(&rs, b, &self.library).map_err(|e| BackendFailure::runtime(format!("RuntimeEvalError at {e}")))
    }
}

impl Runner for SketchRunner {
    fn run(&self, b: &Binding) -> Result<BTreeMap<String, Tensor>, BackendFailure> {
        let ev = self.eval(b)?;
        let mut out = BTreeMap::new();
        for name in &self.outputs {
            let t = ev.outputs.get(name).ok_or_else(|| BackendFailure::runtime(format!("kernel never stores output `{name}`")))?;
            out.insert(name.clone(), t.clone());
        }
        Ok(out)
    }

    fn profile(&self, b: &Binding, warmup: usize, reps: usize) -> Result<Vec<f64>, BackendFailure> {
        for _ in 0..warmup {
            self.eval(b)?;
        }
        let mut samples = Vec::with_capacity(reps);
        for _ in 0..reps {
            samples.push(self.eval(b)?.cost.latency_us());
        }
        Ok(samples)
    }
}

impl BackendAdapter for InterpBackend {
    fn id(&self) -> &str {
        "interp"
    }

    fn compile(&self, cand: &KernelCandidate, task: &OperatorSpec, _workdir: &Path) -> Result<Box<dyn Runner>, BackendFailure> {
        if cand.dsl != Dsl::Sketch {
            return Err(BackendFailure::compile(format!("interp backend cannot run `{}` sources", cand.dsl)));
        }
        let sketch = parse_and_validate(&cand.source).map_err(|e| BackendFailure::compile(e.to_string()))?;
        let reference = task.reference_sketch().map_err(|e| BackendFailure::compile(e.to_string()))?;
        for t in &reference.decls.tensors {
            match sketch.decls.tensor(&t.name) {
                Some(c) if c.dtype == t.dtype && c.dims.len() == t.dims.len() => {}
                _ => return Err(BackendFailure::compile(format!("kernel must declare tensor `{}` as in the task", t.name))),
            }
        }
        let outputs = reference.output_tensors().iter().map(|t| t.name.clone()).collect();
        let library = self.library.clone().unwrap_or_else(|| ComputeLibrary::standard().clone());
        Ok(Box::new(SketchRunner { sketch, library, outputs }))
    }

    fn profile_lease(&self) -> &Mutex<()> {
        &self.lease
    }
}
