//! Verifier: checks generated kernels against the interpreter and times them.

mod backend;
mod c_cpu;
pub mod metrics;
mod report;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use backend::{BackendAdapter, BackendFailure, FailureKind, InterpBackend, Runner};
pub use c_cpu::{CCpuBackend, HARNESS, RUNTIME_PRELUDE};
pub use metrics::{
    binomial, check_pass, element_error, elementwise_error, fast_p, geometric_mean, pass_at_k, pass_at_k_f64,
    speedup_metrics, Gate, MetricError, SpeedupSummary, Tolerance,
};
pub use report::{Dsl, InstanceOutcome, KernelCandidate, VerifyReport, VerifyStatus};

use crate::exec::{self, ExecMode};
use crate::interp::{run_sketch, Binding, Tensor};
use crate::task::{Instance, OperatorSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub warmup: usize,
    pub repetitions: usize,
    /// Number of seeded dynamic-shape instances on top of the static one.
    pub dynamic_instances: usize,
    pub seed: u64,
    /// Overrides the dtype-derived tolerance when set.
    pub tolerance: Option<Tolerance>,
    pub mode: ExecMode,
    /// Root of the `work/<task>/<candidate>/` tree.
    pub work_dir: PathBuf,
}

impl Default for VerifyConfig {
    fn default() -> VerifyConfig {
        VerifyConfig {
            warmup: 3,
            repetitions: 20,
            dynamic_instances: 5,
            seed: 0,
            tolerance: None,
            mode: ExecMode::Parallel,
            work_dir: std::env::temp_dir().join("kagent-work"),
        }
    }
}

impl VerifyConfig {
    pub fn instances(&self, task: &OperatorSpec) -> Vec<Instance> {
        let mut v = vec![task.static_instance()];
        if !task.dynamic_ranges.is_empty() {
            v.extend(task.dynamic_instances(self.seed, self.dynamic_instances));
        }
        v
    }

    pub fn candidate_dir(&self, task: &OperatorSpec, cand: &KernelCandidate) -> PathBuf {
        self.work_dir.join(sanitize(&task.name)).join(sanitize(&cand.id))
    }
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Builds the backend registered under `id`.
pub fn backend_by_id(id: &str) -> Option<Arc<dyn BackendAdapter>> {
    match id {
        "interp" => Some(Arc::new(InterpBackend::new())),
        "c_cpu" => Some(Arc::new(CCpuBackend::new())),
        "c_cpu_asan" => Some(Arc::new(CCpuBackend::sanitized())),
        _ => None,
    }
}

fn failure_status(f: &BackendFailure) -> VerifyStatus {
    match f.kind {
        FailureKind::Compile => VerifyStatus::CompileFail,
        FailureKind::Runtime => VerifyStatus::RuntimeFail,
        FailureKind::Timeout => VerifyStatus::Timeout,
    }
}

/// Reference outputs for one instance.
pub fn reference_outputs(task: &OperatorSpec, b: &Binding) -> Result<BTreeMap<String, Tensor>, String> {
    let s = task.reference_sketch().map_err(|e| e.to_string())?;
    run_sketch(&s, b).map(|e| e.outputs).map_err(|e| e.to_string())
}

enum Checked {
    Outcome(InstanceOutcome, String),
    Failed(BackendFailure),
}

fn check_instance(task: &OperatorSpec, runner: &dyn Runner, inst: &Instance, seed: u64, tol: Option<Tolerance>) -> Checked {
    let b = match task.binding(inst, seed) {
        Ok(b) => b,
        Err(e) => return Checked::Failed(BackendFailure::runtime(e.to_string())),
    };
    let want = match reference_outputs(task, &b) {
        Ok(w) => w,
        Err(e) => return Checked::Failed(BackendFailure::runtime(format!("reference failed: {e}"))),
    };
    let got = match runner.run(&b) {
        Ok(g) => g,
        Err(f) => return Checked::Failed(f),
    };
    let mut errors = Vec::new();
    let mut notes = String::new();
    for (name, r) in &want {
        let tol = tol.unwrap_or_else(|| Tolerance::for_dtype(r.dtype));
        let Some(g) = got.get(name) else {
            return Checked::Failed(BackendFailure::runtime(format!("output `{name}` missing")));
        };
        match elementwise_error(g, r, &tol) {
            Ok(e) => {
                let gate = check_pass(&e, &tol);
                if !gate.passed {
                    notes.push_str(&format!(
                        "{name}: {}/{} elements above tau={} (fraction {:.6}) at {:?}\n",
                        gate.violations, gate.total, tol.tau, gate.violation_fraction, inst.symbols
                    ));
                }
                errors.push((gate, e.iter().copied().fold(0.0, f64::max)));
            }
            Err(e) => return Checked::Failed(BackendFailure::runtime(format!("{name}: {e}"))),
        }
    }
    let worst = errors.iter().map(|(g, _)| g.violation_fraction).fold(0.0, f64::max);
    let max_error = errors.iter().map(|(_, m)| *m).fold(0.0, f64::max);
    let passed = errors.iter().all(|(g, _)| g.passed);
    Checked::Outcome(InstanceOutcome { instance: inst.clone(), passed, violation_fraction: worst, max_error }, notes)
}

/// Verifies `cand` on every instance of `task`, then profiles it against
/// the reference sketch on the interpreter when all instances pass.
pub fn verify_kernel(cand: &KernelCandidate, task: &OperatorSpec, backend: &dyn BackendAdapter, cfg: &VerifyConfig) -> VerifyReport {
    let dir = cfg.candidate_dir(task, cand);
    let runner = match backend.compile(cand, task, &dir) {
        Ok(r) => r,
        Err(f) => return VerifyReport::failure(failure_status(&f), f.log),
    };
    let instances = cfg.instances(task);
    let seed = cfg.seed;
    let results = exec::map(cfg.mode, &instances, |inst| check_instance(task, runner.as_ref(), inst, seed, cfg.tolerance));

    let mut outcomes = Vec::new();
    let mut diagnostics = String::new();
    let mut first_failure: Option<BackendFailure> = None;
    for (inst, r) in instances.iter().zip(results) {
        match r {
            Checked::Outcome(o, notes) => {
                diagnostics.push_str(&notes);
                outcomes.push(o);
            }
            Checked::Failed(f) => {
                diagnostics.push_str(&format!("{:?} at {:?}: {}\n", f.kind, inst.symbols, f.log));
                outcomes.push(InstanceOutcome { instance: inst.clone(), passed: false, violation_fraction: 1.0, max_error: f64::MAX });
                first_failure.get_or_insert(f);
            }
        }
    }
    // Non-finite errors are capped so reports survive a JSON round trip.
    for o in &mut outcomes {
        if !o.max_error.is_finite() {
            o.max_error = f64::MAX;
        }
    }
    let violation_fraction = outcomes.iter().map(|o| o.violation_fraction).fold(0.0, f64::max);
    let max_error = outcomes.iter().map(|o| o.max_error).fold(0.0, f64::max);
    let status = match &first_failure {
        Some(f) => failure_status(f),
        None if outcomes.iter().all(|o| o.passed) => VerifyStatus::Pass,
        None => VerifyStatus::NumericFail,
    };
    let mut report = VerifyReport {
        status,
        violation_fraction,
        max_error,
        latency_gen_us: Vec::new(),
        latency_base_us: Vec::new(),
        diagnostics,
        instances: outcomes,
    };
    if status != VerifyStatus::Pass {
        return report;
    }

    let b = match task.binding(&task.static_instance(), seed) {
        Ok(b) => b,
        Err(e) => {
            report.status = VerifyStatus::RuntimeFail;
            report.diagnostics.push_str(&e.to_string());
            return report;
        }
    };
    let gen = {
        let _lease = backend.profile_lease().lock().unwrap_or_else(|p| p.into_inner());
        runner.profile(&b, cfg.warmup, cfg.repetitions)
    };
    match gen {
        Ok(s) => report.latency_gen_us = s,
        Err(f) => {
            report.status = failure_status(&f);
            report.diagnostics.push_str(&f.log);
            return report;
        }
    }
    report.latency_base_us = baseline_latency(task, &b, cfg);
    report
}

/// Latency of the task's reference sketch on the interpreter.
pub fn baseline_latency(task: &OperatorSpec, b: &Binding, cfg: &VerifyConfig) -> Vec<f64> {
    let Ok(s) = task.reference_sketch() else { return Vec::new() };
    match run_sketch(&s, b) {
        Ok(e) => vec![e.cost.latency_us(); cfg.repetitions],
        Err(_) => Vec::new(),
    }
}

/// The reference sketch wrapped as a candidate for the interpreter.
pub fn reference_candidate(task: &OperatorSpec) -> KernelCandidate {
    let mut c = KernelCandidate::new(format!("{}-reference", task.name), Dsl::Sketch, "interp", task.reference.clone());
    c.sketch = Some(task.reference.clone());
    c
}

/// Verifies many candidates of one task, in order.
pub fn verify_many(cands: &[KernelCandidate], task: &OperatorSpec, backend: &dyn BackendAdapter, cfg: &VerifyConfig) -> Vec<VerifyReport> {
    exec::map(cfg.mode, cands, |c| verify_kernel(c, task, backend, cfg))
}
