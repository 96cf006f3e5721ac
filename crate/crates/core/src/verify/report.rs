use std::fmt;

use serde::{Deserialize, Serialize};

use crate::task::Instance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerifyStatus {
    Pass,
    NumericFail,
    CompileFail,
    RuntimeFail,
    Timeout,
}

impl fmt::Display for VerifyStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Target language of a generated kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dsl {
    /// C source run by the `c_cpu` backend.
    C,
    /// A sketch executed directly by the interpreter backend.
    Sketch,
}

impl Dsl {
    pub fn as_str(self) -> &'static str {
        match self {
            Dsl::C => "c",
            Dsl::Sketch => "sketch",
        }
    }

    /// Info string of the fenced code block that carries this language.
    pub fn fence(self) -> &'static str {
        match self {
            Dsl::C => "c",
            Dsl::Sketch => "usk",
        }
    }

    pub fn parse(s: &str) -> Option<Dsl> {
        match s {
            "c" => Some(Dsl::C),
            "sketch" | "usk" => Some(Dsl::Sketch),
            _ => None,
        }
    }
}

impl fmt::Display for Dsl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One generated implementation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelCandidate {
    pub id: String,
    pub source: String,
    pub dsl: Dsl,
    pub backend: String,
    /// Sketch text the kernel was generated from.
    #[serde(default)]
    pub sketch: Option<String>,
    #[serde(default)]
    pub status: Option<VerifyStatus>,
    #[serde(default)]
    pub latency_us: Vec<f64>,
}

impl KernelCandidate {
    pub fn new(id: impl Into<String>, dsl: Dsl, backend: impl Into<String>, source: impl Into<String>) -> KernelCandidate {
        KernelCandidate {
            id: id.into(),
            source: source.into(),
            dsl,
            backend: backend.into(),
            sketch: None,
            status: None,
            latency_us: Vec::new(),
        }
    }

    pub fn mean_latency(&self) -> Option<f64> {
        super::metrics::mean(&self.latency_us)
    }
}

/// Correctness result on one input instantiation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceOutcome {
    pub instance: Instance,
    pub passed: bool,
    pub violation_fraction: f64,
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub status: VerifyStatus,
    /// Worst violating fraction over all instances.
    pub violation_fraction: f64,
    pub max_error: f64,
    pub latency_gen_us: Vec<f64>,
    pub latency_base_us: Vec<f64>,
    pub diagnostics: String,
    #[serde(default)]
    pub instances: Vec<InstanceOutcome>,
}

impl VerifyReport {
    pub fn failure(status: VerifyStatus, diagnostics: impl Into<String>) -> VerifyReport {
        VerifyReport {
            status,
            violation_fraction: if status == VerifyStatus::NumericFail { 1.0 } else { 0.0 },
            max_error: 0.0,
            latency_gen_us: Vec::new(),
            latency_base_us: Vec::new(),
            diagnostics: diagnostics.into(),
            instances: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == VerifyStatus::Pass
    }

    pub fn mean_gen_us(&self) -> Option<f64> {
        super::metrics::mean(&self.latency_gen_us)
    }

    pub fn mean_base_us(&self) -> Option<f64> {
        super::metrics::mean(&self.latency_base_us)
    }

    /// `T_base / T_gen` over mean latencies.
    pub fn speedup(&self) -> Option<f64> {
        Some(self.mean_base_us()? / self.mean_gen_us()?)
    }

    /// Fraction of dynamic-shape instances that passed; `None` without any.
    pub fn dynamic_robustness(&self) -> Option<f64> {
        let dynamic: Vec<_> = self.instances.iter().filter(|i| i.instance.dynamic).collect();
        if dynamic.is_empty() {
            return None;
        }
        Some(dynamic.iter().filter(|i| i.passed).count() as f64 / dynamic.len() as f64)
    }
}
