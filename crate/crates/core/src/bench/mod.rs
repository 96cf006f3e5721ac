//! Benchmark harness over a small builtin operator suite.

mod run;
mod suite;

pub use run::{
    aggregate, reference_rules, run_suite, Aggregates, Generator, GroupStats, SampleRecord, SuiteConfig, SuiteError, SuiteMode,
    SuiteReport, BRITTLE_ADD,
};
pub use suite::{builtin_suite, builtin_task, BUILTIN_MANIFESTS};

#[cfg(test)]
mod tests;
