use std::collections::BTreeSet;

use super::*;
use crate::agents::{Rule, ScriptedProvider};
use crate::conductor::PipelineContext;
use crate::knowledge::DocSet;
use crate::retrieval::{HashEmbedder, KernelDb};
use crate::task::Category;
use crate::verify::{reference_candidate, verify_kernel, Dsl, InterpBackend, VerifyConfig, VerifyStatus};

#[test]
fn builtin_suite_covers_every_category() {
    let suite = builtin_suite();
    assert!(suite.len() >= 8);
    let cats: BTreeSet<Category> = suite.iter().map(|t| t.category).collect();
    assert_eq!(cats.len(), 8);
    for t in &suite {
        assert!(t.static_shapes.values().all(|&d| (1..=256).contains(&d)), "{}", t.name);
        assert!(t.dynamic_ranges.values().all(|&[lo, hi]| 1 <= lo && lo <= hi && hi <= 256), "{}", t.name);
    }
}

#[test]
fn builtin_references_self_verify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = VerifyConfig { work_dir: dir.path().into(), repetitions: 2, warmup: 0, ..VerifyConfig::default() };
    for t in builtin_suite() {
        let r = verify_kernel(&reference_candidate(&t), &t, &InterpBackend::new(), &cfg);
        assert_eq!(r.status, VerifyStatus::Pass, "{}: {}", t.name, r.diagnostics);
        assert_eq!(r.speedup(), Some(1.0), "{}", t.name);
    }
}

#[test]
fn dynamic_instantiation_is_seeded() {
    for t in builtin_suite() {
        assert_eq!(t.dynamic_instances(7, 5), t.dynamic_instances(7, 5));
    }
}

fn rec(task: &str, cat: &str, passed: bool, gen: f64, base: f64) -> SampleRecord {
    SampleRecord {
        task: task.into(),
        category: cat.into(),
        sample: 0,
        status: Some(if passed { VerifyStatus::Pass } else { VerifyStatus::NumericFail }),
        passed,
        latency_gen_us: passed.then_some(gen),
        latency_base_us: passed.then_some(base),
        dynamic_total: 0,
        dynamic_passed: 0,
        candidate: String::new(),
        error: None,
    }
}

#[test]
fn aggregates_follow_the_metric_definitions() {
    let records = vec![rec("a", "x", true, 2.0, 1.0), rec("b", "y", true, 1.0, 2.0), rec("b", "y", false, 0.0, 0.0)];
    let agg = aggregate(&records, 2, &[1, 2], &[0.8, 1.0]);
    assert_eq!(agg.overall.speedups, [0.5, 2.0]);
    assert!((agg.overall.geometric_mean.unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(agg.overall.fast_p, [(0.8, 0.5), (1.0, 0.5)]);
    // Task b has one correct sample out of two.
    assert_eq!(agg.per_category["y"].pass_at_k[0].2, "1/2");
    assert_eq!(agg.per_category.len(), 2);
}

struct Harness {
    dir: tempfile::TempDir,
    docs: DocSet,
    db: KernelDb,
    embedder: HashEmbedder,
    backend: InterpBackend,
}

impl Harness {
    fn new() -> Harness {
        Harness { dir: tempfile::tempdir().unwrap(), docs: DocSet::empty("sketch", "interp"), db: KernelDb::in_memory(), embedder: HashEmbedder::default(), backend: InterpBackend::new() }
    }

    fn cfg(&self, mode: SuiteMode, samples: u64) -> SuiteConfig {
        let mut cfg = SuiteConfig { samples, mode, ..SuiteConfig::default() };
        cfg.pipeline.dsl = Dsl::Sketch;
        cfg.pipeline.work_dir = self.dir.path().into();
        cfg.pipeline.max_iterations = 1;
        cfg.pipeline.use_retrieval = false;
        cfg.pipeline.verify.repetitions = 2;
        cfg
    }

    fn run(&self, tasks: &[crate::task::OperatorSpec], p: &ScriptedProvider, cfg: &SuiteConfig) -> SuiteReport {
        let ctx = PipelineContext { provider: p, backend: &self.backend, docset: &self.docs, db: Some(&self.db), embedder: &self.embedder };
        run_suite(tasks, cfg, &ctx).unwrap()
    }
}

#[test]
fn reference_script_passes_the_whole_suite() {
    let tasks = builtin_suite();
    let h = Harness::new();
    let report = h.run(&tasks, &ScriptedProvider::from_rules(reference_rules(&tasks)), &h.cfg(SuiteMode::Dynamic, 4));
    assert_eq!(report.records.len(), tasks.len() * 4);
    assert!(report.records.iter().all(|r| r.passed), "{:#?}", report.records.iter().find(|r| !r.passed));
    assert_eq!(report.aggregates.overall.pass_at_k.last().unwrap().2, "1");
    assert_eq!(report.aggregates.overall.dynamic_robustness, Some(1.0));
    assert_eq!(report.recompute(), report.aggregates);
    let back: SuiteReport = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(back.recompute(), report.aggregates);
    assert!(report.table().lines().last().unwrap().starts_with("overall"));
}

#[test]
fn brittle_kernel_is_not_dynamically_robust() {
    let add = builtin_task("add").unwrap();
    let reply = format!("```usk\n{BRITTLE_ADD}```");
    let p = ScriptedProvider::from_rules(vec![Rule::new(&["operator: add\n"], &[&reply])]);
    let h = Harness::new();
    let stat = h.run(std::slice::from_ref(&add), &p, &h.cfg(SuiteMode::Static, 1));
    assert!(stat.records[0].passed);
    let dynamic = h.run(std::slice::from_ref(&add), &p, &h.cfg(SuiteMode::Dynamic, 2));
    let robustness = dynamic.aggregates.overall.dynamic_robustness.unwrap();
    assert!(robustness < 1.0, "{robustness}");
    assert!(dynamic.records.iter().all(|r| !r.passed && r.dynamic_total == 5));
}

#[test]
fn empty_inputs_are_rejected() {
    let h = Harness::new();
    let p = ScriptedProvider::from_rules(Vec::new());
    let ctx = PipelineContext { provider: &p, backend: &h.backend, docset: &h.docs, db: None, embedder: &h.embedder };
    assert!(matches!(run_suite(&[], &h.cfg(SuiteMode::Static, 1), &ctx), Err(SuiteError::NoTasks)));
    let tasks = builtin_suite();
    assert!(matches!(run_suite(&tasks, &h.cfg(SuiteMode::Static, 0), &ctx), Err(SuiteError::NoSamples)));
    // Agent failures become records; the suite still completes.
    let r = run_suite(&tasks[..2], &h.cfg(SuiteMode::Static, 1), &ctx).unwrap();
    assert!(r.records.iter().all(|x| x.error.is_some() && !x.passed));
}
