use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::Rule;
use crate::conductor::{run_pipeline, PipelineConfig, PipelineContext, PipelineError};
use crate::evolve::{run_evolve, EvolveConfig};
use crate::exec::{self, ExecMode};
use crate::task::OperatorSpec;
use crate::verify::{fast_p, geometric_mean, pass_at_k, verify_kernel, KernelCandidate, VerifyReport, VerifyStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteMode {
    /// Fixed shapes only.
    Static,
    /// Fixed shapes plus seeded instantiations from each task's ranges.
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Pipeline,
    Evolve(EvolveConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    /// Samples per task.
    pub samples: u64,
    /// pass@k is reported for every k here that is at most `samples`.
    pub ks: Vec<u64>,
    pub thresholds: Vec<f64>,
    pub mode: SuiteMode,
    /// Dynamic instantiations per candidate in dynamic mode.
    pub dynamic_instances: usize,
    pub seed: u64,
    pub generator: Generator,
    pub pipeline: PipelineConfig,
    pub exec: ExecMode,
}

impl Default for SuiteConfig {
    fn default() -> SuiteConfig {
        SuiteConfig {
            samples: 4,
            ks: vec![1, 4],
            thresholds: vec![0.8, 1.0, 1.5],
            mode: SuiteMode::Static,
            dynamic_instances: 5,
            seed: 0,
            generator: Generator::Pipeline,
            pipeline: PipelineConfig::default(),
            exec: ExecMode::Parallel,
        }
    }
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("the task list is empty")]
    NoTasks,
    #[error("samples must be at least 1")]
    NoSamples,
}

/// Outcome of one generated sample; the report's aggregates are computed
/// from these records alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub task: String,
    pub category: String,
    pub sample: u64,
    pub status: Option<VerifyStatus>,
    pub passed: bool,
    pub latency_gen_us: Option<f64>,
    pub latency_base_us: Option<f64>,
    pub dynamic_total: usize,
    pub dynamic_passed: usize,
    pub candidate: String,
    /// Why no report exists, when none does.
    pub error: Option<String>,
}

impl SampleRecord {
    pub fn speedup(&self) -> Option<f64> {
        match (self.passed, self.latency_base_us, self.latency_gen_us) {
            (true, Some(b), Some(g)) if g > 0.0 => Some(b / g),
            _ => None,
        }
    }

    /// True when the sample was checked on dynamic shapes and passed all.
    pub fn dynamically_robust(&self) -> bool {
        self.dynamic_total > 0 && self.dynamic_passed == self.dynamic_total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub tasks: usize,
    pub samples: usize,
    pub correct: usize,
    /// `(k, pass@k)` as a float and as an exact fraction.
    pub pass_at_k: Vec<(u64, f64, String)>,
    /// Best passing speedup per task, in task order.
    pub speedups: Vec<f64>,
    pub geometric_mean: Option<f64>,
    /// `(p, fast_p)`; tasks without a passing sample count as not fast.
    pub fast_p: Vec<(f64, f64)>,
    /// Fraction of samples that passed every dynamic instantiation.
    pub dynamic_robustness: Option<f64>,
    /// Fraction of all dynamic instantiations that passed.
    pub dynamic_instance_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub overall: GroupStats,
    pub per_category: BTreeMap<String, GroupStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub mode: SuiteMode,
    pub samples: u64,
    pub ks: Vec<u64>,
    pub thresholds: Vec<f64>,
    pub records: Vec<SampleRecord>,
    pub aggregates: Aggregates,
}

fn group(records: &[&SampleRecord], n: u64, ks: &[u64], thresholds: &[f64]) -> GroupStats {
    let mut tasks: Vec<&str> = Vec::new();
    for r in records {
        if !tasks.contains(&r.task.as_str()) {
            tasks.push(&r.task);
        }
    }
    fn per_task<'a>(records: &'a [&'a SampleRecord], t: &'a str) -> impl Iterator<Item = &'a &'a SampleRecord> {
        records.iter().filter(move |r| r.task == t)
    }
    let correct: Vec<u64> = tasks.iter().map(|t| per_task(records, t).filter(|r| r.passed).count() as u64).collect();
    let pass = ks
        .iter()
        .filter(|&&k| k >= 1 && k <= n)
        .filter_map(|&k| {
            let exact = pass_at_k(n, &correct, k).ok()?;
            let f = num_traits::ToPrimitive::to_f64(&exact).unwrap_or(f64::NAN);
            Some((k, f, exact.to_string()))
        })
        .collect();
    let best: Vec<Option<f64>> = tasks.iter().map(|t| per_task(records, t).filter_map(|r| r.speedup()).reduce(f64::max)).collect();
    let speedups: Vec<f64> = best.iter().flatten().copied().collect();
    let all: Vec<f64> = best.iter().map(|s| s.unwrap_or(0.0)).collect();
    let dynamic: Vec<&&SampleRecord> = records.iter().filter(|r| r.dynamic_total > 0).collect();
    let (dyn_total, dyn_passed) = dynamic.iter().fold((0, 0), |(t, p), r| (t + r.dynamic_total, p + r.dynamic_passed));
    GroupStats {
        tasks: tasks.len(),
        samples: records.len(),
        correct: correct.iter().sum::<u64>() as usize,
        pass_at_k: pass,
        geometric_mean: geometric_mean(&speedups),
        speedups,
        fast_p: thresholds.iter().map(|&p| (p, fast_p(&all, p))).collect(),
        dynamic_robustness: (!dynamic.is_empty()).then(|| dynamic.iter().filter(|r| r.dynamically_robust()).count() as f64 / dynamic.len() as f64),
        dynamic_instance_rate: (dyn_total > 0).then(|| dyn_passed as f64 / dyn_total as f64),
    }
}

/// Aggregates from raw records; categories in name order.
pub fn aggregate(records: &[SampleRecord], n: u64, ks: &[u64], thresholds: &[f64]) -> Aggregates {
    let all: Vec<&SampleRecord> = records.iter().collect();
    let mut cats: BTreeMap<String, Vec<&SampleRecord>> = BTreeMap::new();
    for r in records {
        cats.entry(r.category.clone()).or_default().push(r);
    }
    Aggregates {
        overall: group(&all, n, ks, thresholds),
        per_category: cats.into_iter().map(|(c, rs)| (c, group(&rs, n, ks, thresholds))).collect(),
    }
}

impl SuiteReport {
    pub fn recompute(&self) -> Aggregates {
        aggregate(&self.records, self.samples, &self.ks, &self.thresholds)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text table, one row per category plus the overall row.
    pub fn table(&self) -> String {
        let fmt_opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
        let mut head = format!("{:<20} {:>5} {:>7}", "category", "tasks", "correct");
        for (k, _, _) in &self.aggregates.overall.pass_at_k {
            head.push_str(&format!(" {:>8}", format!("pass@{k}")));
        }
        head.push_str(&format!(" {:>7}", "GM"));
        for (p, _) in &self.aggregates.overall.fast_p {
            head.push_str(&format!(" {:>8}", format!("fast_{p}")));
        }
        head.push_str(&format!(" {:>7}", "dyn"));
        let row = |name: &str, g: &GroupStats| {
            let mut s = format!("{:<20} {:>5} {:>7}", name, g.tasks, format!("{}/{}", g.correct, g.samples));
            for (_, v, _) in &g.pass_at_k {
                s.push_str(&format!(" {v:>8.3}"));
            }
            s.push_str(&format!(" {:>7}", fmt_opt(g.geometric_mean)));
            for (_, v) in &g.fast_p {
                s.push_str(&format!(" {v:>8.3}"));
            }
            s.push_str(&format!(" {:>7}", fmt_opt(g.dynamic_robustness)));
            s
        };
        let mut lines = vec![head];
        for (c, g) in &self.aggregates.per_category {
            lines.push(row(c, g));
        }
        lines.push(row("overall", &self.aggregates.overall));
        lines.join("\n") + "\n"
    }
}

fn record_from(task: &OperatorSpec, sample: u64, candidate: &str, report: &VerifyReport) -> SampleRecord {
    let dynamic: Vec<_> = report.instances.iter().filter(|i| i.instance.dynamic).collect();
    SampleRecord {
        task: task.name.clone(),
        category: task.category.as_str().into(),
        sample,
        status: Some(report.status),
        passed: report.passed(),
        latency_gen_us: report.mean_gen_us(),
        latency_base_us: report.mean_base_us(),
        dynamic_total: dynamic.len(),
        dynamic_passed: dynamic.iter().filter(|i| i.passed).count(),
        candidate: candidate.into(),
        error: None,
    }
}

fn run_sample(task: &OperatorSpec, sample: u64, cfg: &SuiteConfig, ctx: &PipelineContext<'_>) -> SampleRecord {
    let mut pc = cfg.pipeline.clone();
    pc.candidate_prefix = format!("{}s{sample}-", pc.candidate_prefix);
    pc.verify.seed = cfg.seed;
    pc.verify.dynamic_instances = match cfg.mode {
        SuiteMode::Static => 0,
        SuiteMode::Dynamic => cfg.dynamic_instances,
    };
    pc.sampling.seed = Some(crate::task::fnv(&format!("{}/{}/{sample}", cfg.seed, task.name)));
    let empty = |error: String| SampleRecord {
        task: task.name.clone(),
        category: task.category.as_str().into(),
        sample,
        status: None,
        passed: false,
        latency_gen_us: None,
        latency_base_us: None,
        dynamic_total: 0,
        dynamic_passed: 0,
        candidate: String::new(),
        error: Some(error),
    };
    match &cfg.generator {
        Generator::Pipeline => match run_pipeline(task, &pc, ctx) {
            Ok(r) => record_from(task, sample, &r.candidate.id, &r.report),
            Err(PipelineError::ExhaustedIterations { best: Some(b), .. }) => record_from(task, sample, &b.candidate.id, &b.report),
            Err(e) => empty(e.to_string()),
        },
        Generator::Evolve(ec) => {
            let ec = EvolveConfig { seed: crate::task::fnv(&format!("{}/{sample}", ec.seed)), ..ec.clone() };
            match run_evolve(task, &ec, &pc, ctx) {
                Ok(r) => {
                    let mut cand = KernelCandidate::new(format!("{}final", pc.candidate_prefix), pc.dsl, ctx.backend.id(), r.best.source.clone());
                    cand.sketch = Some(r.best.sketch.clone());
                    let mut vc = pc.verify.clone();
                    vc.work_dir = pc.work_dir.clone();
                    let report = verify_kernel(&cand, task, ctx.backend, &vc);
                    record_from(task, sample, &r.best.id, &report)
                }
                Err(e) => empty(e.to_string()),
            }
        }
    }
}

/// Generates `samples` kernels per task and scores them. Per-task failures
/// become records; the suite always completes.
pub fn run_suite(tasks: &[OperatorSpec], cfg: &SuiteConfig, ctx: &PipelineContext<'_>) -> Result<SuiteReport, SuiteError> {
    if tasks.is_empty() {
        return Err(SuiteError::NoTasks);
    }
    if cfg.samples == 0 {
        return Err(SuiteError::NoSamples);
    }
    let jobs: Vec<(usize, u64)> = (0..tasks.len()).flat_map(|t| (0..cfg.samples).map(move |s| (t, s))).collect();
    let records = exec::map(cfg.exec, &jobs, |&(t, s)| run_sample(&tasks[t], s, cfg, ctx));
    let aggregates = aggregate(&records, cfg.samples, &cfg.ks, &cfg.thresholds);
    Ok(SuiteReport { mode: cfg.mode, samples: cfg.samples, ks: cfg.ks.clone(), thresholds: cfg.thresholds.clone(), records, aggregates })
}

/// Scripted rules that answer both agents with each task's reference
/// sketch, keyed on the task name in the prompt.
pub fn reference_rules(tasks: &[OperatorSpec]) -> Vec<Rule> {
    tasks
        .iter()
        .map(|t| {
            let reply = format!("Reference design.\n```usk\n{}\n```\n", t.reference.trim_end());
            Rule { when: vec![format!("operator: {}\n", t.name)], replies: vec![reply] }
        })
        .collect()
}

/// An elementwise add that only covers `N / TILE` whole tiles, so any `N`
/// not divisible by the tile leaves a tail unwritten.
pub const BRITTLE_ADD: &str = "sketch add_brittle {
  symbols: N;
  tensors: X[N]: f32; Y[N]: f32; Z[N]: f32;
  constexpr: TILE = 8;
  @llm_hint(\"parallel\")
  for t in range(N / TILE):
    a = alloc([TILE], llm_hint=[\"fast\"])
    b = alloc([TILE], llm_hint=[\"fast\"])
    load(X[t * TILE:(t + 1) * TILE] -> a)
    load(Y[t * TILE:(t + 1) * TILE] -> b)
    add(a, b, a)
    store(a -> Z[t * TILE:(t + 1) * TILE])
}
";
