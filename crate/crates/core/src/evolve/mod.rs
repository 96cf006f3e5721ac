//! Island-model performance search. Each island keeps a population of
//! verified kernels and its fastest few as elites; every round, islands draw
//! parents from both ends of their latency ranking, turn the comparison into
//! a plan, and run fresh pipelines seeded with it. Elites move around a
//! directed ring at a fixed interval.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{ChatMessage, ChatProvider, ChatRequest, Inspiration, ProviderError, ANALYSIS_TEMPLATE};
use crate::conductor::{digest, run_pipeline, PipelineConfig, PipelineContext, PipelineError};
use crate::exec::{self, ExecMode};
use crate::retrieval::{make_record, PerfRecord, StorageError};
use crate::sketch::{parse_sketch, Hint, Sketch};
use crate::task::OperatorSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolveConfig {
    pub rounds: u32,
    /// Candidates per island per round.
    pub parallel: usize,
    pub islands: usize,
    /// Migrate after every round `r` with `r % migration_interval == 0`.
    pub migration_interval: u32,
    pub elite_size: usize,
    /// Relative improvement below which a round counts as flat.
    pub plateau_delta: f64,
    pub target_speedup: Option<f64>,
    pub seed: u64,
    pub temperature: f64,
    /// Ask the provider for the comparative plan instead of the built-in diff.
    pub llm_analysis: bool,
    pub mode: ExecMode,
}

impl Default for EvolveConfig {
    fn default() -> EvolveConfig {
        EvolveConfig {
            rounds: 3,
            parallel: 4,
            islands: 2,
            migration_interval: 2,
            elite_size: 2,
            plateau_delta: 0.01,
            target_speedup: None,
            seed: 0,
            temperature: 0.7,
            llm_analysis: true,
            mode: ExecMode::Parallel,
        }
    }
}

impl EvolveConfig {
    pub fn check(&self) -> Result<(), EvolveError> {
        let bad = |m: &str| Err(EvolveError::InvalidConfig(m.into()));
        if self.rounds == 0 || self.parallel == 0 || self.islands == 0 || self.migration_interval == 0 || self.elite_size == 0 {
            return bad("rounds, parallel, islands, migration_interval and elite_size must be at least 1");
        }
        if !(self.plateau_delta > 0.0) {
            return bad("plateau_delta must be positive");
        }
        Ok(())
    }
}

/// A verified kernel in some island's population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub id: String,
    pub round: u32,
    /// Island that produced it; migrated copies keep the original.
    pub origin: usize,
    pub slot: usize,
    pub sketch: String,
    pub source: String,
    pub latency_us: f64,
    pub baseline_us: Option<f64>,
    /// Plan the Designer was given.
    pub plan: String,
}

impl Member {
    pub fn speedup(&self) -> Option<f64> {
        self.baseline_us.map(|b| b / self.latency_us)
    }
}

fn by_latency(a: &Member, b: &Member) -> std::cmp::Ordering {
    a.latency_us.total_cmp(&b.latency_us).then_with(|| a.id.cmp(&b.id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Island {
    pub id: usize,
    pub population: Vec<Member>,
    /// Fastest members, ascending by latency.
    pub elite: Vec<Member>,
}

impl Island {
    pub fn new(id: usize) -> Island {
        Island { id, population: Vec::new(), elite: Vec::new() }
    }

    /// Adds `m` unless a member with the same id is already present.
    pub fn admit(&mut self, m: Member) -> bool {
        if self.population.iter().any(|p| p.id == m.id) {
            return false;
        }
        self.population.push(m);
        true
    }

    pub fn update_elite(&mut self, size: usize) {
        let mut sorted = self.population.clone();
        sorted.sort_by(by_latency);
        sorted.truncate(size);
        self.elite = sorted;
    }

    pub fn best_latency(&self) -> Option<f64> {
        self.elite.first().map(|m| m.latency_us)
    }
}

/// Parents drawn from the fast and slow ends of a population.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Parents {
    pub top: Vec<Member>,
    pub bottom: Vec<Member>,
}

impl Parents {
    pub fn ids(&self) -> Vec<String> {
        self.top.iter().chain(&self.bottom).map(|m| m.id.clone()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.top.is_empty() && self.bottom.is_empty()
    }
}

/// Up to two members from the fastest quartile and up to two from the
/// slowest, picked with a seeded shuffle. Quartile size is `ceil(n / 4)`;
/// a member already taken for the top is never repeated in the bottom.
pub fn stratified_sample(population: &[Member], seed: u64) -> Parents {
    let n = population.len();
    if n == 0 {
        return Parents::default();
    }
    let mut sorted = population.to_vec();
    sorted.sort_by(by_latency);
    let q = n.div_ceil(4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |mut stratum: Vec<Member>| {
        stratum.shuffle(&mut rng);
        stratum.truncate(2);
        stratum.sort_by(by_latency);
        stratum
    };
    let top = pick(sorted[..q].to_vec());
    let rest: Vec<Member> = sorted[n - q..].iter().filter(|m| !top.iter().any(|t| t.id == m.id)).cloned().collect();
    let bottom = pick(rest);
    Parents { top, bottom }
}

pub const BOOTSTRAP_PLAN: &str = "No verified kernels to compare yet. Start from a straightforward correct design: \
parallelize the outermost independent loop, stage rows in fast buffers and keep partial tiles clamped.";

fn hint_counts(s: &Sketch) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    s.walk(&mut |st, _| {
        for h in st.hints.iter() {
            *out.entry(h.as_str().to_string()).or_insert(0) += 1;
        }
    });
    out
}

fn constants(s: &Sketch) -> BTreeMap<String, String> {
    s.decls
        .constexpr
        .iter()
        .map(|c| (c.name.clone(), c.default.map(|v| format!("{}", v.as_f64())).unwrap_or_else(|| "bound".into())))
        .collect()
}

/// Line-per-difference comparison of the fastest and the slowest sketch.
fn structured_diff(fast: &Member, slow: &Member) -> String {
    let mut out = format!("Faster design {} ({:.3} us) vs slower design {} ({:.3} us).\n", fast.id, fast.latency_us, slow.id, slow.latency_us);
    let (Ok(a), Ok(b)) = (parse_sketch(&fast.sketch), parse_sketch(&slow.sketch)) else {
        out.push_str("Sketches could not be compared structurally; keep the faster design.\n");
        return out;
    };
    let mut lines = Vec::new();
    let (ca, cb) = (constants(&a), constants(&b));
    for name in ca.keys().chain(cb.keys()).collect::<std::collections::BTreeSet<_>>() {
        let (x, y) = (ca.get(name).map_or("absent", String::as_str), cb.get(name).map_or("absent", String::as_str));
        if x != y {
            lines.push(format!("- constexpr {name}: {x} in faster, {y} in slower"));
        }
    }
    let (ha, hb) = (hint_counts(&a), hint_counts(&b));
    for tag in Hint::VOCABULARY.iter().map(|s| s.to_string()).chain(ha.keys().chain(hb.keys()).filter(|k| k.starts_with("x-")).cloned()) {
        let (x, y) = (ha.get(&tag).copied().unwrap_or(0), hb.get(&tag).copied().unwrap_or(0));
        if x != y {
            lines.push(format!("- hint {tag}: {x} in faster, {y} in slower"));
        }
    }
    if a.loop_count() != b.loop_count() {
        lines.push(format!("- loops: {} in faster, {} in slower", a.loop_count(), b.loop_count()));
    }
    if lines.is_empty() {
        out.push_str("No structural difference found; vary tiling or hints around the faster design.\n");
    } else {
        out.push_str("Differences:\n");
        out.push_str(&lines.join("\n"));
        out.push_str("\nPlan: keep what the faster design does on each line above and push further in that direction.\n");
    }
    out
}

/// Optimization plan from comparing the fast and slow strata. Without both
/// strata the bootstrap plan is returned; without a provider, a structured
/// diff of constants and hints.
pub fn comparative_analysis(top: &[Member], bottom: &[Member], provider: Option<&dyn ChatProvider>) -> Result<String, ProviderError> {
    let (Some(fast), Some(slow)) = (top.first(), bottom.last()) else {
        return Ok(BOOTSTRAP_PLAN.to_string());
    };
    let Some(p) = provider else {
        return Ok(structured_diff(fast, slow));
    };
    let show = |label: &str, ms: &[Member]| {
        let body = ms.iter().map(|m| format!("### {} ({:.3} us)\n```usk\n{}\n```", m.id, m.latency_us, m.sketch.trim_end())).collect::<Vec<_>>().join("\n");
        format!("## {label}\n{body}\n")
    };
    let user = format!("{}\n{}", show("FASTEST", top), show("SLOWEST", bottom));
    let req = ChatRequest {
        model: p.model_id().into(),
        messages: vec![ChatMessage::system(ANALYSIS_TEMPLATE), ChatMessage::user(user)],
        temperature: 0.0,
        max_tokens: 1024,
        seed: None,
    };
    p.complete(&req)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotOutcome {
    pub slot: usize,
    pub candidate: String,
    /// Verifier status, or why the pipeline stopped.
    pub outcome: String,
    pub latency_us: Option<f64>,
    pub iterations: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IslandRound {
    pub island: usize,
    pub parents: Vec<String>,
    pub plan_digest: String,
    pub slots: Vec<SlotOutcome>,
    pub population: usize,
    pub elite: Vec<String>,
    pub best_latency_us: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Migration {
    pub round: u32,
    pub from: usize,
    pub to: usize,
    /// Elites copied; ids already present in the destination are skipped.
    pub copied: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub islands: Vec<IslandRound>,
    pub migrations: Vec<Migration>,
    pub best_latency_us: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    TargetReached,
    Plateau,
    RoundsExhausted,
}

/// Machine-readable record of a whole search. Holds no timestamps or
/// absolute paths, so equal inputs give byte-equal JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveTrace {
    pub task: String,
    pub config: EvolveConfig,
    pub rounds: Vec<RoundReport>,
    pub stop: Option<StopReason>,
    pub best: Option<Member>,
    pub db_ids: Vec<String>,
}

impl EvolveTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveResult {
    pub best: Member,
    pub trace: EvolveTrace,
    pub islands: Vec<Island>,
}

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("invalid search settings: {0}")]
    InvalidConfig(String),
    #[error("no round produced a valid candidate")]
    EvolveFailed { trace: Box<EvolveTrace> },
    #[error("comparative analysis failed: {0}")]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("writing trace: {0}")]
    Io(#[from] std::io::Error),
}

/// Seed for one (round, island, slot) position; distinct positions get
/// distinct seeds so identical prompts still differ in their request.
pub fn position_seed(seed: u64, round: u32, island: usize, slot: usize) -> u64 {
    crate::task::fnv(&format!("{seed}/{round}/{island}/{slot}"))
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Runs the search. Pipelines inherit `pipeline`, with the temperature,
/// seed, inspiration and candidate prefix set per position. The trace is
/// written to `work_dir/<task>/evolve/trace.json`.
pub fn run_evolve(task: &OperatorSpec, cfg: &EvolveConfig, pipeline: &PipelineConfig, ctx: &PipelineContext<'_>) -> Result<EvolveResult, EvolveError> {
    cfg.check()?;
    let mut islands: Vec<Island> = (0..cfg.islands).map(Island::new).collect();
    let mut trace = EvolveTrace { task: task.name.clone(), config: cfg.clone(), rounds: Vec::new(), stop: None, best: None, db_ids: Vec::new() };
    let analyst = cfg.llm_analysis.then_some(ctx.provider);
    let mut flat_rounds = 0;
    let mut previous_best: Option<f64> = None;

    for round in 1..=cfg.rounds {
        let plans: Vec<Result<(Parents, String), ProviderError>> = exec::map(cfg.mode, &islands, |isl| {
            let parents = stratified_sample(&isl.population, position_seed(cfg.seed, round, isl.id, usize::MAX));
            let plan = comparative_analysis(&parents.top, &parents.bottom, analyst)?;
            Ok((parents, plan))
        });
        let plans = plans.into_iter().collect::<Result<Vec<_>, _>>()?;

        let positions: Vec<(usize, usize)> = (0..cfg.islands).flat_map(|k| (0..cfg.parallel).map(move |p| (k, p))).collect();
        let outcomes = exec::map(cfg.mode, &positions, |&(k, p)| {
            let (_, plan) = &plans[k];
            let elite = islands[k].elite.first();
            let mut pc = pipeline.clone();
            pc.candidate_prefix = format!("{}r{round}-k{k}-p{p}-", pipeline.candidate_prefix);
            pc.sampling.temperature = cfg.temperature;
            pc.sampling.seed = Some(position_seed(cfg.seed, round, k, p));
            pc.store_results = false;
            pc.inspiration = Some(Inspiration {
                plan: format!("search round {round} of {}, island {k}, slot {p}\n{plan}", cfg.rounds),
                sketch: elite.map(|m| m.sketch.clone()),
                latency_us: elite.map(|m| m.latency_us),
            });
            run_pipeline(task, &pc, ctx)
        });

        let mut reports = Vec::new();
        for (k, isl) in islands.iter_mut().enumerate() {
            let (parents, plan) = &plans[k];
            let mut slots = Vec::new();
            for ((_, p), out) in positions.iter().zip(&outcomes).filter(|((kk, _), _)| *kk == k) {
                let slot = match out {
                    Ok(r) => {
                        let latency = r.report.mean_gen_us();
                        if let Some(l) = latency {
                            isl.admit(Member {
                                id: r.candidate.id.clone(),
                                round,
                                origin: k,
                                slot: *p,
                                sketch: r.sketch_text.clone(),
                                source: r.candidate.source.clone(),
                                latency_us: l,
                                baseline_us: r.report.mean_base_us(),
                                plan: plan.clone(),
                            });
                        }
                        SlotOutcome { slot: *p, candidate: r.candidate.id.clone(), outcome: r.report.status.to_string(), latency_us: latency, iterations: r.iterations }
                    }
                    Err(e) => {
                        let iterations = match e {
                            PipelineError::ExhaustedIterations { iterations, .. } => *iterations,
                            _ => 0,
                        };
                        SlotOutcome { slot: *p, candidate: String::new(), outcome: e.to_string(), latency_us: None, iterations }
                    }
                };
                slots.push(slot);
            }
            isl.update_elite(cfg.elite_size);
            reports.push(IslandRound {
                island: k,
                parents: parents.ids(),
                plan_digest: digest(plan),
                slots,
                population: 0,
                elite: Vec::new(),
                best_latency_us: None,
            });
        }

        let mut migrations = Vec::new();
        if cfg.islands > 1 && round % cfg.migration_interval == 0 {
            let snapshot: Vec<Vec<Member>> = islands.iter().map(|i| i.elite.clone()).collect();
            for k in 0..cfg.islands {
                let from = (k + cfg.islands - 1) % cfg.islands;
                let copied = snapshot[from].iter().filter(|m| islands[k].admit((*m).clone())).map(|m| m.id.clone()).collect();
                islands[k].update_elite(cfg.elite_size);
                migrations.push(Migration { round, from, to: k, copied });
            }
        }
        for (r, isl) in reports.iter_mut().zip(&islands) {
            r.population = isl.population.len();
            r.elite = isl.elite.iter().map(|m| m.id.clone()).collect();
            r.best_latency_us = isl.best_latency();
        }

        let best = islands.iter().flat_map(|i| i.elite.first()).min_by(|a, b| by_latency(a, b)).cloned();
        trace.rounds.push(RoundReport { round, islands: reports, migrations, best_latency_us: best.as_ref().map(|m| m.latency_us) });
        if let (Some(t), Some(s)) = (cfg.target_speedup, best.as_ref().and_then(Member::speedup)) {
            if s >= t {
                trace.stop = Some(StopReason::TargetReached);
            }
        }
        if let (Some(prev), Some(cur)) = (previous_best, best.as_ref().map(|m| m.latency_us)) {
            flat_rounds = if (prev - cur) / prev < cfg.plateau_delta { flat_rounds + 1 } else { 0 };
            if flat_rounds >= 2 && trace.stop.is_none() {
                trace.stop = Some(StopReason::Plateau);
            }
        }
        previous_best = best.as_ref().map(|m| m.latency_us).or(previous_best);
        trace.best = best;
        if trace.stop.is_some() {
            break;
        }
    }
    trace.stop.get_or_insert(StopReason::RoundsExhausted);

    let write_trace = |trace: &EvolveTrace| -> std::io::Result<()> {
        let dir = pipeline.work_dir.join(sanitize(&task.name)).join(format!("{}evolve", pipeline.candidate_prefix));
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("trace.json"), trace.to_json())
    };
    let Some(best) = trace.best.clone() else {
        write_trace(&trace)?;
        return Err(EvolveError::EvolveFailed { trace: Box::new(trace) });
    };

    if let Some(db) = ctx.db {
        let mut originals: Vec<&Member> = islands.iter().flat_map(|i| i.population.iter().filter(|m| m.origin == i.id)).collect();
        originals.sort_by(|a, b| (a.round, a.origin, a.slot).cmp(&(b.round, b.origin, b.slot)));
        for m in originals {
            let perf = Some(PerfRecord { latency_us: m.latency_us, baseline_us: m.baseline_us });
            let mut rec = make_record(task, ctx.embedder, pipeline.dsl.as_str(), ctx.backend.id(), &m.source, &m.sketch, perf);
            rec.analysis = m.plan.clone();
            if db.contains(&rec.id) {
                continue;
            }
            trace.db_ids.push(db.insert(rec)?);
        }
    }
    write_trace(&trace)?;
    Ok(EvolveResult { best, trace, islands })
}

#[cfg(test)]
mod tests;
