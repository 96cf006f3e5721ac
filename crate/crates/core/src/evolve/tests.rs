use std::sync::Arc;

use super::*;
use crate::agents::{RecordingProvider, Rule, ScriptedProvider};
use crate::bench::builtin_task;
use crate::knowledge::DocSet;
use crate::retrieval::{HashEmbedder, KernelDb, ScanFilter};
use crate::verify::{Dsl, InterpBackend};

const RELU_SCRIPT: &str = include_str!("../../fixtures/scripts/evolve_relu.toml");

fn member(id: &str, latency: f64, sketch: &str) -> Member {
    Member {
        id: id.into(),
        round: 1,
        origin: 0,
        slot: 0,
        sketch: sketch.into(),
        source: String::new(),
        latency_us: latency,
        baseline_us: Some(1.0),
        plan: String::new(),
    }
}

#[test]
fn sampling_strata() {
    assert!(stratified_sample(&[], 1).is_empty());
    let pop: Vec<Member> = (1..=8).rev().map(|i| member(&format!("m{i}"), i as f64, "")).collect();
    for seed in 0..20 {
        let p = stratified_sample(&pop, seed);
        let mut top: Vec<_> = p.top.iter().map(|m| m.id.as_str()).collect();
        let mut bottom: Vec<_> = p.bottom.iter().map(|m| m.id.as_str()).collect();
        top.sort();
        bottom.sort();
        assert_eq!((top, bottom), (vec!["m1", "m2"], vec!["m7", "m8"]));
    }
    let one = stratified_sample(&pop[..1], 3);
    assert_eq!(one.ids(), ["m8"]);
    let twelve: Vec<Member> = (1..=12).map(|i| member(&format!("m{i:02}"), i as f64, "")).collect();
    let p = stratified_sample(&twelve, 9);
    assert!(p.top.len() == 2 && p.top.iter().all(|m| m.latency_us <= 3.0));
    assert!(p.bottom.len() == 2 && p.bottom.iter().all(|m| m.latency_us >= 10.0));
    assert_eq!(stratified_sample(&twelve, 9), p);
}

const TILED: &str = "sketch t {
  symbols: N;
  tensors: X[N]: f32; Y[N]: f32;
  constexpr: TILE_SIZE = 8;
  for i in range(ceil(N, TILE_SIZE)):
    b = alloc([TILE_SIZE])
    load(X[i * TILE_SIZE:(i + 1) * TILE_SIZE] -> b)
    store(b -> Y[i * TILE_SIZE:(i + 1) * TILE_SIZE])
}
";

#[test]
fn fallback_plan_names_the_differing_constant() {
    let fast = member("fast", 1.0, TILED);
    let slow = member("slow", 2.0, &TILED.replace("TILE_SIZE = 8", "TILE_SIZE = 4"));
    let plan = comparative_analysis(&[fast.clone()], &[slow], None).unwrap();
    assert!(plan.contains("- constexpr TILE_SIZE: 8 in faster, 4 in slower"), "{plan}");
    assert!(!plan.contains("hint "));
    assert_eq!(comparative_analysis(&[fast], &[], None).unwrap(), BOOTSTRAP_PLAN);
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

    fn run(&self, p: &dyn ChatProvider, cfg: &EvolveConfig) -> Result<EvolveResult, EvolveError> {
        let pc = PipelineConfig { max_iterations: 2, dsl: Dsl::Sketch, work_dir: self.dir.path().into(), use_retrieval: false, ..PipelineConfig::default() };
        let ctx = PipelineContext { provider: p, backend: &self.backend, docset: &self.docs, db: Some(&self.db), embedder: &self.embedder };
        run_evolve(&builtin_task("relu").unwrap(), cfg, &pc, &ctx)
    }
}

fn script() -> ScriptedProvider {
    ScriptedProvider::from_rules(ScriptedProvider::rules_from_toml(RELU_SCRIPT).unwrap())
}

#[test]
fn monotone_variants_single_island() {
    let cfg = EvolveConfig { islands: 1, parallel: 2, rounds: 3, ..EvolveConfig::default() };
    let h = Harness::new();
    let r = h.run(&script(), &cfg).unwrap();
    let best: Vec<f64> = r.trace.rounds.iter().map(|x| x.best_latency_us.unwrap()).collect();
    assert_eq!(best.len(), 3);
    assert!(best[0] > best[1] && best[1] > best[2], "{best:?}");
    assert!(r.best.sketch.contains("sketch relu_v3"));
    assert_eq!(r.trace.stop, Some(StopReason::RoundsExhausted));
    assert!(r.islands[0].population.len() == 6 && r.islands[0].elite.len() == 2);
    // Duplicates of one design collapse to a single record.
    assert_eq!(h.db.len(), 3);
    assert!(h.db.scan(&ScanFilter::default()).iter().all(|rec| !rec.analysis.is_empty()));
    assert!(h.dir.path().join("relu/evolve/trace.json").exists());
}

#[test]
fn elites_migrate_along_the_ring() {
    let mut rules = ScriptedProvider::rules_from_toml(RELU_SCRIPT).unwrap();
    // Island 0 finds the parallel design in round 1, island 1 the plain one.
    let v2 = rules.iter().find(|r| r.when.iter().any(|w| w.contains("round 2"))).unwrap().replies.clone();
    rules.insert(0, Rule { when: vec!["# Designer".into(), "search round 1 of 3, island 0".into()], replies: v2 });
    let cfg = EvolveConfig { islands: 2, parallel: 1, rounds: 3, migration_interval: 1, llm_analysis: false, ..EvolveConfig::default() };
    let r = Harness::new().run(&ScriptedProvider::from_rules(rules), &cfg).unwrap();
    let r1 = &r.trace.rounds[0];
    let elite0 = vec!["r1-k0-p0-relu-i1".to_string()];
    assert_eq!(r1.migrations.len(), 2);
    let to1 = r1.migrations.iter().find(|m| m.to == 1).unwrap();
    assert_eq!((to1.from, &to1.copied), (0, &elite0));
    assert_eq!(r1.islands[1].elite[0], elite0[0]);
    // Island 0 lost nothing by sending its elite.
    assert_eq!(r1.islands[0].population, 2);
    assert!(r.islands[1].population.iter().any(|m| m.id == elite0[0] && m.origin == 0));
    for (i, round) in r.trace.rounds.iter().enumerate() {
        assert_eq!(round.round, i as u32 + 1);
        assert!(!round.migrations.is_empty());
    }
}

#[test]
fn migration_only_on_multiples_of_the_interval() {
    let cfg = EvolveConfig { islands: 2, parallel: 1, rounds: 3, migration_interval: 2, llm_analysis: false, ..EvolveConfig::default() };
    let r = Harness::new().run(&script(), &cfg).unwrap();
    let rounds_with: Vec<u32> = r.trace.rounds.iter().filter(|x| !x.migrations.is_empty()).map(|x| x.round).collect();
    assert_eq!(rounds_with, [2]);
}

#[test]
fn best_latency_never_increases_per_island() {
    let cfg = EvolveConfig { islands: 2, parallel: 2, rounds: 3, migration_interval: 1, ..EvolveConfig::default() };
    let r = Harness::new().run(&script(), &cfg).unwrap();
    for k in 0..2 {
        let xs: Vec<f64> = r.trace.rounds.iter().map(|x| x.islands[k].best_latency_us.unwrap()).collect();
        assert!(xs.windows(2).all(|w| w[1] <= w[0]), "{xs:?}");
    }
}

#[test]
fn target_met_in_round_one_stops() {
    let mut rules = ScriptedProvider::rules_from_toml(RELU_SCRIPT).unwrap();
    let v3 = rules.iter().find(|r| r.when.iter().any(|w| w.contains("round 3"))).unwrap().replies.clone();
    rules.insert(0, Rule { when: vec!["# Designer".into()], replies: v3 });
    let cfg = EvolveConfig { islands: 1, parallel: 1, rounds: 3, target_speedup: Some(1.0), ..EvolveConfig::default() };
    let r = Harness::new().run(&ScriptedProvider::from_rules(rules), &cfg).unwrap();
    assert_eq!(r.trace.rounds.len(), 1);
    assert_eq!(r.trace.stop, Some(StopReason::TargetReached));
    assert!(r.best.speedup().unwrap() >= 1.0);
}

#[test]
fn flat_rounds_stop_the_search() {
    let rules = vec![Rule::new(&["# Designer"], &[&ScriptedProvider::rules_from_toml(RELU_SCRIPT).unwrap()[2].replies[0]])];
    let mut all = rules;
    all.extend(ScriptedProvider::rules_from_toml(RELU_SCRIPT).unwrap());
    let cfg = EvolveConfig { islands: 1, parallel: 1, rounds: 6, ..EvolveConfig::default() };
    let r = Harness::new().run(&ScriptedProvider::from_rules(all), &cfg).unwrap();
    assert_eq!(r.trace.stop, Some(StopReason::Plateau));
    assert_eq!(r.trace.rounds.len(), 3);
}

#[test]
fn trace_is_byte_reproducible() {
    let cfg = EvolveConfig { islands: 2, parallel: 2, rounds: 3, migration_interval: 1, seed: 11, ..EvolveConfig::default() };
    let a = Harness::new().run(&script(), &cfg).unwrap().trace.to_json();
    let b = Harness::new().run(&script(), &cfg).unwrap().trace.to_json();
    assert_eq!(a, b);
    let seq = EvolveConfig { mode: ExecMode::Sequential, ..cfg };
    let c = Harness::new().run(&script(), &seq).unwrap().trace;
    assert_eq!(serde_json::from_str::<EvolveTrace>(&a).unwrap().rounds, c.rounds);
}

#[test]
fn plan_reaches_the_designer() {
    let rec = RecordingProvider::new(Arc::new(script()));
    // Two slots give round 2 a member in each stratum.
    let cfg = EvolveConfig { islands: 1, parallel: 2, rounds: 2, ..EvolveConfig::default() };
    Harness::new().run(&rec, &cfg).unwrap();
    let t = rec.transcript();
    let designer_round2: Vec<_> = t
        .entries
        .iter()
        .filter(|e| e.request.messages[0].content.starts_with("# Designer") && e.request.text().contains("search round 2 of"))
        .collect();
    assert!(!designer_round2.is_empty());
    for e in &designer_round2 {
        let user = &e.request.messages[1].content;
        assert!(user.contains("## INSPIRATION\nsearch round 2 of 2, island 0, slot "), "{user}");
        assert!(user.contains("\nPlan: the faster designs parallelize rows"), "{user}");
    }
    let seeds: std::collections::BTreeSet<_> = t.entries.iter().filter_map(|e| e.request.seed).collect();
    assert!(seeds.len() >= 4);
}

#[test]
fn nothing_valid_is_a_failure() {
    let p = ScriptedProvider::from_rules(vec![Rule::new(&["# Designer"], &["```usk\nsketch x {\n  symbols: M;\n  tensors: Y[M]: f32;\n  a = alloc([M])\n  store(a -> Y[0:M])\n}\n```"]), Rule::new(&["# Coder"], &["nothing"])]);
    let cfg = EvolveConfig { islands: 1, parallel: 1, rounds: 2, ..EvolveConfig::default() };
    match Harness::new().run(&p, &cfg) {
        Err(EvolveError::EvolveFailed { trace }) => assert_eq!(trace.rounds.len(), 2),
        other => panic!("{other:?}"),
    }
    assert!(matches!(Harness::new().run(&p, &EvolveConfig { rounds: 0, ..cfg }), Err(EvolveError::InvalidConfig(_))));
}
