use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::agents::{Rule, ScriptedProvider};
use crate::bench::{builtin_suite, builtin_task};

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    normalize((0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn synthetic(i: usize, rng: &mut ChaCha8Rng, dsl: &str, backend: &str) -> DbRecord {
    DbRecord {
        id: format!("r{i:04}"),
        features: String::new(),
        logic_embedding: unit(rng, 8),
        shape_embedding: unit(rng, 8),
        dsl: dsl.into(),
        backend: backend.into(),
        op_type: "elementwise".into(),
        shape_info: String::new(),
        code: String::new(),
        sketch: String::new(),
        perf: None,
        analysis: String::new(),
    }
}

#[test]
fn features_from_manifest() {
    let t = builtin_task("rms_norm").unwrap();
    let f = extract_features(&t, None).unwrap();
    assert!(f.contains("op_type=normalization") && f.contains("rank=4"), "{f}");
    let p = ScriptedProvider::from_rules(vec![Rule::new(&["key=value"], &["  canned features \n"])]);
    assert_eq!(extract_features(&t, Some(&p)).unwrap(), "  canned features \n");
    let mut empty = t.clone();
    empty.name.clear();
    empty.reference.clear();
    assert!(matches!(extract_features(&empty, None), Err(RetrievalError::EmptyTask)));
}

#[test]
fn exact_match_scores_one() {
    let e = HashEmbedder::default();
    let db = KernelDb::in_memory();
    for t in builtin_suite() {
        db.insert(make_record(&t, &e, "sketch", "interp", "", &t.reference, None)).unwrap();
    }
    let q = builtin_task("gemm").unwrap();
    let got = retrieve(&q, &db, "interp", "sketch", &RetrievalConfig { k: 9, ..Default::default() }, &e, None).unwrap();
    let own = got.iter().find(|r| r.record.id.starts_with("matmul-")).unwrap();
    assert!((own.logic_score - 1.0).abs() < 1e-12 && (own.shape_score - 1.0).abs() < 1e-12);

    let single = KernelDb::in_memory();
    single.insert(make_record(&q, &e, "sketch", "interp", "", &q.reference, None)).unwrap();
    let got = retrieve(&q, &single, "interp", "sketch", &RetrievalConfig::default(), &e, None).unwrap();
    assert_eq!(got.len(), 1);
    assert!((got[0].logic_score - 1.0).abs() < 1e-12 && (got[0].shape_score - 1.0).abs() < 1e-12);

    let none = retrieve(&q, &db, "interp", "c", &RetrievalConfig::default(), &e, None).unwrap();
    assert!(none.is_empty());
    assert!(matches!(retrieve(&q, &db, "interp", "sketch", &RetrievalConfig { k: 0, ..Default::default() }, &e, None), Err(RetrievalError::ZeroK)));
}

/// Independent ranking: every pair scored, then filtered and sorted.
fn brute_force(logic: &[f64], shape: &[f64], recs: &[DbRecord], dsl: &str, backend: &str, k: usize, tau: f64) -> Vec<String> {
    let cos = |a: &[f64], b: &[f64]| {
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for i in 0..a.len() {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        dot / (na.sqrt() * nb.sqrt())
    };
    let mut v: Vec<(f64, String)> = recs
        .iter()
        .filter(|r| cos(logic, &r.logic_embedding) > tau && r.dsl == dsl && r.backend == backend)
        .map(|r| (cos(shape, &r.shape_embedding), r.id.clone()))
        .collect();
    v.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    v.into_iter().take(k).map(|x| x.1).collect()
}

#[test]
fn ranking_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let recs: Vec<_> = (0..10).map(|i| synthetic(i, &mut rng, if i % 3 == 0 { "c" } else { "sketch" }, "interp")).collect();
    for _ in 0..20 {
        let (l, s) = (unit(&mut rng, 8), unit(&mut rng, 8));
        let (got, stages) = retrieve_vectors(&l, &s, &recs, "interp", "sketch", 4, 0.0);
        let ids: Vec<_> = got.iter().map(|r| r.record.id.clone()).collect();
        assert_eq!(ids, brute_force(&l, &s, &recs, "sketch", "interp", 4, 0.0));
        assert!(stages.filtered.len() <= stages.similar.len());
        assert!(got.iter().all(|r| r.record.dsl == "sketch"));
        let (more, _) = retrieve_vectors(&l, &s, &recs, "interp", "sketch", 8, 0.0);
        assert_eq!(&more.iter().map(|r| r.record.id.clone()).collect::<Vec<_>>()[..ids.len()], &ids[..]);
    }
}

#[test]
fn ties_break_by_id() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut a = synthetic(2, &mut rng, "c", "x");
    let mut b = a.clone();
    b.id = "r0001".into();
    a.id = "r0002".into();
    let (got, _) = retrieve_vectors(&a.logic_embedding.clone(), &a.shape_embedding.clone(), &[a, b], "x", "c", 2, 0.3);
    assert_eq!(got.iter().map(|r| r.record.id.as_str()).collect::<Vec<_>>(), ["r0001", "r0002"]);
}

#[test]
fn db_persists_and_filters() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k.kdb");
    let e = HashEmbedder::default();
    let t = builtin_task("add").unwrap();
    {
        let db = KernelDb::open(&path).unwrap();
        let id = db.insert(make_record(&t, &e, "c", "c_cpu", "int x;", &t.reference, Some(PerfRecord { latency_us: 2.0, baseline_us: None }))).unwrap();
        db.insert(make_record(&t, &e, "sketch", "interp", "", &t.reference, None)).unwrap();
        assert_eq!(db.scan(&ScanFilter::default()).iter().filter(|r| r.id == id).count(), 1);
    }
    let db = KernelDb::open(&path).unwrap();
    assert_eq!(db.len(), 2);
    let only_c = db.scan(&ScanFilter { dsl: Some("c".into()), ..Default::default() });
    assert_eq!(only_c.len(), 1);
    assert_eq!(only_c[0].perf.as_ref().unwrap().latency_us, 2.0);

    let mut bad = make_record(&t, &e, "", "interp", "", "", None);
    assert!(matches!(db.insert(bad.clone()), Err(StorageError::Invalid { .. })));
    bad.dsl = "c".into();
    bad.shape_embedding = vec![1.0; 256];
    assert!(db.insert(bad).is_err());
}

#[test]
fn partial_trailing_line_is_ignored() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k.kdb");
    let e = HashEmbedder::default();
    let t = builtin_task("add").unwrap();
    let db = KernelDb::open(&path).unwrap();
    db.insert(make_record(&t, &e, "c", "c_cpu", "", "", None)).unwrap();
    use std::io::Write;
    std::fs::OpenOptions::new().append(true).open(&path).unwrap().write_all(b"{\"id\": \"half").unwrap();
    assert_eq!(KernelDb::open(&path).unwrap().len(), 1);
    std::fs::write(&path, "garbage\n").unwrap();
    assert!(matches!(KernelDb::open(&path), Err(StorageError::Corrupt { line: 1, .. })));
}

#[test]
fn concurrent_writers_do_not_tear() {
    let dir = tempfile::tempdir().unwrap();
    let path = Arc::new(dir.path().join("k.kdb"));
    let handles: Vec<_> = (0..4)
        .map(|w| {
            let path = path.clone();
            std::thread::spawn(move || {
                let db = KernelDb::open(&path).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(w);
                for i in 0..100 {
                    let mut r = synthetic(i, &mut rng, "c", "c_cpu");
                    r.id = format!("w{w}-{i}");
                    r.code = "x".repeat(2000);
                    db.insert(r).unwrap();
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let db = KernelDb::open(&path).unwrap();
    assert_eq!(db.len(), 400);
    let ids: std::collections::BTreeSet<_> = db.scan(&ScanFilter::default()).into_iter().map(|r| r.id).collect();
    assert_eq!(ids.len(), 400);
}
