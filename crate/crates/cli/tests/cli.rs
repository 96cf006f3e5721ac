use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kagent_core::bench::builtin_task;
use kagent_core::retrieval::{make_record, EmbeddingProvider, HashEmbedder, KernelDb};

fn kagent(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kagent")).current_dir(dir).arg("--no-timestamps").args(args).output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn core_fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(rel)
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("kagent.toml"), "work_dir = \"work\"\n[verify]\nrepetitions = 2\nwarmup = 0\n").unwrap();
    dir
}

#[test]
fn verify_accepts_a_correct_c_kernel() {
    let dir = workspace();
    let k = core_fixture("kernels/add.c");
    let out = kagent(dir.path(), &["--config", "kagent.toml", "--backend", "c_cpu", "verify", k.to_str().unwrap(), "--task", "add"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("status: Pass") && stdout.contains("instances: 6/6"), "{stdout}");
}

#[test]
fn verify_reports_compiler_errors() {
    let dir = workspace();
    let k = core_fixture("kernels/add_syntax.c");
    let out = kagent(dir.path(), &["--config", "kagent.toml", "--backend", "c_cpu", "verify", k.to_str().unwrap(), "--task", "add"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stdout).contains("status: CompileFail"));
    assert!(text(&out.stderr).contains("error"), "{}", text(&out.stderr));
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn retrieve_matches_a_brute_force_ranking() {
    let dir = workspace();
    let db_path = dir.path().join("kernels.kdb");
    let e = HashEmbedder::default();
    let db = KernelDb::open(&db_path).unwrap();
    let mut recs = Vec::new();
    for (name, backend) in [("add", "interp"), ("silu_mul", "interp"), ("relu", "interp"), ("add", "c_cpu")] {
        let t = builtin_task(name).unwrap();
        let r = make_record(&t, &e, "sketch", backend, &t.reference, &t.reference, None);
        db.insert(r.clone()).unwrap();
        recs.push(r);
    }
    drop(db);

    let q = builtin_task("add").unwrap();
    let (logic, shape) = (e.embed(&q.features()), e.embed(&q.shape_text()));
    let mut want: Vec<(f64, String)> = recs
        .iter()
        .filter(|r| r.backend == "interp" && cosine(&logic, &r.logic_embedding) > 0.3)
        .map(|r| (cosine(&shape, &r.shape_embedding), r.id.clone()))
        .collect();
    want.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    want.truncate(3);
    assert!(!want.is_empty());

    let out = kagent(dir.path(), &["retrieve", "add", "--db", "kernels.kdb", "--k", "3"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let got: Vec<String> = text(&out.stdout).lines().map(|l| l.split('\t').next().unwrap().to_string()).collect();
    assert_eq!(got, want.iter().map(|w| w.1.clone()).collect::<Vec<_>>());
}

#[test]
fn bench_writes_a_report() {
    let dir = workspace();
    let out = kagent(dir.path(), &["--config", "kagent.toml", "bench", "--k", "4", "--out", "report.json"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("pass@4: 1.0000"), "{stdout}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["mode"], "dynamic");
    assert_eq!(report["records"].as_array().unwrap().len(), 9 * 4);
}

#[test]
fn dry_run_prints_the_designer_prompt() {
    let dir = workspace();
    let out = kagent(dir.path(), &["generate", "add", "--dry-run"]);
    assert!(out.status.success());
    let stdout = text(&out.stdout);
    assert!(stdout.contains("# Designer") && stdout.contains("operator: add\n"), "{stdout}");
    assert!(!dir.path().join("kagent-work").exists());
}

#[test]
fn missing_docset_is_an_error() {
    let dir = workspace();
    std::fs::write(dir.path().join("bad.toml"), "docset = \"no/such/docs\"\n").unwrap();
    let out = kagent(dir.path(), &["--config", "bad.toml", "generate", "add"]);
    assert_eq!(out.status.code(), Some(1));
    let err = text(&out.stderr);
    assert!(err.starts_with("error: loading docset") && err.contains("missing categories"), "{err}");
}

#[test]
fn nested_docset_root_is_resolved() {
    let dir = workspace();
    let root = core_fixture("docspec");
    std::fs::write(dir.path().join("docs.toml"), format!("docset = {:?}\nwork_dir = \"work\"\n", root.to_str().unwrap())).unwrap();
    let out = kagent(dir.path(), &["--config", "docs.toml", "generate", "add", "--dry-run"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
}

#[test]
fn scripted_generate_fixes_the_coder_error() {
    let dir = workspace();
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/add_fix.toml");
    let cfg = format!("work_dir = \"${{KAGENT_TEST_WORK}}\"\n[provider]\nkind = \"scripted\"\ntranscript = {:?}\n", script.to_str().unwrap());
    std::fs::write(dir.path().join("s.toml"), cfg).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_kagent"))
        .current_dir(dir.path())
        .env("KAGENT_TEST_WORK", "scripted")
        .args(["--config", "s.toml", "generate", "add"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", text(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["status"], "Pass");
    assert_eq!(summary["iterations"], 2);
    assert!(dir.path().join("scripted/add/pipeline/history.json").exists());
    // Unset variables are rejected rather than left empty.
    let out = kagent(dir.path(), &["--config", "s.toml", "generate", "add"]);
    assert!(text(&out.stderr).contains("KAGENT_TEST_WORK"));
}

#[test]
fn unknown_task_is_an_error() {
    let out = kagent(&std::env::temp_dir(), &["generate", "no_such_op", "--dry-run"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("no_such_op"));
}
