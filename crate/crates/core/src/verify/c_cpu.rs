//! C on the host CPU, compiled with the system C compiler.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use wait_timeout::ChildExt;

use super::backend::{BackendAdapter, BackendFailure, Runner};
use super::report::{Dsl, KernelCandidate};
use crate::interp::ten::{read_ten, write_ten};
use crate::interp::{bind_shapes, Binding, Tensor};
use crate::sketch::{Number, Sketch};
use crate::task::OperatorSpec;

pub const RUNTIME_PRELUDE: &str = include_str!("../../templates/c_runtime.h");
pub const HARNESS: &str = include_str!("../../templates/c_harness.c");

#[derive(Debug)]
pub struct CCpuBackend {
    pub compiler: String,
    pub flags: Vec<String>,
    /// Build with AddressSanitizer so out-of-bounds accesses fail loudly.
    pub sanitize: bool,
    pub compile_timeout: Duration,
    pub run_timeout: Duration,
    lease: Mutex<()>,
}

impl Default for CCpuBackend {
    fn default() -> CCpuBackend {
        CCpuBackend {
            compiler: "cc".into(),
            flags: vec!["-O2".into(), "-std=c11".into(), "-D_POSIX_C_SOURCE=199309L".into()],
            sanitize: false,
            compile_timeout: Duration::from_secs(30),
            run_timeout: Duration::from_secs(10),
            lease: Mutex::new(()),
        }
    }
}

impl CCpuBackend {
    pub fn new() -> CCpuBackend {
        CCpuBackend::default()
    }

    pub fn sanitized() -> CCpuBackend {
        CCpuBackend { sanitize: true, ..CCpuBackend::default() }
    }

    /// True when the configured compiler can be executed.
    pub fn available(&self) -> bool {
        Command::new(&self.compiler).arg("--version").stdout(Stdio::null()).stderr(Stdio::null()).status().is_ok_and(|s| s.success())
    }
}

/// Result of a child process run under a wall-clock limit.
struct Finished {
    code: Option<i32>,
    stdout: String,
    stderr: String,
}

fn run_limited(mut cmd: Command, limit: Duration) -> Result<Finished, BackendFailure> {
    cmd.stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped());
    let mut child = cmd.spawn().map_err(|e| BackendFailure::runtime(format!("cannot spawn {:?}: {e}", cmd.get_program())))?;
    // Drain pipes on threads so a chatty child cannot block on a full pipe.
    let mut out = child.stdout.take().unwrap();
    let mut err = child.stderr.take().unwrap();
    let t_out = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = out.read_to_string(&mut s);
        s
    });
    let t_err = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = err.read_to_string(&mut s);
        s
    });
    let status = child.wait_timeout(limit).map_err(|e| BackendFailure::runtime(e.to_string()))?;
    let Some(status) = status else {
        let _ = child.kill();
        let _ = child.wait();
        let stderr = t_err.join().unwrap_or_default();
        return Err(BackendFailure::timeout(format!("exceeded wall-clock limit of {:?}\n{stderr}", limit)));
    };
    Ok(Finished { code: status.code(), stdout: t_out.join().unwrap_or_default(), stderr: t_err.join().unwrap_or_default() })
}

/// Sources that open files on their own could read anything in the work
/// tree; all I/O must go through the runtime's `ten_load`/`ten_save`.
fn reject_shortcuts(source: &str) -> Option<String> {
    ["fopen", "freopen", "open", "popen", "system", "execv", "execl"]
        .into_iter()
        .find(|f| calls(source, f))
        .map(|f| format!("kernel source calls `{f}` directly; use ten_load/ten_save on the paths in argv"))
}

/// True when `name` appears as a whole identifier followed by `(`.
fn calls(source: &str, name: &str) -> bool {
    let bytes = source.as_bytes();
    let ident = |c: u8| c.is_ascii_alphanumeric() || c == b'_';
    source.match_indices(name).any(|(i, _)| {
        if i > 0 && ident(bytes[i - 1]) {
            return false;
        }
        let rest = source[i + name.len()..].trim_start();
        rest.starts_with('(')
    })
}

impl BackendAdapter for CCpuBackend {
    fn id(&self) -> &str {
        "c_cpu"
    }

    fn compile(&self, cand: &KernelCandidate, task: &OperatorSpec, workdir: &Path) -> Result<Box<dyn Runner>, BackendFailure> {
        if cand.dsl != Dsl::C {
            return Err(BackendFailure::compile(format!("c_cpu backend cannot build `{}` sources", cand.dsl)));
        }
        if let Some(msg) = reject_shortcuts(&cand.source) {
            return Err(BackendFailure::compile(msg));
        }
        let reference = task.reference_sketch().map_err(|e| BackendFailure::compile(e.to_string()))?;
        for sub in ["src", "bin", "io", "logs"] {
            fs::create_dir_all(workdir.join(sub)).map_err(|e| BackendFailure::compile(format!("work dir: {e}")))?;
        }
        let src = workdir.join("src/kernel.c");
        let full = format!("{RUNTIME_PRELUDE}#line 1 \"kernel.c\"\n{}\n{HARNESS}", cand.source);
        fs::write(&src, full).map_err(|e| BackendFailure::compile(e.to_string()))?;
        let bin = workdir.join("bin/kernel");
        let mut cmd = Command::new(&self.compiler);
        cmd.args(&self.flags);
        if self.sanitize {
            cmd.args(["-fsanitize=address", "-fno-omit-frame-pointer", "-g"]);
        }
        cmd.arg("-o").arg(&bin).arg(&src).arg("-lm");
        let done = run_limited(cmd, self.compile_timeout).map_err(|mut f| {
            f.kind = match f.kind {
                super::backend::FailureKind::Timeout => super::backend::FailureKind::Timeout,
                _ => super::backend::FailureKind::Compile,
            };
            f
        })?;
        let _ = fs::write(workdir.join("logs/compile.log"), &done.stderr);
        if done.code != Some(0) {
            return Err(BackendFailure::compile(done.stderr));
        }
        let outputs = reference.output_tensors().iter().map(|t| t.name.clone()).collect();
        Ok(Box::new(CRunner {
            bin,
            io: workdir.join("io"),
            logs: workdir.join("logs"),
            reference,
            outputs,
            run_timeout: self.run_timeout,
            sanitize: self.sanitize,
            counter: AtomicU64::new(0),
        }))
    }

    fn profile_lease(&self) -> &Mutex<()> {
        &self.lease
    }
}

struct CRunner {
    bin: PathBuf,
    io: PathBuf,
    logs: PathBuf,
    reference: Sketch,
    outputs: Vec<String>,
    run_timeout: Duration,
    sanitize: bool,
    counter: AtomicU64,
}

impl CRunner {
    fn execute(&self, b: &Binding, profile: Option<(usize, usize)>) -> Result<(BTreeMap<String, Tensor>, String), BackendFailure> {
        let rs = bind_shapes(&self.reference, b).map_err(|e| BackendFailure::runtime(e.to_string()))?;
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let dir = self.io.join(format!("run{n:04}"));
        fs::create_dir_all(&dir).map_err(|e| BackendFailure::runtime(e.to_string()))?;
        let mut cmd = Command::new(&self.bin);
        for t in &self.reference.decls.tensors {
            let path = dir.join(format!("{}.ten", t.name));
            let value = match b.tensor_values.get(&t.name) {
                Some(v) => v.clone(),
                None => Tensor::zeros(t.dtype, rs.shapes[&t.name].clone()),
            };
            write_ten(&path, &value).map_err(|e| BackendFailure::runtime(e.to_string()))?;
            cmd.arg(&path);
        }
        for s in &self.reference.decls.symbols {
            cmd.arg(format!("{s}={}", b.symbol_values[s]));
        }
        for c in &self.reference.decls.constexpr {
            let v = b.constexpr_values.get(&c.name).copied().or(c.default);
            match v {
                Some(Number::Int(i)) => cmd.arg(format!("{}={i}", c.name)),
                Some(Number::Float(x)) => cmd.arg(format!("{}={x:?}", c.name)),
                None => &mut cmd,
            };
        }
        if let Some((w, r)) = profile {
            cmd.env("KAGENT_PROFILE", format!("{w},{r}"));
        }
        if self.sanitize {
            cmd.env("ASAN_OPTIONS", "detect_leaks=0");
        }
        let done = run_limited(cmd, self.run_timeout)?;
        let _ = fs::write(self.logs.join(format!("run{n:04}.log")), format!("{}{}", done.stdout, done.stderr));
        if done.code != Some(0) {
            let code = done.code.map_or("signal".to_string(), |c| c.to_string());
            return Err(BackendFailure::runtime(format!("exit status {code}\n{}", done.stderr)));
        }
        let mut outs = BTreeMap::new();
        for name in &self.outputs {
            let t = read_ten(&dir.join(format!("{name}.ten"))).map_err(|e| BackendFailure::runtime(e.to_string()))?;
            outs.insert(name.clone(), t);
        }
        Ok((outs, done.stdout))
    }
}

impl Runner for CRunner {
    fn run(&self, b: &Binding) -> Result<BTreeMap<String, Tensor>, BackendFailure> {
        self.execute(b, None).map(|(o, _)| o)
    }

    fn profile(&self, b: &Binding, warmup: usize, reps: usize) -> Result<Vec<f64>, BackendFailure> {
        let (_, stdout) = self.execute(b, Some((warmup, reps)))?;
        let samples: Vec<f64> = stdout
            .lines()
            .filter_map(|l| l.strip_prefix("latency_us ").and_then(|v| v.trim().parse().ok()))
            .collect();
        if samples.len() != reps {
            return Err(BackendFailure::runtime(format!("expected {reps} latency samples, got {}", samples.len())));
        }
        Ok(samples)
    }
}
