mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use kagent_core::agents::{build_provider, design_prompt, ChatProvider, DesignRequest, LimitedProvider, ProviderKind, Sampling, ScriptedProvider};
use kagent_core::bench::{builtin_suite, builtin_task, reference_rules, run_suite, Generator, SuiteConfig, SuiteMode};
use kagent_core::conductor::{run_pipeline, PipelineConfig, PipelineContext, PipelineError};
use kagent_core::evolve::run_evolve;
use kagent_core::knowledge::{assemble_context, format_docs, load_docset, ContextInputs, DocSet, Stage};
use kagent_core::retrieval::{retrieve, HashEmbedder, KernelDb};
use kagent_core::task::{load_dir, OperatorSpec};
use kagent_core::verify::{backend_by_id, verify_kernel, BackendAdapter, Dsl, KernelCandidate};

use config::Config;

/// `println!` that reports a closed stdout as an error instead of panicking.
macro_rules! out {
    ($($t:tt)*) => {
        writeln!(std::io::stdout(), $($t)*)?
    };
}

#[derive(Parser)]
#[command(name = "kagent", version, about = "Generate, verify, search and benchmark tensor kernels")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long, global = true, value_enum)]
    dsl: Option<DslArg>,
    /// Leave timestamps out of log lines.
    #[arg(long, global = true)]
    no_timestamps: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Interp,
    #[value(name = "c_cpu")]
    CCpu,
}

#[derive(Clone, Copy, ValueEnum)]
enum DslArg {
    C,
    Sketch,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Static,
    Dynamic,
}

#[derive(Subcommand)]
enum Command {
    /// Run the agent pipeline on one task.
    Generate {
        /// Task manifest path or builtin task name.
        task: String,
        /// Print the first Designer prompt and stop.
        #[arg(long)]
        dry_run: bool,
    },
    /// Island-model search for a faster kernel.
    Evolve {
        task: String,
        #[arg(long)]
        rounds: Option<u32>,
        #[arg(long)]
        parallel: Option<usize>,
        #[arg(long)]
        islands: Option<usize>,
    },
    /// Check one kernel file against a task.
    Verify {
        /// Kernel source; `.c` or `.usk`.
        kernel: PathBuf,
        #[arg(long)]
        task: String,
    },
    /// Score the generator over a task suite.
    Bench {
        /// Directory of task manifests; the builtin suite when omitted.
        #[arg(long)]
        tasks: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "dynamic")]
        mode: ModeArg,
        /// Samples per task.
        #[arg(long, default_value_t = 4)]
        k: u64,
        /// Use the island search instead of the plain pipeline.
        #[arg(long)]
        evolve: bool,
        #[arg(long, default_value = "bench_report.json")]
        out: PathBuf,
    },
    /// Show the stored kernels closest to a task.
    Retrieve {
        task: String,
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        k: Option<usize>,
    },
    /// File loose documentation into the docset layout.
    DocsFormat { raw: PathBuf, out: PathBuf },
}

struct Log {
    timestamps: bool,
}

impl Log {
    fn line(&self, msg: &str) {
        if self.timestamps {
            let t = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
            eprintln!("[{}.{:03}] {msg}", t.as_secs(), t.subsec_millis());
        } else {
            eprintln!("{msg}");
        }
    }
}

struct App {
    cfg: Config,
    dsl: Dsl,
    log: Log,
}

impl App {
    fn new(cli: &Cli) -> Result<App> {
        let mut cfg = match &cli.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        if let Some(b) = cli.backend {
            cfg.backend = match b {
                BackendArg::Interp => "interp",
                BackendArg::CCpu => "c_cpu",
            }
            .into();
        }
        if let Some(d) = cli.dsl {
            cfg.dsl = match d {
                DslArg::C => "c",
                DslArg::Sketch => "sketch",
            }
            .into();
        }
        let dsl = Dsl::parse(&cfg.dsl).ok_or_else(|| anyhow!("unknown dsl `{}`", cfg.dsl))?;
        Ok(App { cfg, dsl, log: Log { timestamps: !cli.no_timestamps } })
    }

    fn backend(&self) -> Result<Arc<dyn BackendAdapter>> {
        backend_by_id(&self.cfg.backend).ok_or_else(|| anyhow!("unknown backend `{}`", self.cfg.backend))
    }

    /// A configured docset may point at a root holding `<dsl>/<backend>/`
    /// or straight at the docset.
    fn docset(&self) -> Result<DocSet> {
        let Some(root) = &self.cfg.docset else {
            return Ok(DocSet::empty(self.dsl.as_str(), &self.cfg.backend));
        };
        let nested = root.join(self.dsl.as_str()).join(&self.cfg.backend);
        let dir = if nested.is_dir() { nested } else { root.clone() };
        let set = load_docset(&dir).map_err(|e| anyhow!("loading docset: {e}"))?;
        for w in &set.warnings {
            self.log.line(&format!("docset: {w}"));
        }
        Ok(set)
    }

    fn db(&self) -> Result<KernelDb> {
        match &self.cfg.database {
            Some(p) => KernelDb::open(p).with_context(|| format!("opening database {}", p.display())),
            None => Ok(KernelDb::in_memory()),
        }
    }

    fn reference_script(&self) -> bool {
        self.cfg.provider.kind == ProviderKind::Scripted && self.cfg.provider.transcript.is_none()
    }

    /// The scripted kind without a replay file answers with each task's
    /// reference design, which keeps offline runs useful.
    fn provider(&self, tasks: &[OperatorSpec]) -> Result<Arc<dyn ChatProvider>> {
        let p = &self.cfg.provider;
        if self.reference_script() {
            self.log.line("provider: scripted reference designs");
            let inner = Arc::new(ScriptedProvider::from_rules(reference_rules(tasks)).with_model(&p.model));
            return Ok(Arc::new(LimitedProvider::new(inner, p.max_in_flight)));
        }
        Ok(build_provider(p)?)
    }

    fn pipeline_config(&self) -> PipelineConfig {
        let c = &self.cfg;
        PipelineConfig {
            max_iterations: c.max_iterations,
            dsl: self.dsl,
            work_dir: c.work_dir.clone(),
            verify: c.verify_config(),
            retrieval: c.retrieval,
            sampling: Sampling { temperature: c.provider.temperature, max_tokens: c.provider.max_tokens, seed: Some(c.seed) },
            ..PipelineConfig::default()
        }
    }
}

fn load_task(arg: &str) -> Result<OperatorSpec> {
    let path = Path::new(arg);
    if path.exists() {
        return OperatorSpec::load(path).map_err(|e| anyhow!("loading task {arg}: {e}"));
    }
    builtin_task(arg).ok_or_else(|| anyhow!("`{arg}` is neither a task file nor a builtin task"))
}

fn generate(app: &App, task: &str, dry_run: bool) -> Result<ExitCode> {
    let task = load_task(task)?;
    let docs = app.docset()?;
    let pc = app.pipeline_config();
    if dry_run {
        let req = DesignRequest { task: task.clone(), context: assemble_context(&ContextInputs::new(&task, &docs, Stage::Designer)), inspiration: None, sampling: pc.sampling };
        for m in design_prompt(&req) {
            out!("=== {} ===\n{}", serde_json::to_value(m.role)?.as_str().unwrap_or("?"), m.content);
        }
        return Ok(ExitCode::SUCCESS);
    }
    let provider = app.provider(std::slice::from_ref(&task))?;
    let backend = app.backend()?;
    let db = app.db()?;
    let embedder = HashEmbedder::default();
    let ctx = PipelineContext { provider: provider.as_ref(), backend: backend.as_ref(), docset: &docs, db: Some(&db), embedder: &embedder };
    app.log.line(&format!("generate {} ({} on {})", task.name, app.dsl.as_str(), backend.id()));
    match run_pipeline(&task, &pc, &ctx) {
        Ok(r) => {
            out!("{}", serde_json::to_string_pretty(&r.summary(&task.name))?);
            app.log.line(&format!("artifacts in {}", r.artifacts.display()));
            Ok(ExitCode::SUCCESS)
        }
        Err(e @ PipelineError::ExhaustedIterations { .. }) => {
            if let Some(h) = e.history() {
                out!("{}", h.summary());
            }
            eprintln!("error: {e}");
            Ok(ExitCode::FAILURE)
        }
        Err(e) => Err(e.into()),
    }
}

fn evolve(app: &App, task: &str, rounds: Option<u32>, parallel: Option<usize>, islands: Option<usize>) -> Result<ExitCode> {
    let task = load_task(task)?;
    let mut ec = app.cfg.evolve.clone();
    ec.seed = app.cfg.seed;
    ec.rounds = rounds.unwrap_or(ec.rounds);
    ec.parallel = parallel.unwrap_or(ec.parallel);
    ec.islands = islands.unwrap_or(ec.islands);
    let docs = app.docset()?;
    let provider = app.provider(std::slice::from_ref(&task))?;
    if app.reference_script() && ec.llm_analysis {
        // Reference designs carry no analysis replies; use the structural diff.
        ec.llm_analysis = false;
    }
    let backend = app.backend()?;
    let db = app.db()?;
    let embedder = HashEmbedder::default();
    let ctx = PipelineContext { provider: provider.as_ref(), backend: backend.as_ref(), docset: &docs, db: Some(&db), embedder: &embedder };
    app.log.line(&format!("evolve {}: {} rounds, {} islands x {} slots", task.name, ec.rounds, ec.islands, ec.parallel));
    let r = run_evolve(&task, &ec, &app.pipeline_config(), &ctx)?;
    for round in &r.trace.rounds {
        app.log.line(&format!("round {}: best {:?} us", round.round, round.best_latency_us));
    }
    out!("best: {}", r.best.id);
    out!("latency_us: {:.3}", r.best.latency_us);
    if let Some(s) = r.best.speedup() {
        out!("speedup: {s:.3}");
    }
    out!("stop: {:?}", r.trace.stop);
    out!("stored: {}", r.trace.db_ids.len());
    Ok(ExitCode::SUCCESS)
}

fn verify(app: &App, kernel: &Path, task: &str) -> Result<ExitCode> {
    let task = load_task(task)?;
    let dsl = match kernel.extension().and_then(|e| e.to_str()) {
        Some("c") => Dsl::C,
        Some("usk") => Dsl::Sketch,
        _ => bail!("cannot tell the kernel language of {}; use .c or .usk", kernel.display()),
    };
    let source = std::fs::read_to_string(kernel).with_context(|| format!("reading {}", kernel.display()))?;
    let backend = match dsl {
        // Sketch kernels only run on the interpreter.
        Dsl::Sketch => backend_by_id("interp").expect("interp backend"),
        Dsl::C => app.backend()?,
    };
    let id = kernel.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "kernel".into());
    let cand = KernelCandidate::new(id, dsl, backend.id(), source);
    let r = verify_kernel(&cand, &task, backend.as_ref(), &app.cfg.verify_config());
    out!("status: {:?}", r.status);
    out!("instances: {}/{}", r.instances.iter().filter(|i| i.passed).count(), r.instances.len());
    out!("violation_fraction: {:.6}", r.violation_fraction);
    let stats = |xs: &[f64]| {
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = xs.iter().copied().fold(0.0, f64::max);
        format!("mean {:.3} min {min:.3} max {max:.3}", xs.iter().sum::<f64>() / xs.len() as f64)
    };
    if !r.latency_gen_us.is_empty() {
        out!("latency_us: {}", stats(&r.latency_gen_us));
    }
    if !r.latency_base_us.is_empty() {
        out!("baseline_us: {}", stats(&r.latency_base_us));
    }
    if let Some(s) = r.speedup() {
        out!("speedup: {s:.3}");
    }
    if r.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{}", r.diagnostics.trim_end());
        Ok(ExitCode::FAILURE)
    }
}

fn bench(app: &App, tasks_dir: Option<&Path>, mode: ModeArg, k: u64, use_evolve: bool, out: &Path) -> Result<ExitCode> {
    let tasks = match tasks_dir {
        Some(d) => load_dir(d).map_err(|e| anyhow!("loading tasks from {}: {e}", d.display()))?,
        None => builtin_suite(),
    };
    let cfg = SuiteConfig {
        samples: k,
        ks: [1, 4, k].into_iter().filter(|&x| x <= k).collect::<std::collections::BTreeSet<_>>().into_iter().collect(),
        mode: match mode {
            ModeArg::Static => SuiteMode::Static,
            ModeArg::Dynamic => SuiteMode::Dynamic,
        },
        dynamic_instances: app.cfg.verify.dynamic_instances,
        seed: app.cfg.seed,
        generator: if use_evolve {
            let mut ec = app.cfg.evolve.clone();
            ec.llm_analysis &= !app.reference_script();
            Generator::Evolve(ec)
        } else {
            Generator::Pipeline
        },
        pipeline: app.pipeline_config(),
        ..SuiteConfig::default()
    };
    let docs = app.docset()?;
    let provider = app.provider(&tasks)?;
    let backend = app.backend()?;
    let db = app.db()?;
    let embedder = HashEmbedder::default();
    let ctx = PipelineContext { provider: provider.as_ref(), backend: backend.as_ref(), docset: &docs, db: Some(&db), embedder: &embedder };
    app.log.line(&format!("bench: {} tasks x {k} samples", tasks.len()));
    let report = run_suite(&tasks, &cfg, &ctx)?;
    std::fs::write(out, report.to_json()).with_context(|| format!("writing {}", out.display()))?;
    app.log.line(&format!("report written to {}", out.display()));
    for (kk, v, exact) in &report.aggregates.overall.pass_at_k {
        out!("pass@{kk}: {v:.4} ({exact})");
    }
    write!(std::io::stdout(), "{}", report.table())?;
    Ok(ExitCode::SUCCESS)
}

fn retrieve_cmd(app: &App, task: &str, db: &Path, k: Option<usize>) -> Result<ExitCode> {
    let task = load_task(task)?;
    if !db.exists() {
        bail!("database {} does not exist", db.display());
    }
    let db = KernelDb::open(db).with_context(|| format!("opening database {}", db.display()))?;
    let mut rc = app.cfg.retrieval;
    rc.k = k.unwrap_or(rc.k);
    let hits = retrieve(&task, &db, &app.cfg.backend, app.dsl.as_str(), &rc, &HashEmbedder::default(), None)?;
    if hits.is_empty() {
        app.log.line("no matching records");
    }
    for h in hits {
        out!("{}\tlogic={:.4}\tshape={:.4}", h.record.id, h.logic_score, h.shape_score);
    }
    Ok(ExitCode::SUCCESS)
}

fn docs_format(app: &App, raw: &Path, out: &Path) -> Result<ExitCode> {
    // Only a real model is worth asking; the offline path uses file names.
    let provider = match app.cfg.provider.kind {
        ProviderKind::Http => Some(build_provider(&app.cfg.provider)?),
        ProviderKind::Scripted => app.cfg.provider.transcript.as_ref().map(|_| build_provider(&app.cfg.provider)).transpose()?,
    };
    let r = format_docs(raw, out, app.dsl.as_str(), &app.cfg.backend, provider.as_deref()).map_err(|e| anyhow!("{e}"))?;
    for d in &r.docs {
        out!("{} -> {}", d.source.display(), d.dest.display());
    }
    app.log.line(&format!("{} documents filed under {}", r.docs.len(), r.root.display()));
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let app = App::new(&cli)?;
    match &cli.command {
        Command::Generate { task, dry_run } => generate(&app, task, *dry_run),
        Command::Evolve { task, rounds, parallel, islands } => evolve(&app, task, *rounds, *parallel, *islands),
        Command::Verify { kernel, task } => verify(&app, kernel, task),
        Command::Bench { tasks, mode, k, evolve, out } => bench(&app, tasks.as_deref(), *mode, *k, *evolve, out),
        Command::Retrieve { task, db, k } => retrieve_cmd(&app, task, db, *k),
        Command::DocsFormat { raw, out } => docs_format(&app, raw, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) if e.chain().any(|c| c.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)) => ExitCode::SUCCESS,
        Err(e) => {
            // Many error types already print their source inline.
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    msg = if msg.is_empty() { cause } else { format!("{msg}: {cause}") };
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
