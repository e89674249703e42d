//! `colearn` command line.
//!
//! Settings are resolved flag first, then environment variable, then the
//! config file, then built-in defaults.

mod serve;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand};
use colearn_core::bench::{render_table, run_bench, BenchError, BenchOptions, BenchReport, Method};
use colearn_core::config::{BackendMode, ConfigError, EngineConfig};
use colearn_core::corpus::{length_distribution, load_corpus, parse_record, TaskRecord};
use colearn_core::gateway::{Backend, Completion, Gateway, GatewayError, PromptBundle, ReplayBackend};
use colearn_core::orchestrator::{export_history, Engine, ModelStrategy};
use colearn_core::policy::{calibrate_profiles, PolicyConfig, DEFAULT_STABILITY};
use serde_json::json;

#[derive(Parser)]
#[command(name = "colearn", version, about = "Multi-agent code correction engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Correct one program and print the result.
    Correct(CorrectArgs),
    /// Run a corpus and write a report.
    Bench(BenchArgs),
    /// Derive model profiles from fixed-model reports.
    Calibrate(CalibrateArgs),
    /// Re-run a corpus against a recorded trace.
    Replay(ReplayArgs),
    /// Serve corrections over HTTP.
    Serve(ServeArgs),
}

#[derive(Args)]
struct EngineArgs {
    /// Engine config file (JSON).
    #[arg(long, env = "COLEARN_CONFIG")]
    config: Option<PathBuf>,
    /// live, scripted or replay. Defaults to scripted when the config names
    /// a script, live otherwise.
    #[arg(long, env = "COLEARN_BACKEND")]
    backend: Option<BackendMode>,
    /// Use this model for every attempt instead of the selection policy.
    #[arg(long, env = "COLEARN_MODEL")]
    model: Option<String>,
    #[arg(long, env = "COLEARN_MAX_LOOPS")]
    max_loops: Option<usize>,
    /// Dialogue memory capacity in pairs.
    #[arg(long, env = "COLEARN_MEMORY")]
    memory: Option<usize>,
    /// Policy file replacing the config's session policy.
    #[arg(long, env = "COLEARN_POLICY")]
    policy: Option<PathBuf>,
    /// Trace file: recorded in live and scripted modes, read in replay mode.
    #[arg(long, env = "COLEARN_TRACE")]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct CorrectArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// Task record (JSON object).
    #[arg(long, conflicts_with_all = ["corpus", "code"])]
    task: Option<PathBuf>,
    /// Corpus to pick `--task-id` from.
    #[arg(long, env = "COLEARN_CORPUS", requires = "task_id")]
    corpus: Option<PathBuf>,
    #[arg(long)]
    task_id: Option<String>,
    /// Program to correct.
    #[arg(long, requires = "tests")]
    code: Option<PathBuf>,
    /// Basic asserts, one per line.
    #[arg(long)]
    tests: Option<PathBuf>,
    /// Challenge asserts, one per line.
    #[arg(long)]
    challenge_tests: Option<PathBuf>,
    #[arg(long, default_value = "")]
    description: String,
    #[arg(long, env = "COLEARN_OUT", default_value = "colearn-out")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long, env = "COLEARN_CORPUS")]
    corpus: PathBuf,
    #[arg(long, env = "COLEARN_WORKERS", default_value_t = 4)]
    workers: usize,
    #[arg(long, env = "COLEARN_OUT", default_value = "colearn-out")]
    out: PathBuf,
    /// Ignore any checkpoint left in the output directory.
    #[arg(long)]
    fresh: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Base config whose policy is updated.
    #[arg(long, env = "COLEARN_CONFIG")]
    config: Option<PathBuf>,
    /// One fixed-model bench report per model.
    #[arg(long, num_args = 1.., required = true)]
    reports: Vec<PathBuf>,
    /// Corpus used to recompute the length thresholds.
    #[arg(long, env = "COLEARN_CORPUS")]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_STABILITY)]
    stability: f64,
    /// Policy file to write.
    #[arg(long, env = "COLEARN_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long, env = "COLEARN_CORPUS")]
    corpus: PathBuf,
    #[arg(long, env = "COLEARN_WORKERS", default_value_t = 4)]
    workers: usize,
    #[arg(long, env = "COLEARN_OUT", default_value = "colearn-out")]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long, env = "COLEARN_ADDR")]
    addr: Option<String>,
    #[arg(long, env = "COLEARN_MAX_CONCURRENT")]
    max_concurrent: Option<usize>,
}

/// Failure reported as JSON on stderr.
#[derive(Debug)]
struct Failure {
    exit: u8,
    kind: &'static str,
    message: String,
    detail: serde_json::Value,
}

impl Failure {
    fn config(message: impl ToString) -> Self {
        Failure {
            exit: 2,
            kind: "config",
            message: message.to_string(),
            detail: serde_json::Value::Null,
        }
    }

    fn run(kind: &'static str, message: impl ToString) -> Self {
        Failure {
            exit: 1,
            kind,
            message: message.to_string(),
            detail: serde_json::Value::Null,
        }
    }

    fn with_detail(mut self, detail: serde_json::Value) -> Self {
        self.detail = detail;
        self
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::config(e)
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Correct(a) => correct(a),
        Command::Bench(a) => bench(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Replay(a) => replay(a),
        Command::Serve(a) => serve_cmd(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let mut body = json!({"kind": f.kind, "message": f.message});
            if !f.detail.is_null() {
                body["detail"] = f.detail;
            }
            eprintln!("{}", json!({ "error": body }));
            ExitCode::from(f.exit)
        }
    }
}

impl EngineArgs {
    /// Config file plus overrides.
    fn resolve(&self) -> Result<EngineConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => EngineConfig::load(path)?,
            None => EngineConfig {
                base_dir: std::env::current_dir().map_err(Failure::config)?,
                ..EngineConfig::default()
            },
        };
        if let Some(path) = &self.policy {
            cfg.session.policy = PolicyConfig::load(path).map_err(Failure::config)?;
        }
        if let Some(n) = self.max_loops {
            cfg.session.max_loops = n;
        }
        if let Some(n) = self.memory {
            cfg.set_memory_capacity(n);
        }
        if let Some(model) = &self.model {
            cfg.session.strategy = ModelStrategy::Fixed {
                model: model.as_str().into(),
            };
        }
        if let Some(trace) = &self.trace {
            cfg.gateway.trace = Some(trace.clone());
        }
        cfg.validate().map_err(Failure::config)?;
        Ok(cfg)
    }

    fn mode(&self, cfg: &EngineConfig) -> BackendMode {
        self.backend.unwrap_or(if cfg.gateway.script.is_some() {
            BackendMode::Scripted
        } else {
            BackendMode::Live
        })
    }

    /// Engine for live or scripted mode. A trace named in the config is
    /// started afresh so reruns leave the same file behind.
    fn engine(&self) -> Result<(EngineConfig, Engine), Failure> {
        let cfg = self.resolve()?;
        let mode = self.mode(&cfg);
        if mode == BackendMode::Replay {
            return Err(Failure::config("use `colearn replay` for replay mode"));
        }
        if let Some(trace) = &cfg.gateway.trace {
            fs::write(trace, "").map_err(|e| Failure::config(format!("{}: {e}", trace.display())))?;
        }
        let (gateway, _) = cfg.build_gateway(mode)?;
        let engine = assemble(&cfg, gateway)?;
        Ok((cfg, engine))
    }
}

fn assemble(cfg: &EngineConfig, gateway: Gateway) -> Result<Engine, Failure> {
    let sandbox = cfg.build_sandbox()?;
    Engine::new(Arc::new(gateway), Arc::new(sandbox), cfg.session.clone()).map_err(Failure::config)
}

fn pretty<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(|e| Failure::run("io", e))
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::run("io", format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::run("io", format!("{}: {e}", path.display())))
}

fn assert_lines(path: &Path) -> Result<Vec<String>, Failure> {
    Ok(read(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

fn load_task(a: &CorrectArgs) -> Result<TaskRecord, Failure> {
    if let Some(path) = &a.task {
        return parse_record(&read(path)?, 1)
            .map_err(|e| Failure::config(format!("{}: {e}", path.display())));
    }
    if let Some(path) = &a.corpus {
        let id = a.task_id.as_deref().unwrap_or_default();
        return load_corpus(path)
            .map_err(Failure::config)?
            .into_iter()
            .find(|t| t.task_id == id)
            .ok_or_else(|| Failure::config(format!("task {id} not found in {}", path.display())));
    }
    let (Some(code), Some(tests)) = (&a.code, &a.tests) else {
        return Err(Failure::config(
            "give --task, --corpus with --task-id, or --code with --tests",
        ));
    };
    let task = TaskRecord {
        task_id: a.task_id.clone().unwrap_or_else(|| "task".into()),
        description: a.description.clone(),
        error_code: read(code)?,
        test_list: assert_lines(tests)?,
        challenge_test_list: match &a.challenge_tests {
            Some(p) => assert_lines(p)?,
            None => Vec::new(),
        },
    };
    task.validate(1).map_err(Failure::config)?;
    Ok(task)
}

fn correct(a: CorrectArgs) -> CliResult {
    let task = load_task(&a)?;
    let (_, engine) = a.engine.engine()?;
    let result = engine
        .run_session(&task)
        .map_err(|e| Failure::run("session", e))?;

    let mut history = Vec::new();
    export_history(&result.history, &mut history).map_err(|e| Failure::run("io", e))?;
    write(&a.out.join(format!("{}.history.jsonl", task.task_id)), history)?;
    write(
        &a.out.join(format!("{}.result.json", task.task_id)),
        pretty(&result)?,
    )?;

    match &result.final_code {
        Some(code) if result.solved() => {
            println!("{code}");
            Ok(())
        }
        _ => Err(
            Failure::run("unsolved", format!("task {} not solved", task.task_id)).with_detail(json!({
                "task_id": task.task_id,
                "loop_count": result.loop_count,
                "models_used": result.models_used,
                "failure_cause": result.failure_cause,
            })),
        ),
    }
}

fn bench_error(e: BenchError) -> Failure {
    match e {
        BenchError::Config(_) | BenchError::EmptyCorpus => Failure::config(e),
        other => Failure::run("bench", other),
    }
}

fn method_of(cfg: &EngineConfig) -> Method {
    match &cfg.session.strategy {
        ModelStrategy::Fixed { model } => Method::Fixed { model: model.clone() },
        ModelStrategy::Erl => Method::Erl,
    }
}

/// Writes the report, table, ledger and per-task histories into `out`.
fn write_bench(out: &Path, run: &colearn_core::bench::BenchRun) -> CliResult {
    write(&out.join("report.json"), pretty(&run.report)?)?;
    write(&out.join("ledger.json"), pretty(&run.ledger)?)?;
    let table = render_table(std::slice::from_ref(&run.report));
    write(&out.join("table.txt"), &table)?;
    let mut histories = Vec::new();
    for (task_id, events) in &run.histories {
        let line = json!({"task_id": task_id, "events": events});
        writeln!(histories, "{line}").map_err(|e| Failure::run("io", e))?;
    }
    write(&out.join("histories.jsonl"), histories)?;
    print!("{table}");
    Ok(())
}

fn bench(a: BenchArgs) -> CliResult {
    let corpus = load_corpus(&a.corpus).map_err(Failure::config)?;
    let (cfg, engine) = a.engine.engine()?;
    let checkpoint = a.out.join("checkpoint.jsonl");
    // A recorded trace only covers tasks run in this invocation.
    if a.fresh || cfg.gateway.trace.is_some() {
        let _ = fs::remove_file(&checkpoint);
    }
    fs::create_dir_all(&a.out).map_err(|e| Failure::run("io", format!("{}: {e}", a.out.display())))?;
    let options = BenchOptions {
        workers: a.workers,
        checkpoint: Some(checkpoint),
        stop_after: None,
    };
    let run = run_bench(&corpus, &engine, &method_of(&cfg), &options).map_err(bench_error)?;
    write_bench(&a.out, &run)
}

fn calibrate(a: CalibrateArgs) -> CliResult {
    let mut policy = match &a.config {
        Some(path) => EngineConfig::load(path)?.session.policy,
        None => PolicyConfig::default(),
    };
    let reports = a
        .reports
        .iter()
        .map(|p| BenchReport::load(p).map_err(Failure::config))
        .collect::<Result<Vec<_>, _>>()?;
    let stability = policy
        .profiles
        .iter()
        .map(|(m, p)| (m.clone(), p.stability))
        .collect::<BTreeMap<_, _>>();
    policy.profiles = calibrate_profiles(&reports, &stability, a.stability).map_err(Failure::config)?;
    if let Some(path) = &a.corpus {
        let corpus = load_corpus(path).map_err(Failure::config)?;
        policy.thresholds = length_distribution(&corpus, 10)
            .map_err(Failure::config)?
            .routing_thresholds();
    }
    // keep only models that were calibrated
    policy.ranking.retain(|m| policy.profiles.contains_key(m));
    for model in policy.profiles.keys() {
        if !policy.ranking.contains(model) {
            policy.ranking.push(model.clone());
        }
    }
    let text = pretty(&policy)?;
    write(&a.out, &text)?;
    println!("{text}");
    Ok(())
}

/// Passes replayed completions through and remembers every mismatch.
struct Watched {
    inner: Arc<ReplayBackend>,
    mismatches: Mutex<Vec<String>>,
}

impl Backend for Watched {
    fn complete(&self, bundle: &PromptBundle, conversation_id: &str) -> Result<Completion, GatewayError> {
        self.inner.complete(bundle, conversation_id).inspect_err(|e| {
            self.mismatches.lock().unwrap().push(e.to_string());
        })
    }
}

fn replay(a: ReplayArgs) -> CliResult {
    let corpus = load_corpus(&a.corpus).map_err(Failure::config)?;
    let cfg = a.engine.resolve()?;
    let trace = cfg
        .gateway
        .trace
        .clone()
        .ok_or_else(|| Failure::config("replay needs --trace or gateway.trace"))?;
    let recorded = Arc::new(ReplayBackend::from_file(&trace).map_err(Failure::config)?);
    let total = recorded.remaining();
    let watched = Arc::new(Watched {
        inner: recorded.clone(),
        mismatches: Mutex::new(Vec::new()),
    });
    let mut gateway = Gateway::new(cfg.prompt_library()?, cfg.gateway.limits.clone());
    gateway.set_fallback(watched.clone());
    let engine = assemble(&cfg, gateway)?;
    let options = BenchOptions {
        workers: a.workers,
        ..BenchOptions::default()
    };
    let run = run_bench(&corpus, &engine, &method_of(&cfg), &options).map_err(bench_error)?;
    write_bench(&a.out, &run)?;

    let mismatches = std::mem::take(&mut *watched.mismatches.lock().unwrap());
    let unused = recorded.remaining();
    if !mismatches.is_empty() || unused > 0 {
        return Err(
            Failure::run("replay_mismatch", "replay diverged from the trace").with_detail(json!({
                "recorded": total,
                "unused": unused,
                "mismatches": mismatches,
            })),
        );
    }
    eprintln!("{}", json!({"replayed": total, "tasks": corpus.len()}));
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> CliResult {
    let (mut cfg, engine) = a.engine.engine()?;
    if let Some(addr) = a.addr {
        cfg.serve.addr = addr;
    }
    if let Some(n) = a.max_concurrent {
        cfg.serve.max_concurrent = n;
    }
    cfg.validate().map_err(Failure::config)?;
    serve::run(&cfg.serve, Arc::new(engine)).map_err(|e| Failure::run("serve", e))
}
