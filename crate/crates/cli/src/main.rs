use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};

use faasflow::accounting::{
    compute_billing, detect_double_billing, verify_trilemma_with, PricingModel, DEFAULT_EPSILON_MS,
};
use faasflow::bench::{
    ideal_time, overhead, register_for, run_suite, CalibrationProfile, ExecMode, SuiteConfig,
};
use faasflow::engines::{run, Engine, EngineError, EventSourcingHooks, RunOptions};
use faasflow::runtime::{read_trace, write_trace, Millis, Payload, RuntimeError, SimConfig};
use faasflow::workflow::{load_workflow, Node};

const EXIT_VERDICT: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_ENGINE: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

#[derive(Parser)]
#[command(
    name = "faasflow",
    version,
    about = "Simulated FaaS orchestration engines, trilemma verifier and overhead benchmarks"
)]
struct Cli {
    /// TOML file with a `[defaults]` section and an optional `[suite]` section.
    #[arg(long, global = true, env = "FAASFLOW_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a workflow on one engine and report its overhead and billing.
    Run(RunArgs),
    /// Check the serverless trilemma for an engine; exits 1 when not ST-safe.
    Verify(VerifyArgs),
    /// Run the overhead benchmark suite and write CSV and SVG artifacts.
    Bench(BenchArgs),
    /// Summarize an exported trace file.
    InspectTrace(InspectArgs),
}

#[derive(Args)]
struct EngineArgs {
    /// asf, composer, sequences, adf, suspend or inline.
    #[arg(long)]
    engine: Option<String>,
    /// Workflow state machine (JSON).
    #[arg(long)]
    workflow: PathBuf,
    /// Shipped profile name or profile file; defaults to the engine's own.
    #[arg(long)]
    profile: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: EngineArgs,
    /// Input payload as JSON.
    #[arg(long, default_value = "null")]
    input: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Upper bound of seeded uniform latency noise.
    #[arg(long)]
    jitter_ms: Option<Millis>,
    #[arg(long)]
    extended_sessions: bool,
    /// Where the trace (and event history, if any) is written.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: EngineArgs,
    #[arg(long, default_value = "null")]
    input: String,
}

#[derive(Args)]
struct BenchArgs {
    /// `default` or a suite config file with a `[suite]` section.
    #[arg(long)]
    suite: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Run scenarios one after another instead of on a thread pool.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct InspectArgs {
    /// Newline-delimited invocation records.
    trace: PathBuf,
    #[arg(long, default_value_t = DEFAULT_EPSILON_MS)]
    epsilon_ms: Millis,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Defaults {
    engine: Option<String>,
    profile: Option<String>,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    jitter_ms: Option<Millis>,
    #[serde(default)]
    extended_sessions: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    defaults: Defaults,
    suite: Option<SuiteConfig>,
    pricing: Option<PricingModel>,
}

struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let code = match &e {
            EngineError::Workflow(_) | EngineError::Runtime(RuntimeError::UnknownFunction(_)) => {
                EXIT_USAGE
            }
            _ => EXIT_ENGINE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

struct Context {
    config: ConfigFile,
    base: PathBuf,
}

impl Context {
    fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self {
                config: ConfigFile::default(),
                base: PathBuf::from("."),
            });
        };
        let text =
            fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let config: ConfigFile =
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        if let Some(p) = &config.pricing {
            p.validate().map_err(usage)?;
        }
        Ok(Self {
            config,
            base: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    fn engine(&self, arg: &Option<String>) -> Result<Engine, Failure> {
        arg.as_ref()
            .or(self.config.defaults.engine.as_ref())
            .ok_or_else(|| usage("--engine is required"))?
            .parse()
            .map_err(usage)
    }

    fn profile(&self, arg: &Option<String>, engine: Engine) -> Result<CalibrationProfile, Failure> {
        let (name, base) = match (arg, &self.config.defaults.profile) {
            (Some(a), _) => (a, Path::new(".")),
            (None, Some(c)) => (c, self.base.as_path()),
            (None, None) => return Ok(CalibrationProfile::default_for(engine)),
        };
        if CalibrationProfile::builtin_names().any(|n| n == name) {
            return CalibrationProfile::builtin(name).map_err(|e| usage(e.to_string()));
        }
        let path = base.join(name);
        let text =
            fs::read_to_string(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        CalibrationProfile::parse(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
    }

    fn pricing(&self) -> PricingModel {
        self.config.pricing.clone().unwrap_or_default()
    }
}

fn load_spec(path: &Path) -> Result<Node, Failure> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    load_workflow(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn parse_input(text: &str) -> Result<Payload, Failure> {
    serde_json::from_str::<Value>(text)
        .map(Payload)
        .map_err(|e| usage(format!("--input is not valid JSON: {e}")))
}

fn print_json(v: &Value) {
    let mut out = std::io::stdout().lock();
    let _ = serde_json::to_writer_pretty(&mut out, v);
    let _ = writeln!(out);
}

fn cmd_run(ctx: &Context, args: &RunArgs) -> Result<u8, Failure> {
    let engine = ctx.engine(&args.common.engine)?;
    let profile = ctx.profile(&args.common.profile, engine)?;
    let spec = load_spec(&args.common.workflow)?;
    let input = parse_input(&args.input)?;
    let d = &ctx.config.defaults;
    let config = SimConfig {
        seed: args.seed.or(d.seed).unwrap_or(0),
        jitter_ms: args.jitter_ms.or(d.jitter_ms).unwrap_or(0),
        ..SimConfig::default()
    };
    let mut sim = profile
        .simulation(engine, config)
        .map_err(|e| usage(e.to_string()))?;
    register_for(&mut sim, &spec).map_err(|e| usage(e.to_string()))?;
    let opts = RunOptions {
        extended_sessions: args.extended_sessions || d.extended_sessions,
        hooks: None::<Arc<EventSourcingHooks>>,
    };
    let result = run(&mut sim, engine, &spec, input, &opts)?;
    let overhead_ms = overhead(&result).map_err(|e| Failure {
        code: EXIT_ENGINE,
        message: e.to_string(),
    })?;
    let billing = compute_billing(&result, &ctx.pricing());

    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| d.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir).map_err(|e| usage(format!("{}: {e}", out_dir.display())))?;
    let trace_path = out_dir.join("trace.ndjson");
    let io_err = |p: &Path, e: std::io::Error| usage(format!("{}: {e}", p.display()));
    let file = fs::File::create(&trace_path).map_err(|e| io_err(&trace_path, e))?;
    write_trace(file, &result.trace).map_err(|e| io_err(&trace_path, e))?;
    let mut doc = json!({
        "engine": engine.cli_name(),
        "output": result.output.0,
        "wall_time_ms": result.wall_time_ms,
        "overhead_ms": overhead_ms,
        "transitions": result.transitions,
        "replay_count": result.replay_count,
        "billing": billing,
        "trace": trace_path,
    });
    if let Some(history) = &result.history {
        let path = out_dir.join("history.ndjson");
        let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        history.write_ndjson(file).map_err(|e| io_err(&path, e))?;
        doc["history"] = json!(path);
    }
    print_json(&doc);
    Ok(0)
}

fn cmd_verify(ctx: &Context, args: &VerifyArgs) -> Result<u8, Failure> {
    let engine = ctx.engine(&args.common.engine)?;
    let profile = ctx.profile(&args.common.profile, engine)?;
    let spec = load_spec(&args.common.workflow)?;
    let input = parse_input(&args.input)?;
    let verdict = verify_trilemma_with(&profile, engine, &spec, input)?;
    print_json(&serde_json::to_value(&verdict).expect("verdict serializes"));
    Ok(if verdict.st_safe { 0 } else { EXIT_VERDICT })
}

fn cmd_bench(ctx: &Context, args: &BenchArgs) -> Result<u8, Failure> {
    let (mut suite, base) = match args.suite.as_deref() {
        None => (
            ctx.config.suite.clone().unwrap_or_default(),
            ctx.base.clone(),
        ),
        Some("default") => (SuiteConfig::default(), PathBuf::from(".")),
        Some(path) => {
            let path = Path::new(path);
            let text =
                fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let suite =
                SuiteConfig::parse(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            (
                suite,
                path.parent().map(Path::to_path_buf).unwrap_or_default(),
            )
        }
    };
    if let Some(seed) = args.seed.or(ctx.config.defaults.seed) {
        suite.seed = seed;
    }
    suite.validate().map_err(|e| usage(e.to_string()))?;
    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| ctx.config.defaults.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("bench-out"));
    let mode = if args.sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    };
    let report = run_suite(&suite, &base, &out_dir, mode).map_err(|e| usage(e.to_string()))?;
    print!("{}", report.summary());
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    Ok(if report.errors.is_empty() {
        0
    } else {
        EXIT_PARTIAL
    })
}

fn cmd_inspect(args: &InspectArgs) -> Result<u8, Failure> {
    let path = &args.trace;
    let file = fs::File::open(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let trace =
        read_trace(BufReader::new(file)).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let start = trace.iter().map(|r| r.submit_time).min().unwrap_or(0);
    let end = trace
        .iter()
        .filter_map(|r| r.end_time)
        .max()
        .unwrap_or(start);
    let ideal = ideal_time(&trace).map_err(|e| usage(e.to_string()))?;
    let orchestrators = trace.iter().filter(|r| r.is_orchestrator()).count();
    let pairs = detect_double_billing(&trace, args.epsilon_ms);
    print_json(&json!({
        "records": trace.len(),
        "orchestrator_records": orchestrators,
        "function_records": trace.len() - orchestrators,
        "span_ms": end - start,
        "ideal_ms": ideal,
        "overhead_ms": (end - start).saturating_sub(ideal),
        "billed_ms": trace.iter().map(|r| r.billed_ms()).sum::<Millis>(),
        "double_billing": pairs,
    }));
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = Context::load(cli.config.as_deref()).and_then(|ctx| match &cli.command {
        Command::Run(a) => cmd_run(&ctx, a),
        Command::Verify(a) => cmd_verify(&ctx, a),
        Command::Bench(a) => cmd_bench(&ctx, a),
        Command::InspectTrace(a) => cmd_inspect(a),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
