use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use fairrec_core::pipeline::{cmd_audit, cmd_baseline, cmd_run, AuditConfig, BaselineConfig, RunConfig, StageError};
use fairrec_core::report::{to_rounded_json, trace_svg};
use fairrec_core::rl_env::Scenario;
use fairrec_core::sac::TrainingTrace;
use fairrec_core::{synthetic, Error};

const THREADS_VAR: &str = "RECOURSE_THREADS";

#[derive(Parser)]
#[command(name = "fairrec", version, about = "Fair counterfactual recourse for tabular classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the agent per population and write the fairness report.
    Run(RunArgs),
    /// Audit the classifier's group fairness on the held-out split.
    Audit(AuditArgs),
    /// Nearest-unlike-neighbour counterfactuals for comparison.
    Baseline(BaselineArgs),
    /// Render a training trace CSV as an SVG chart.
    TracePlot(TracePlotArgs),
    /// Write the built-in synthetic two-group dataset and its schema.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Persisted logistic model instead of training one.
    #[arg(long)]
    model: Option<PathBuf>,
    /// individual-ee, group-ee, group-ecr or hybrid.
    #[arg(long)]
    scenario: Option<Scenario>,
    /// k-means clusters besides Whole; 0 turns clustering off.
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// SAC training episodes per population.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    max_actions: Option<usize>,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long, conflicts_with = "predictions")]
    model: Option<PathBuf>,
    /// CSV of `row_index,score` from an external model.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// Also save the audit as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TracePlotArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "Training trace")]
    title: String,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    rows: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Divergence(_) => 4,
        Error::Contract(_) => 1,
        _ => 3,
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Self {
            code: exit_code(&e.source),
            message: e.to_string(),
        }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure {
        code: 3,
        message: format!("writing {}: {e}", path.display()),
    })
}

fn init_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| config_error(format!("{THREADS_VAR} must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| config_error(format!("thread pool: {e}")))
}

fn run_config(args: &RunArgs) -> Result<RunConfig, Failure> {
    let mut base = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| config_error(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<Value>(&text).map_err(|e| config_error(format!("{}: {e}", p.display())))?
        }
        None => json!({}),
    };
    let obj = base
        .as_object_mut()
        .ok_or_else(|| config_error("run config must be a JSON object"))?;
    let mut set = |key: &str, v: Value| {
        obj.insert(key.to_string(), v);
    };
    if let Some(v) = &args.data {
        set("data", json!(v));
    }
    if let Some(v) = &args.schema {
        set("schema", json!(v));
    }
    if let Some(v) = &args.model {
        set("model", json!(v));
    }
    if let Some(v) = args.clusters {
        set("clusters", json!(v));
    }
    if let Some(v) = args.seed {
        set("seed", json!(v));
    }
    if let Some(v) = &args.out {
        set("out", json!(v));
    }
    nested(obj, "scenario", "scenario", args.scenario.map(|s| json!(s)))?;
    nested(obj, "scenario", "max_actions", args.max_actions.map(|n| json!(n)))?;
    nested(obj, "sac", "episodes", args.episodes.map(|n| json!(n)))?;
    serde_json::from_value(base).map_err(|e| config_error(format!("run config: {e}")))
}

fn nested(obj: &mut Map<String, Value>, section: &str, key: &str, v: Option<Value>) -> Result<(), Failure> {
    let Some(v) = v else { return Ok(()) };
    let entry = obj.entry(section).or_insert_with(|| json!({}));
    entry
        .as_object_mut()
        .ok_or_else(|| config_error(format!("'{section}' must be a JSON object")))?
        .insert(key.to_string(), v);
    Ok(())
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let cfg = run_config(&args)?;
    let report = cmd_run(&cfg)?;
    print!("{}", report.text_table());
    eprintln!("outputs written to {}", cfg.out.display());
    Ok(())
}

fn audit(args: AuditArgs) -> Result<(), Failure> {
    let out = cmd_audit(&AuditConfig {
        data: args.data,
        schema: args.schema,
        model: args.model,
        predictions: args.predictions,
        logistic: Default::default(),
        seed: args.seed,
    })?;
    let a = &out.audit;
    println!("Test rows: {}", out.test_rows);
    println!(
        "DP {:.4}  EO {:.4}  accuracy {:.4}",
        a.dp_difference, a.eo_difference, a.accuracy
    );
    for w in &out.warnings {
        println!("warning: {w}");
    }
    if let Some(p) = args.out {
        write_file(&p, to_rounded_json(&out)?)?;
    }
    Ok(())
}

fn baseline(args: BaselineArgs) -> Result<(), Failure> {
    let report = cmd_baseline(&BaselineConfig {
        data: args.data,
        schema: args.schema,
        model: args.model,
        logistic: Default::default(),
        autoencoder: Default::default(),
        seed: args.seed,
    })?;
    print!("{}", report.text_table());
    if let Some(p) = args.out {
        write_file(&p, to_rounded_json(&report)?)?;
    }
    Ok(())
}

fn trace_plot(args: TracePlotArgs) -> Result<(), Failure> {
    let file = fs::File::open(&args.trace).map_err(|e| Failure {
        code: 3,
        message: format!("{}: {e}", args.trace.display()),
    })?;
    let trace = TrainingTrace::read_csv(file)?;
    write_file(&args.out, trace_svg(&trace, &args.title))
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    synthetic::write_files(&args.out, args.rows, args.seed)?;
    eprintln!("wrote data.csv and schema.json to {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Run(a) => run(a),
        Command::Audit(a) => audit(a),
        Command::Baseline(a) => baseline(a),
        Command::TracePlot(a) => trace_plot(a),
        Command::Synth(a) => synth(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
