//! Command-line front end: `run`, `cb-sim`, `verify`, `gen-stream`, `check-fn`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 I/O error,
//! 3 bound or property violation.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classbalance::{
    gen_imbalanced_points, run_federated, run_paired, sweep_tau, tau_grid, write_rounds_csv, write_sweep_csv,
    BalanceMode, ClassBalance, Concave, ExperimentConfig, ExperimentError, ExperimentRecord, FeatureModel,
    ImbalanceSpec, ProbabilitySource, SoftClassifier,
};
use crate::engine::{
    batch_dmgt, carry_over, dmgt, fed_dmgt, independent, Decision, EngineError, SelectionTrace, StreamInput,
    TraceKind,
};
use crate::oracle::{audit_decisions, verify_batch, verify_selection, OracleError, DEFAULT_BUDGET};
use crate::point::{read_points, write_points, Point, Stream, StreamError};
use crate::properties::check_properties;
use crate::schedule::{ScheduleConfig, ThresholdSchedule};
use crate::seed::sub_seed;
use crate::set::SelectedSet;
use crate::value::{CoreError, Coverage, SetFunction, ValueFunctionHandle};

/// A CLI failure with its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Violation(String),
    /// Standard output was closed by the reader.
    Closed,
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Violation(_) => 3,
            CliError::Closed => 0,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Violation(m) => m,
            CliError::Closed => "",
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "config",
            CliError::Io(_) => "io",
            CliError::Violation(_) => "violation",
            CliError::Closed => "io",
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn stream_err(path: &Path, e: StreamError) -> CliError {
    match e {
        StreamError::Io { .. } => io_err(path, e),
        other => CliError::Io(format!("{}: {other}", path.display())),
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Stream { .. } => CliError::Io(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Csv(ref c) if matches!(c.kind(), csv::ErrorKind::Io(io) if io.kind() == io::ErrorKind::BrokenPipe) => {
                CliError::Closed
            }
            ExperimentError::Csv(_) => CliError::Io(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

/// Value-function family and parameters.
///
/// Short forms: `coverage`, `coverage:<universe>`, `cb-soft[:<g>]`,
/// `cb-label[:<g>[:<alpha>]]`, or a JSON object. Class-balance functions
/// read probability payloads directly; on feature payloads they use the
/// synthetic classifier with confidence `alpha` (default 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ValueSpec {
    Coverage {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        universe: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
    },
    ClassBalance {
        #[serde(default)]
        mode: BalanceMode,
        #[serde(default)]
        concave: Concave,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
    },
}

impl FromStr for ValueSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.starts_with('{') {
            return serde_json::from_str(s).map_err(|e| CliError::Usage(format!("value spec: {e}")));
        }
        let parts: Vec<&str> = s.split(':').collect();
        let bad = |m: String| CliError::Usage(format!("value spec `{s}`: {m}"));
        match parts[0] {
            "coverage" => Ok(ValueSpec::Coverage {
                universe: match parts.get(1) {
                    Some(u) => Some(u.parse().map_err(|e| bad(format!("{e}")))?),
                    None => None,
                },
                weights: None,
            }),
            "cb-soft" | "cb-label" => {
                let mode = if parts[0] == "cb-soft" { BalanceMode::Soft } else { BalanceMode::LabelAware };
                let concave = match parts.get(1) {
                    Some(g) => g.parse().map_err(|e: CoreError| bad(e.to_string()))?,
                    None => Concave::Sqrt,
                };
                let alpha = match parts.get(2) {
                    Some(a) => Some(a.parse().map_err(|e| bad(format!("{e}")))?),
                    None => None,
                };
                Ok(ValueSpec::ClassBalance { mode, concave, alpha })
            }
            other => Err(bad(format!("unknown family `{other}`"))),
        }
    }
}

impl ValueSpec {
    /// Builds the function for payloads of the given dimension (`None` for an
    /// empty stream) and kind.
    pub fn build(&self, dimension: Option<usize>, probs_payload: bool) -> Result<Arc<dyn SetFunction>, CliError> {
        match self {
            ValueSpec::Coverage { universe, weights } => {
                let f = match (universe, weights) {
                    (_, Some(w)) => {
                        if let Some(u) = universe {
                            if *u != w.len() {
                                return Err(CliError::Usage(format!("{} weights for universe {u}", w.len())));
                            }
                        }
                        Coverage::with_weights(w.clone())?
                    }
                    (Some(u), None) => Coverage::new(*u),
                    (None, None) => Coverage::new(dimension.unwrap_or(0)),
                };
                Ok(Arc::new(f))
            }
            ValueSpec::ClassBalance { mode, concave, alpha } => {
                let classes = dimension.unwrap_or(2);
                let source = if probs_payload && alpha.is_none() {
                    ProbabilitySource::Payload
                } else {
                    ProbabilitySource::Classifier(Arc::new(SoftClassifier::new(classes, alpha.unwrap_or(1.0))?))
                };
                Ok(Arc::new(ClassBalance::new(classes, *concave, *mode, source)?))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EngineMode {
    #[default]
    Single,
    Batch,
    Federated,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum HookKind {
    /// Batch `b` values sets on top of everything selected before it.
    #[default]
    CarryOver,
    /// Every batch starts from an empty selection.
    Independent,
}

/// A fully specified `run` invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: EngineMode,
    pub streams: Vec<PathBuf>,
    pub value: ValueSpec,
    /// Shared schedule; `schedules` gives one per stream instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedules: Option<Vec<ScheduleConfig>>,
    #[serde(default)]
    pub hook: HookKind,
    #[serde(default)]
    pub verify: bool,
    /// When set, jittered schedules draw from `sub_seed(seed, "schedule/<j>")`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Checks a config without touching the file system.
    pub fn validate(&self) -> Result<(), CliError> {
        let n = self.streams.len();
        if n == 0 {
            return Err(CliError::Usage("at least one stream is required".into()));
        }
        if self.mode == EngineMode::Single && n != 1 {
            return Err(CliError::Usage(format!("single mode takes one stream, got {n}")));
        }
        match (&self.schedule, &self.schedules) {
            (Some(_), Some(_)) => return Err(CliError::Usage("give either schedule or schedules".into())),
            (None, None) => return Err(CliError::Usage("a schedule is required".into())),
            (None, Some(s)) if s.len() != n => {
                return Err(CliError::Usage(format!("{} schedules for {n} streams", s.len())))
            }
            _ => {}
        }
        for j in 0..n {
            ThresholdSchedule::from_config(&self.schedule_for(j)).map_err(|e| CliError::Usage(e.to_string()))?;
        }
        Ok(())
    }

    fn schedule_for(&self, j: usize) -> ScheduleConfig {
        let cfg = match (&self.schedule, &self.schedules) {
            (_, Some(list)) => list[j].clone(),
            (Some(s), None) => s.clone(),
            (None, None) => unreachable!("validated"),
        };
        match (cfg, self.seed) {
            (ScheduleConfig::Jitter { lo, hi, .. }, Some(seed)) => ScheduleConfig::Jitter {
                lo,
                hi,
                seed: sub_seed(seed, &format!("schedule/{j}")),
            },
            (c, _) => c,
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        for s in &mut self.streams {
            if s.is_relative() {
                *s = base.join(&*s);
            }
        }
    }
}

/// One agent in an `agents.json` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEntry {
    pub stream: PathBuf,
    pub schedule: ScheduleConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentsFile {
    pub agents: Vec<AgentEntry>,
}

#[derive(Parser, Debug)]
#[command(name = "dmgt", version, about = "Streaming subset selection by marginal-gain thresholding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Select from one stream, a sequence of batches, or several agents.
    Run(RunArgs),
    /// Class-balance simulation: paired DMGT/RAND rounds, federated rounds, threshold sweeps.
    CbSim(CbSimArgs),
    /// Check a recorded trace against the approximation bound.
    Verify(VerifyArgs),
    /// Write a synthetic stream file.
    GenStream(GenStreamArgs),
    /// Sample structural-property checks of a value function.
    CheckFn(CheckFnArgs),
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Run configuration file; excludes the other input flags.
    #[arg(long, conflicts_with_all = ["stream", "fed", "value", "schedule"])]
    pub config: Option<PathBuf>,
    /// Stream file (repeat with --batch for several batches).
    #[arg(long)]
    pub stream: Vec<PathBuf>,
    /// Treat the streams as consecutive batches.
    #[arg(long)]
    pub batch: bool,
    #[arg(long, value_enum, default_value_t = HookKind::CarryOver)]
    pub hook: HookKind,
    /// Federated agents file.
    #[arg(long, conflicts_with_all = ["stream", "batch"])]
    pub fed: Option<PathBuf>,
    /// Value function: `coverage[:U]`, `cb-soft[:g]`, `cb-label[:g[:alpha]]` or JSON.
    #[arg(long)]
    pub value: Option<String>,
    /// Threshold schedule, e.g. `uniform:0.5` or `cost:cardinality:0.1`.
    #[arg(long)]
    pub schedule: Option<String>,
    /// Check the bound with the exact oracle.
    #[arg(long)]
    pub verify: bool,
    /// Master seed for jittered schedules.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for traces and summary.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SimMode {
    Paired,
    Dmgt,
    Rand,
    Fed,
}

#[derive(Args, Debug)]
pub struct CbSimArgs {
    /// Experiment configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SimMode::Paired)]
    pub mode: SimMode,
    /// Threshold sweep `lo:hi:step`.
    #[arg(long)]
    pub sweep_tau: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Uniform threshold.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Common-to-rare frequency ratio.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Initial classifier confidence.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Output directory for CSV files and summary.json (CSV to stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Trace file; repeat together with --stream for pooled agents.
    #[arg(long, required = true)]
    pub trace: Vec<PathBuf>,
    #[arg(long, required = true)]
    pub stream: Vec<PathBuf>,
    #[arg(long)]
    pub value: String,
    /// Report file (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StreamKind {
    /// Labeled points with Gaussian class features.
    Imbalanced,
    /// Labeled points carrying classifier probability vectors.
    Probs,
    /// Random set-cover incidence vectors.
    Coverage,
}

#[derive(Args, Debug)]
pub struct GenStreamArgs {
    #[arg(long, value_enum, default_value_t = StreamKind::Imbalanced)]
    pub kind: StreamKind,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Number of rare classes (the first ones).
    #[arg(long, default_value_t = 5)]
    pub rare_classes: usize,
    #[arg(long, default_value_t = 5.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Classifier confidence for `probs` streams.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 8)]
    pub universe: usize,
    /// Probability that a coverage point covers a given element.
    #[arg(long, default_value_t = 0.3)]
    pub density: f64,
    /// First point id.
    #[arg(long, default_value_t = 0)]
    pub first_id: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CheckFnArgs {
    #[arg(long)]
    pub value: String,
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ground-set size taken from the head of the stream.
    #[arg(long, default_value_t = 16)]
    pub ground: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` and runs the command, returning the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) | Err(CliError::Closed) => 0,
        Err(e) => {
            let diag = serde_json::json!({ "error": e.kind(), "message": e.message() });
            eprintln!("{diag}");
            e.code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run(a) => cmd_run(a),
        Command::CbSim(a) => cmd_cb_sim(a),
        Command::Verify(a) => cmd_verify(a),
        Command::GenStream(a) => cmd_gen_stream(a),
        Command::CheckFn(a) => cmd_check_fn(a),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(path, e))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("report serialization is infallible");
    let mut out = io::stdout().lock();
    writeln!(out, "{text}").and_then(|_| out.flush()).map_err(|e| match e.kind() {
        io::ErrorKind::BrokenPipe => CliError::Closed,
        _ => CliError::Io(format!("stdout: {e}")),
    })
}

/// Writes one JSON line per decision.
pub fn write_trace<W: Write>(mut out: W, trace: &SelectionTrace) -> io::Result<()> {
    for d in &trace.decisions {
        writeln!(out, "{}", serde_json::to_string(d).expect("decision serialization is infallible"))?;
    }
    out.flush()
}

/// Opens a stream and reports the dimension and payload kind of its first
/// point without consuming it.
fn open_peeked(path: &Path) -> Result<(Stream, Option<(usize, bool)>), CliError> {
    let mut stream = Stream::open(path).map_err(|e| stream_err(path, e))?;
    match stream.next() {
        None => Ok((Stream::new(stream.source().clone(), std::iter::empty()), None)),
        Some(Err(e)) => Err(stream_err(path, e)),
        Some(Ok(first)) => {
            let shape = (first.payload().as_slice().len(), first.view().probs().is_some());
            let source = stream.source().clone();
            Ok((Stream::new(source, std::iter::once(Ok(first)).chain(stream)), Some(shape)))
        }
    }
}

fn build_function(spec: &ValueSpec, paths: &[PathBuf]) -> Result<Arc<dyn SetFunction>, CliError> {
    let mut shape = None;
    for p in paths {
        let (_, s) = open_peeked(p)?;
        if s.is_some() {
            shape = s;
            break;
        }
    }
    spec.build(shape.map(|s| s.0), shape.is_some_and(|s| s.1))
}

#[derive(Debug, Serialize)]
struct SegmentSummary {
    index: usize,
    n: usize,
    selected: usize,
    value: Option<f64>,
    tau_min: Option<f64>,
    tau_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl SegmentSummary {
    fn of(index: usize, t: &SelectionTrace) -> Self {
        SegmentSummary {
            index,
            n: t.touched,
            selected: t.selected.len(),
            value: t.value,
            tau_min: t.tau_min(),
            tau_max: t.tau_max(),
            error: None,
        }
    }
}

#[derive(Debug, Serialize)]
struct RunSummary {
    mode: EngineMode,
    value_function: String,
    n: usize,
    selected: usize,
    selected_ids: Vec<u64>,
    value: f64,
    tau_min: Option<f64>,
    tau_max: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    segments: Vec<SegmentSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<serde_json::Value>,
}

fn run_config_from_args(a: RunArgs) -> Result<RunConfig, CliError> {
    if let Some(path) = &a.config {
        let mut cfg: RunConfig = read_json(path)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        if a.verify {
            cfg.verify = true;
        }
        if a.out.is_some() {
            cfg.out = a.out;
        }
        if a.seed.is_some() {
            cfg.seed = a.seed;
        }
        return Ok(cfg);
    }
    let value: ValueSpec = a
        .value
        .as_deref()
        .ok_or_else(|| CliError::Usage("--value is required".into()))?
        .parse()?;
    if let Some(path) = &a.fed {
        let file: AgentsFile = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let streams = file
            .agents
            .iter()
            .map(|e| if e.stream.is_relative() { base.join(&e.stream) } else { e.stream.clone() })
            .collect();
        return Ok(RunConfig {
            mode: EngineMode::Federated,
            streams,
            value,
            schedule: None,
            schedules: Some(file.agents.into_iter().map(|e| e.schedule).collect()),
            hook: a.hook,
            verify: a.verify,
            seed: a.seed,
            out: a.out,
        });
    }
    let schedule: ScheduleConfig = a
        .schedule
        .as_deref()
        .ok_or_else(|| CliError::Usage("--schedule is required".into()))?
        .parse()
        .map_err(|e: crate::schedule::ScheduleError| CliError::Usage(e.to_string()))?;
    Ok(RunConfig {
        mode: if a.batch { EngineMode::Batch } else { EngineMode::Single },
        streams: a.stream,
        value,
        schedule: Some(schedule),
        schedules: None,
        hook: a.hook,
        verify: a.verify,
        seed: a.seed,
        out: a.out,
    })
}

fn cmd_run(a: RunArgs) -> Result<(), CliError> {
    let cfg = run_config_from_args(a)?;
    let summary = execute_run(&cfg)?;
    if cfg.out.is_none() {
        print_json(&summary)?;
    }
    if cfg.verify {
        let ok = summary
            .oracle
            .as_ref()
            .and_then(|o| o.get("ok"))
            .and_then(|v| v.as_bool())
            .unwrap_or(true);
        if !ok {
            return Err(CliError::Violation("bound check failed; see the oracle report in the summary".into()));
        }
    }
    Ok(())
}

fn schedule(cfg: &RunConfig, j: usize) -> Result<ThresholdSchedule, CliError> {
    ThresholdSchedule::from_config(&cfg.schedule_for(j)).map_err(|e| CliError::Usage(e.to_string()))
}

fn read_all(paths: &[PathBuf]) -> Result<Vec<Vec<Point>>, CliError> {
    paths.iter().map(|p| read_points(p).map_err(|e| stream_err(p, e))).collect()
}

fn oracle_json<T: Serialize>(report: &T, ok: bool) -> serde_json::Value {
    let mut v = serde_json::to_value(report).expect("report serialization is infallible");
    if let serde_json::Value::Object(m) = &mut v {
        m.insert("ok".into(), serde_json::Value::Bool(ok));
    }
    v
}

fn execute_run(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    for p in &cfg.streams {
        if !p.exists() {
            return Err(io_err(p, "no such file"));
        }
    }
    let f = build_function(&cfg.value, &cfg.streams)?;
    let out = cfg.out.as_deref();
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let write_trace_file = |name: String, trace: &SelectionTrace| -> Result<(), CliError> {
        if let Some(dir) = out {
            let path = dir.join(name);
            let w = create(&path)?;
            write_trace(w, trace).map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    };

    let summary = match cfg.mode {
        EngineMode::Single => {
            let path = &cfg.streams[0];
            let stream = Stream::open(path).map_err(|e| stream_err(path, e))?;
            let mut handle = ValueFunctionHandle::new(Arc::clone(&f));
            let mut sched = schedule(cfg, 0)?;
            let trace = dmgt(stream, &mut handle, &mut sched)?;
            write_trace_file("trace.jsonl".into(), &trace)?;
            let oracle = if cfg.verify {
                let points = read_all(&cfg.streams)?.remove(0);
                let mut report = verify_selection("dmgt", f.as_ref(), &points, &trace.selected, &trace.thresholds, 1, DEFAULT_BUDGET)?;
                report.issues = audit_decisions(&trace, &f, &points);
                let ok = report.ok();
                Some(oracle_json(&report, ok))
            } else {
                None
            };
            RunSummary {
                mode: cfg.mode,
                value_function: f.describe(),
                n: trace.touched,
                selected: trace.selected.len(),
                selected_ids: trace.selected.ids(),
                value: f.value(&trace.selected)?,
                tau_min: trace.tau_min(),
                tau_max: trace.tau_max(),
                segments: Vec::new(),
                failure: None,
                oracle,
            }
        }
        EngineMode::Federated => {
            let mut inputs = Vec::new();
            for (j, p) in cfg.streams.iter().enumerate() {
                inputs.push(StreamInput::new(Stream::open(p).map_err(|e| stream_err(p, e))?, schedule(cfg, j)?));
            }
            let run = fed_dmgt(inputs, &f)?;
            let mut segments = Vec::new();
            let mut failures = Vec::new();
            for (j, agent) in run.agents.iter().enumerate() {
                match agent {
                    Ok(t) => {
                        write_trace_file(format!("trace_agent{j}.jsonl"), t)?;
                        segments.push(SegmentSummary::of(j, t));
                    }
                    Err(e) => {
                        failures.push(format!("agent {j}: {e}"));
                        segments.push(SegmentSummary {
                            index: j,
                            n: 0,
                            selected: 0,
                            value: None,
                            tau_min: None,
                            tau_max: None,
                            error: Some(e.to_string()),
                        });
                    }
                }
            }
            let oracle = if cfg.verify {
                let all = read_all(&cfg.streams)?;
                let ok_agents: Vec<usize> = (0..run.agents.len()).filter(|&j| run.agents[j].is_ok()).collect();
                let ground: Vec<Point> = ok_agents.iter().flat_map(|&j| all[j].iter().cloned()).collect();
                let m = ok_agents.len().max(1);
                let mut report = verify_selection(
                    &format!("fed-dmgt(M={m})"),
                    f.as_ref(),
                    &ground,
                    &run.selected,
                    &run.thresholds,
                    m,
                    DEFAULT_BUDGET,
                )?;
                for &j in &ok_agents {
                    let t = run.agents[j].as_ref().expect("filtered to completed agents");
                    report
                        .issues
                        .extend(audit_decisions(t, &f, &all[j]).into_iter().map(|i| format!("agent {j}: {i}")));
                }
                let ok = report.ok();
                Some(oracle_json(&report, ok))
            } else {
                None
            };
            RunSummary {
                mode: cfg.mode,
                value_function: f.describe(),
                n: run.touched(),
                selected: run.selected.len(),
                selected_ids: run.selected.ids(),
                value: f.value(&run.selected)?,
                tau_min: run.tau_min(),
                tau_max: run.tau_max(),
                segments,
                failure: if failures.is_empty() { None } else { Some(failures.join("; ")) },
                oracle,
            }
        }
        EngineMode::Batch => {
            let mut inputs = Vec::new();
            for (j, p) in cfg.streams.iter().enumerate() {
                inputs.push(StreamInput::new(Stream::open(p).map_err(|e| stream_err(p, e))?, schedule(cfg, j)?));
            }
            let run = match cfg.hook {
                HookKind::CarryOver => batch_dmgt(inputs, Arc::clone(&f), carry_over(Arc::clone(&f)))?,
                HookKind::Independent => batch_dmgt(inputs, Arc::clone(&f), independent(Arc::clone(&f)))?,
            };
            let mut segments = Vec::new();
            for (b, seg) in run.segments.iter().enumerate() {
                write_trace_file(format!("trace_batch{b}.jsonl"), &seg.trace)?;
                segments.push(SegmentSummary::of(b, &seg.trace));
            }
            let last = run.last_function().cloned().unwrap_or_else(|| Arc::clone(&f));
            let oracle = if cfg.verify && !run.segments.is_empty() {
                let all = read_all(&cfg.streams)?;
                let mut report = verify_batch(&run, &all)?;
                for (b, seg) in run.segments.iter().enumerate() {
                    report.per_batch[b].issues = audit_decisions(&seg.trace, &seg.function, &all[b]);
                }
                let ok = report.ok();
                Some(oracle_json(&report, ok))
            } else {
                None
            };
            RunSummary {
                mode: cfg.mode,
                value_function: f.describe(),
                n: run.touched(),
                selected: run.selected.len(),
                selected_ids: run.selected.ids(),
                value: last.value(&run.selected)?,
                tau_min: run.tau_min(),
                tau_max: run.tau_max(),
                segments,
                failure: run.failure.as_ref().map(|f| format!("batch {}: {}", f.batch, f.reason)),
                oracle,
            }
        }
    };
    if let Some(dir) = out {
        write_json(&dir.join("summary.json"), &summary)?;
    }
    Ok(summary)
}

fn read_trace(path: &Path) -> Result<Vec<Decision>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Usage(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Rebuilds a trace from its records and the stream it was run on.
fn trace_from_records(decisions: Vec<Decision>, points: &[Point], path: &Path) -> Result<SelectionTrace, CliError> {
    if decisions.len() != points.len() {
        return Err(CliError::Usage(format!(
            "{}: {} records for a stream of {} points",
            path.display(),
            decisions.len(),
            points.len()
        )));
    }
    let mut selected = SelectedSet::new();
    for (d, p) in decisions.iter().zip(points) {
        if d.id != p.id() {
            return Err(CliError::Usage(format!(
                "{}: record t={} has id {} but the stream has {}",
                path.display(),
                d.t,
                d.id,
                p.id()
            )));
        }
        if d.selected {
            selected.push(p.clone(), p.reveal_label(), d.t)?;
        }
    }
    let thresholds: Vec<f64> = decisions.iter().filter_map(|d| d.tau).collect();
    let kind = if thresholds.len() == decisions.len() { TraceKind::Dmgt } else { TraceKind::Random };
    Ok(SelectionTrace {
        kind,
        selected,
        thresholds,
        value: decisions.last().and_then(|d| d.value),
        touched: decisions.len(),
        decisions,
    })
}

fn cmd_verify(a: VerifyArgs) -> Result<(), CliError> {
    if a.trace.len() != a.stream.len() {
        return Err(CliError::Usage(format!("{} traces but {} streams", a.trace.len(), a.stream.len())));
    }
    let spec: ValueSpec = a.value.parse()?;
    let f = build_function(&spec, &a.stream)?;
    let all = read_all(&a.stream)?;
    let mut traces = Vec::new();
    for (t, pts) in a.trace.iter().zip(&all) {
        traces.push(trace_from_records(read_trace(t)?, pts, t)?);
    }
    let ground: Vec<Point> = all.iter().flatten().cloned().collect();
    let mut pooled = SelectedSet::new();
    let mut thresholds = Vec::new();
    for t in &traces {
        pooled = pooled.union(&t.selected);
        thresholds.extend_from_slice(&t.thresholds);
    }
    let m = traces.len();
    let instance = if m == 1 { "dmgt".to_string() } else { format!("fed-dmgt(M={m})") };
    let mut report = verify_selection(&instance, f.as_ref(), &ground, &pooled, &thresholds, m, DEFAULT_BUDGET)?;
    for (j, (t, pts)) in traces.iter().zip(&all).enumerate() {
        let issues = audit_decisions(t, &f, pts);
        if m == 1 {
            report.issues.extend(issues);
        } else {
            report.issues.extend(issues.into_iter().map(|i| format!("trace {j}: {i}")));
        }
    }
    match &a.out {
        Some(p) => write_json(p, &report)?,
        None => print_json(&report)?,
    }
    if report.ok() {
        return Ok(());
    }
    let mut detail = Vec::new();
    if report.pass == Some(false) {
        detail.push(format!(
            "f(L) = {} below bound {} (factor term {}, overlap term {})",
            report.selected_value,
            report.rhs.unwrap_or(f64::NAN),
            report.factor_term.unwrap_or(f64::NAN),
            report.overlap_term.unwrap_or(f64::NAN)
        ));
    }
    if !report.floor_holds {
        detail.push(format!("f(L) = {} not above tau_min*|L| = {}", report.selected_value, report.floor));
    }
    detail.extend(report.issues.iter().cloned());
    Err(CliError::Violation(detail.join("; ")))
}

fn experiment_config(a: &CbSimArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &a.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.rounds {
        cfg.rounds = r;
    }
    if let Some(t) = a.tau {
        cfg.tau = Some(t);
        cfg.target = None;
    }
    if let Some(b) = a.beta {
        cfg.beta = b;
    }
    if let Some(al) = a.alpha {
        cfg.alpha = al;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Serialize)]
struct RunBrief {
    mode: &'static str,
    rounds: usize,
    selected: usize,
    rare: usize,
    common: usize,
    rare_fraction: f64,
    final_alpha: f64,
}

impl RunBrief {
    fn of(r: &ExperimentRecord) -> Self {
        RunBrief {
            mode: r.mode.as_str(),
            rounds: r.rounds.len().saturating_sub(1),
            selected: r.total_selected(),
            rare: r.total_rare(),
            common: r.total_common(),
            rare_fraction: r.rare_fraction(),
            final_alpha: r.final_alpha,
        }
    }
}

fn parse_range(s: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::Usage(format!("range `{s}` must be lo:hi:step")));
    }
    let num = |p: &str| p.parse::<f64>().map_err(|e| CliError::Usage(format!("range `{s}`: {e}")));
    Ok(tau_grid(num(parts[0])?, num(parts[1])?, num(parts[2])?)?)
}

fn cmd_cb_sim(a: CbSimArgs) -> Result<(), CliError> {
    let cfg = experiment_config(&a)?;
    let sweep = match &a.sweep_tau {
        Some(s) => Some(parse_range(s)?),
        None => None,
    };
    let out = a.out.as_deref();
    let csv_to = |name: &str, rec: &ExperimentRecord| -> Result<(), CliError> {
        if let Some(dir) = out {
            let path = dir.join(name);
            write_rounds_csv(create(&path)?, rec)?;
        }
        Ok(())
    };

    let mut summary = serde_json::Map::new();
    summary.insert("config".into(), serde_json::to_value(&cfg).expect("config serializes"));
    if let Some(taus) = sweep {
        let records = sweep_tau(&cfg, &taus)?;
        match out {
            Some(dir) => write_sweep_csv(create(&dir.join("sweep.csv"))?, &records)?,
            None => write_sweep_csv(io::stdout().lock(), &records)?,
        }
        summary.insert("sweep".into(), serde_json::to_value(&records).expect("records serialize"));
    } else {
        match a.mode {
            SimMode::Paired | SimMode::Dmgt | SimMode::Rand => {
                let (d, r) = run_paired(&cfg)?;
                if a.mode != SimMode::Rand {
                    csv_to("rounds_dmgt.csv", &d)?;
                    summary.insert("dmgt".into(), serde_json::to_value(RunBrief::of(&d)).expect("serializes"));
                }
                if a.mode != SimMode::Dmgt {
                    csv_to("rounds_rand.csv", &r)?;
                    summary.insert("rand".into(), serde_json::to_value(RunBrief::of(&r)).expect("serializes"));
                }
                if out.is_none() {
                    let rec = if a.mode == SimMode::Rand { &r } else { &d };
                    write_rounds_csv(io::stdout().lock(), rec)?;
                    if a.mode == SimMode::Paired {
                        write_rounds_csv(io::stdout().lock(), &r)?;
                    }
                }
            }
            SimMode::Fed => {
                let rec = run_federated(&cfg)?;
                csv_to("rounds_fed.csv", &rec)?;
                if let Some(dir) = out {
                    for (j, rounds) in rec.agent_rounds.iter().enumerate() {
                        let agent = ExperimentRecord {
                            rounds: rounds.clone(),
                            agent_rounds: Vec::new(),
                            ..rec.clone()
                        };
                        write_rounds_csv(create(&dir.join(format!("rounds_fed_agent{j}.csv")))?, &agent)?;
                    }
                } else {
                    write_rounds_csv(io::stdout().lock(), &rec)?;
                }
                summary.insert("fed".into(), serde_json::to_value(RunBrief::of(&rec)).expect("serializes"));
            }
        }
    }
    if let Some(dir) = out {
        write_json(&dir.join("summary.json"), &serde_json::Value::Object(summary))?;
    }
    Ok(())
}

fn cmd_gen_stream(a: GenStreamArgs) -> Result<(), CliError> {
    let seed = sub_seed(a.seed, "stream");
    let points = match a.kind {
        StreamKind::Imbalanced | StreamKind::Probs => {
            if a.rare_classes == 0 || a.rare_classes >= a.classes {
                return Err(CliError::Usage(format!(
                    "rare classes must be between 1 and {} for {} classes",
                    a.classes.saturating_sub(1),
                    a.classes
                )));
            }
            let spec = ImbalanceSpec {
                classes: a.classes,
                rare: (0..a.rare_classes).collect(),
                common: (a.rare_classes..a.classes).collect(),
                beta: a.beta,
                length: a.n,
                seed,
                first_id: a.first_id,
            };
            let model = FeatureModel {
                separation: a.separation,
                sigma: a.sigma,
            };
            let pts = gen_imbalanced_points(&spec, &model)?;
            if a.kind == StreamKind::Probs {
                let clf = SoftClassifier::new(a.classes, a.alpha)?;
                pts.into_iter()
                    .map(|p| {
                        let probs = clf.predict(p.view())?;
                        let label = p.reveal_label().expect("generated points are labeled");
                        Ok(Point::with_probs(p.id(), probs)?.labeled(label))
                    })
                    .collect::<Result<Vec<_>, CoreError>>()?
            } else {
                pts
            }
        }
        StreamKind::Coverage => {
            if !(0.0..=1.0).contains(&a.density) || a.universe == 0 {
                return Err(CliError::Usage("coverage needs universe ≥ 1 and density in [0, 1]".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..a.n)
                .map(|i| {
                    let f = (0..a.universe).map(|_| if rng.gen_bool(a.density) { 1.0 } else { 0.0 }).collect();
                    Point::with_features(a.first_id + i as u64, f)
                })
                .collect()
        }
    };
    let mut w = create(&a.out)?;
    write_points(&mut w, &points).and_then(|_| w.flush()).map_err(|e| io_err(&a.out, e))
}

fn cmd_check_fn(a: CheckFnArgs) -> Result<(), CliError> {
    let spec: ValueSpec = a.value.parse()?;
    let f = build_function(&spec, std::slice::from_ref(&a.stream))?;
    let mut points = read_points(&a.stream).map_err(|e| stream_err(&a.stream, e))?;
    points.truncate(a.ground);
    let report = check_properties(f.as_ref(), &points, a.trials, a.seed)?;
    match &a.out {
        Some(p) => write_json(p, &report)?,
        None => print_json(&report)?,
    }
    if report.passed() {
        Ok(())
    } else {
        let v = report.first_violation().expect("a failed report has a violation");
        Err(CliError::Violation(format!(
            "{:?} violated: S={:?} T={:?} x={:?} ({} vs {})",
            v.property, v.small, v.large, v.point, v.lhs, v.rhs
        )))
    }
}
