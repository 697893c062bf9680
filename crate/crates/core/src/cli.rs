//! Command-line front end. [`run`] parses arguments and executes one subcommand.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 protocol or simulator
//! error, 3 numerical failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{
    run_batch, BatchError, ConditionSet, ControllerError, ExecutionMode, InflationConfig,
    LocalSimulator, RemoteSimulator, RunError, Simulator,
};
use crate::diagnostics::{
    acf_csv, auto_binning, autocorrelation, ess_chain, extract_graph, gelman_rubin, histogram_csv,
    loss_csv, marginal, most_frequent_types, statistics_csv, tv_distance, write_csv, Binning,
    DiagnosticsError,
};
use crate::importance::{infer_ic, infer_is, load_posterior, save_posterior, WeightedPosterior};
use crate::mcmc::{load_sidecar, run_chain, save_sidecar, ChainConfig, ChainInit, Kernel, RwKernelConfig};
use crate::neural::{load_network, save_network, train_with_progress, NetworkConfig, ProposalNetwork, TrainConfig, TrainError};
use crate::protocol::codec::{Reader, Writer};
use crate::protocol::{parse_endpoints, Endpoint, TIMEOUT_ENV};
use crate::trace::{load_traces, save_traces, write_trace_file, AddressDictionary, Trace, TraceIoError};
use crate::value::Value;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Simulator(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Input(_) => 1,
            CliError::Simulator(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

fn input_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

impl From<ControllerError> for CliError {
    fn from(e: ControllerError) -> Self {
        match e {
            ControllerError::InvalidConfig(m) => CliError::Usage(m),
            e @ ControllerError::Observation(_) => CliError::Input(e.to_string()),
            e => CliError::Simulator(e.to_string()),
        }
    }
}

impl From<BatchError> for CliError {
    fn from(e: BatchError) -> Self {
        match e.source {
            ControllerError::InvalidConfig(m) => CliError::Usage(m),
            ControllerError::Observation(_) => CliError::Input(e.to_string()),
            _ => CliError::Simulator(e.to_string()),
        }
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        match e {
            DiagnosticsError::Io(e) => CliError::Input(e.to_string()),
            e => CliError::Usage(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "traceprobe", version, about = "Trace-space inference over external stochastic simulators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record prior traces.
    Record(RecordArgs),
    /// Train a proposal network on recorded traces.
    Train(TrainArgs),
    /// Run posterior inference.
    Infer(InferArgs),
    /// Compute diagnostics and write CSV.
    #[command(subcommand)]
    Diagnose(DiagnoseCommand),
    /// Extract the address transition graph as DOT.
    Graph(GraphArgs),
    /// Serve a built-in reference model over the protocol.
    Serve(ServeArgs),
}

#[derive(Debug, Args, Clone)]
pub struct SimulatorArgs {
    /// Comma-separated simulator endpoints (tcp://host:port or ipc://path).
    #[arg(long = "endpoints", visible_alias = "endpoint", value_name = "E1,E2,...")]
    pub endpoints: Option<String>,
    /// Use a built-in reference model instead of endpoints.
    #[arg(long, conflicts_with = "endpoints")]
    pub model: Option<String>,
    /// Local model instances run in parallel (with --model).
    #[arg(long, default_value_t = 1, requires = "model")]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    #[command(flatten)]
    pub sim: SimulatorArgs,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Raw address (or prefix ending in `*`) of a categorical to inflate; repeatable.
    #[arg(long)]
    pub inflate: Vec<String>,
    /// Inflation temperature in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub validation: f64,
    #[arg(long, default_value_t = 5.0)]
    pub clip: f64,
    #[arg(long, default_value_t = 64)]
    pub lstm_hidden: usize,
    #[arg(long, default_value_t = 5)]
    pub components: usize,
    /// Loss curve CSV (default: `<out>.loss.csv`).
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Is,
    Ic,
    Lmh,
    Rmh,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub sim: SimulatorArgs,
    #[arg(long, value_enum)]
    pub engine: Engine,
    /// Observation: inline JSON (`1.5`, `[2,5]`) or a file of JSON or protocol Value bytes.
    #[arg(long)]
    pub obs: Option<PathBuf>,
    /// Number of traces (is, ic).
    #[arg(long)]
    pub n: Option<usize>,
    /// Chain length (lmh, rmh).
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 1)]
    pub thinning: usize,
    /// Random-walk scale (rmh).
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    /// Start the chain from the first trace of this file instead of the prior.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Proposal network (ic).
    #[arg(long)]
    pub net: Option<PathBuf>,
    /// Fix a latent: `ADDRESS#INSTANCE=VALUE` (instance defaults to 1); repeatable.
    #[arg(long)]
    pub condition: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum DiagnoseCommand {
    /// Gelman–Rubin statistic of chain joint log-probabilities.
    Gr {
        /// Chain sidecar files (`.pxs`).
        #[arg(long, num_args = 2.., required = true)]
        chains: Vec<PathBuf>,
        #[arg(long, default_value_t = 0)]
        burn_in: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Autocorrelation of a chain's joint log-probability.
    Acf {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long, default_value_t = 50)]
        max_lag: usize,
        #[arg(long, default_value_t = 0)]
        burn_in: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Effective sample size of a posterior file and optionally a chain.
    Ess {
        #[arg(long)]
        posterior: Option<PathBuf>,
        #[arg(long)]
        chain: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Weighted marginal histogram at one site.
    Marginal {
        #[arg(long)]
        posterior: PathBuf,
        #[command(flatten)]
        site: SiteArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Total-variation distance between two posteriors' marginals.
    Tv {
        #[arg(long)]
        posterior: PathBuf,
        #[arg(long)]
        other: PathBuf,
        #[command(flatten)]
        site: SiteArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args, Clone)]
pub struct SiteArgs {
    /// Raw address or short id (`A1`).
    #[arg(long)]
    pub address: String,
    #[arg(long, default_value_t = 1)]
    pub instance: u32,
    /// Integer classes `0..K`.
    #[arg(long, conflicts_with = "bins")]
    pub classes: Option<usize>,
    /// Equal-width bins (with --low/--high, else the pooled range).
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long, requires = "high", allow_negative_numbers = true)]
    pub low: Option<f64>,
    #[arg(long, requires = "low", allow_negative_numbers = true)]
    pub high: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep only traces of the K most frequent trace types.
    #[arg(long)]
    pub top: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub endpoint: String,
    /// Exit after serving this many connections.
    #[arg(long)]
    pub max_connections: Option<usize>,
}

/// Reproducibility record written next to every output as `<out>.manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub engine: Option<Engine>,
    pub endpoints: Vec<String>,
    pub model: Option<String>,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub parameters: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    fn new(subcommand: &str) -> Self {
        Self {
            tool: "traceprobe".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            engine: None,
            endpoints: Vec::new(),
            model: None,
            seed: None,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            parameters: BTreeMap::new(),
        }
    }

    fn sim(mut self, s: &SimulatorArgs) -> Self {
        self.model = s.model.clone();
        if let Some(e) = &s.endpoints {
            self.endpoints = e.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect();
        }
        if s.model.is_some() {
            self.param("workers", s.workers);
        }
        self
    }

    fn input(&mut self, name: &str, p: &Path) {
        self.inputs.insert(name.into(), p.display().to_string());
    }

    fn output(&mut self, p: &Path) {
        self.outputs.push(p.display().to_string());
    }

    fn param(&mut self, name: &str, v: impl Serialize) {
        self.parameters
            .insert(name.into(), serde_json::to_value(v).expect("serializable parameter"));
    }

    pub fn path_for(out: &Path) -> PathBuf {
        with_suffix(out, ".manifest.json")
    }

    fn write(&self, out: &Path) -> Result<(), CliError> {
        let p = Self::path_for(out);
        let body = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        std::fs::write(&p, body).map_err(|e| input_err(&p, e))
    }
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Sidecar path of a chain written to `out`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    with_suffix(out, ".pxs")
}

/// What a command printed, for callers that run it in-process.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Report {
    pub lines: Vec<String>,
}

impl Report {
    fn say(&mut self, s: String) {
        self.lines.push(s);
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Help and version requests come back as `Ok` with the text as the report.
pub fn run_args<I, T>(args: I) -> Result<Report, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => Ok(Report {
                lines: vec![e.to_string()],
            }),
            _ => Err(CliError::Usage(e.to_string())),
        },
    }
}

pub fn run(cli: Cli) -> Result<Report, CliError> {
    match cli.command {
        Command::Record(a) => record(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Diagnose(d) => diagnose(d),
        Command::Graph(a) => graph(a),
        Command::Serve(a) => serve(a),
    }
}

fn timeout() -> Result<Duration, CliError> {
    crate::protocol::timeout_from_env().map_err(|e| CliError::Usage(format!("{e} (from {TIMEOUT_ENV})")))
}

/// Validated simulator source; connecting happens in [`SimSource::open`].
enum SimSource {
    Remote(Vec<Endpoint>),
    Local(String, usize),
}

impl SimSource {
    fn parse(a: &SimulatorArgs) -> Result<Self, CliError> {
        match (&a.endpoints, &a.model) {
            (Some(list), None) => {
                let eps = parse_endpoints(list).map_err(|e| CliError::Usage(format!("--endpoints: {e}")))?;
                if eps.is_empty() {
                    return Err(CliError::Usage("--endpoints: no endpoint given".into()));
                }
                Ok(SimSource::Remote(eps))
            }
            (None, Some(m)) => {
                if crate::reference::by_name(m).is_none() {
                    return Err(CliError::Usage(format!(
                        "--model: unknown model {m:?} (known: {})",
                        crate::reference::MODEL_NAMES.join(", ")
                    )));
                }
                if a.workers == 0 {
                    return Err(CliError::Usage("--workers must be at least 1".into()));
                }
                Ok(SimSource::Local(m.clone(), a.workers))
            }
            _ => Err(CliError::Usage("one of --endpoints or --model is required".into())),
        }
    }

    fn open(&self) -> Result<Vec<Box<dyn Simulator>>, CliError> {
        match self {
            SimSource::Remote(eps) => {
                let t = timeout()?;
                eps.iter()
                    .map(|e| {
                        RemoteSimulator::connect(e, Some(t))
                            .map(|s| Box::new(s) as Box<dyn Simulator>)
                            .map_err(|err| match err {
                                RunError::Aborted => CliError::Simulator(format!("{e}: aborted")),
                                err => CliError::Simulator(format!("{e}: {err}")),
                            })
                    })
                    .collect()
            }
            SimSource::Local(name, workers) => Ok((0..*workers)
                .map(|_| {
                    let m = crate::reference::by_name(name).expect("validated model name");
                    Box::new(LocalSimulator::new(m)) as Box<dyn Simulator>
                })
                .collect()),
        }
    }
}

/// Reads `--obs`: a file of protocol Value bytes or JSON, or, when no such
/// file exists, the argument itself as inline JSON (`2.5`, `[2,5]`).
pub fn read_observation(path: &Path) -> Result<Value, CliError> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => match path.to_str() {
            Some(text) if looks_json(text.as_bytes()) => text.as_bytes().to_vec(),
            _ => return Err(input_err(path, e)),
        },
        Err(e) => return Err(input_err(path, e)),
    };
    if looks_json(&bytes) {
        return parse_json_observation(path, &bytes);
    }
    let mut r = Reader::new(&bytes);
    let v = r.value().map_err(|e| input_err(path, e))?;
    r.finish().map_err(|e| input_err(path, e))?;
    Ok(v)
}

fn looks_json(bytes: &[u8]) -> bool {
    let first = bytes.iter().find(|b| !b.is_ascii_whitespace()).copied();
    matches!(first, Some(b'[' | b'-' | b'+' | b'.' | b'0'..=b'9'))
}

fn parse_json_observation(path: &Path, bytes: &[u8]) -> Result<Value, CliError> {
    let v: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| input_err(path, format!("invalid JSON observation: {e}")))?;
    match v {
        serde_json::Value::Number(n) => Ok(Value::Real(n.as_f64().unwrap_or(f64::NAN))),
        serde_json::Value::Array(xs) => {
            let data = xs
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    x.as_f64()
                        .ok_or_else(|| input_err(path, format!("element {i} is not a number")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Value::vector(data))
        }
        _ => Err(input_err(path, "observation must be a number or an array of numbers")),
    }
}

/// Writes `v` in the protocol Value encoding.
pub fn write_observation(path: &Path, v: &Value) -> std::io::Result<()> {
    let mut w = Writer::new();
    w.value(v);
    std::fs::write(path, w.into_bytes())
}

fn parse_condition(raw: &str) -> Result<(String, u32, Value), CliError> {
    let bad = || CliError::Usage(format!("--condition {raw:?}: expected ADDRESS#INSTANCE=VALUE"));
    let (site, value) = raw.rsplit_once('=').ok_or_else(bad)?;
    let (addr, inst) = match site.rsplit_once('#') {
        Some((a, i)) if !i.is_empty() && i.bytes().all(|b| b.is_ascii_digit()) => {
            (a, i.parse::<u32>().map_err(|_| bad())?)
        }
        _ => (site, 1),
    };
    if addr.is_empty() || inst == 0 {
        return Err(bad());
    }
    let value = match value.trim() {
        "true" => Value::Boolean(true),
        "false" => Value::Boolean(false),
        v => match v.parse::<i64>() {
            Ok(i) => Value::Integer(i),
            Err(_) => Value::Real(v.parse::<f64>().map_err(|_| bad())?),
        },
    };
    Ok((addr.to_string(), inst, value))
}

fn record(a: RecordArgs) -> Result<Report, CliError> {
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&a.alpha) {
        return Err(CliError::Usage(format!("--alpha {} outside [0, 1]", a.alpha)));
    }
    let source = SimSource::parse(&a.sim)?;
    let inflation = (!a.inflate.is_empty())
        .then(|| InflationConfig::new(a.inflate.clone(), a.alpha))
        .transpose()?;
    let mut sims = source.open()?;
    let traces = run_batch(
        &mut sims,
        ExecutionMode::Record {
            inflation: inflation.as_ref(),
        },
        &ConditionSet::new(),
        None,
        a.n,
        a.seed,
    )?;
    save_traces(&a.out, &traces).map_err(|e| input_err(&a.out, e))?;
    let mut m = RunManifest::new("record").sim(&a.sim);
    m.seed = Some(a.seed);
    m.output(&a.out);
    m.param("n", a.n);
    if inflation.is_some() {
        m.param("inflate", &a.inflate);
        m.param("alpha", a.alpha);
    }
    m.write(&a.out)?;
    let mut r = Report::default();
    r.say(format!("recorded {} traces to {}", traces.len(), a.out.display()));
    Ok(r)
}

fn load_trace_file(p: &Path) -> Result<(AddressDictionary, Vec<Trace>), CliError> {
    let f = load_traces(p).map_err(|e| input_err(p, e))?;
    Ok((f.dictionary, f.traces))
}

fn train(a: TrainArgs) -> Result<Report, CliError> {
    if a.epochs == 0 {
        return Err(CliError::Usage("--epochs must be at least 1".into()));
    }
    if a.batch == 0 {
        return Err(CliError::Usage("--batch must be at least 1".into()));
    }
    if !(a.lr > 0.0 && a.lr.is_finite()) {
        return Err(CliError::Usage(format!("--lr {} must be positive", a.lr)));
    }
    if !(0.0..1.0).contains(&a.validation) {
        return Err(CliError::Usage(format!("--validation {} outside [0, 1)", a.validation)));
    }
    if a.lstm_hidden == 0 || a.components == 0 {
        return Err(CliError::Usage("--lstm-hidden and --components must be at least 1".into()));
    }
    let (_, traces) = load_trace_file(&a.data)?;
    let config = NetworkConfig {
        lstm_hidden: a.lstm_hidden,
        mixture_components: a.components,
        seed: a.seed,
        ..NetworkConfig::default()
    };
    let mut net = ProposalNetwork::for_traces(config, &traces);
    let cfg = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch,
        epochs: a.epochs,
        clip_norm: (a.clip > 0.0).then_some(a.clip),
        validation_fraction: a.validation,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let mut r = Report::default();
    let report = train_with_progress(&mut net, &traces, &cfg, |e, t, v| {
        r.say(format!("epoch {}: train {t:.6} validation {v:.6}", e + 1))
    })
    .map_err(|e| match e {
        TrainError::NonFiniteLoss { .. } => CliError::Numerical(e.to_string()),
        TrainError::InvalidConfig(m) => CliError::Usage(m),
        e => CliError::Input(format!("{}: {e}", a.data.display())),
    })?;
    save_network(&net, &a.out).map_err(|e| input_err(&a.out, e))?;
    let loss_path = a.loss_csv.clone().unwrap_or_else(|| with_suffix(&a.out, ".loss.csv"));
    write_csv(&loss_path, &loss_csv(report.initial_validation_loss, &report.train_losses, &report.validation_losses))?;
    let mut m = RunManifest::new("train");
    m.seed = Some(a.seed);
    m.input("data", &a.data);
    m.output(&a.out);
    m.output(&loss_path);
    m.param("epochs", a.epochs);
    m.param("batch", a.batch);
    m.param("lr", a.lr);
    m.param("validation", a.validation);
    m.param("clip", a.clip);
    m.param("lstm_hidden", a.lstm_hidden);
    m.param("components", a.components);
    m.write(&a.out)?;
    r.say(format!(
        "initial validation loss {:.6}; {} parameters, {} sites",
        report.initial_validation_loss,
        net.parameter_count(),
        net.sites().len()
    ));
    Ok(r)
}

fn infer(a: InferArgs) -> Result<Report, CliError> {
    let mcmc = matches!(a.engine, Engine::Lmh | Engine::Rmh);
    let count = if mcmc {
        if a.n.is_some() {
            return Err(CliError::Usage("--n applies to is/ic; use --steps for MCMC".into()));
        }
        a.steps.ok_or_else(|| CliError::Usage("--steps is required for lmh/rmh".into()))?
    } else {
        if a.steps.is_some() {
            return Err(CliError::Usage("--steps applies to lmh/rmh; use --n for is/ic".into()));
        }
        a.n.ok_or_else(|| CliError::Usage("--n is required for is/ic".into()))?
    };
    if count == 0 {
        return Err(CliError::Usage(format!(
            "{} must be at least 1",
            if mcmc { "--steps" } else { "--n" }
        )));
    }
    if a.thinning == 0 {
        return Err(CliError::Usage("--thinning must be at least 1".into()));
    }
    if !(a.sigma >= 0.0 && a.sigma.is_finite()) {
        return Err(CliError::Usage(format!("--sigma {} must be non-negative", a.sigma)));
    }
    if a.engine == Engine::Ic && a.net.is_none() {
        return Err(CliError::Usage("--net is required for --engine ic".into()));
    }
    let source = SimSource::parse(&a.sim)?;
    let mut conditions = ConditionSet::new();
    for c in &a.condition {
        let (addr, inst, v) = parse_condition(c)?;
        conditions.insert(&addr, inst, v);
    }
    let obs = a.obs.as_deref().map(read_observation).transpose()?;
    let net = match (&a.net, a.engine) {
        (Some(p), Engine::Ic) => Some(load_network(p).map_err(|e| input_err(p, e))?),
        _ => None,
    };
    let init = match &a.init {
        Some(p) => {
            let (_, ts) = load_trace_file(p)?;
            let t = ts.into_iter().next().ok_or_else(|| input_err(p, "no trace to start from"))?;
            ChainInit::Trace(t)
        }
        None => ChainInit::Prior,
    };
    let mut sims = source.open()?;
    let mut m = RunManifest::new("infer").sim(&a.sim);
    m.engine = Some(a.engine);
    m.seed = Some(a.seed);
    if let Some(p) = &a.obs {
        m.input("obs", p);
    }
    if let Some(p) = &a.net {
        m.input("net", p);
    }
    if let Some(p) = &a.init {
        m.input("init", p);
    }
    m.param("conditions", &a.condition);
    let mut r = Report::default();
    if mcmc {
        let kernel = match a.engine {
            Engine::Lmh => Kernel::Prior,
            _ => Kernel::RandomWalk(RwKernelConfig { sigma: a.sigma }),
        };
        let cfg = ChainConfig {
            steps: count,
            burn_in: a.burn_in,
            thinning: a.thinning,
            kernel,
            seed: a.seed,
        };
        let chain = run_chain(sims[0].as_mut(), init, &cfg, &conditions, obs.as_ref())?;
        write_trace_file(&a.out, &AddressDictionary::new(), &chain.samples).map_err(|e| input_err(&a.out, e))?;
        let side = sidecar_path(&a.out);
        save_sidecar(&side, &chain.log_joints, &chain.accepted).map_err(|e| input_err(&side, e))?;
        m.output(&a.out);
        m.output(&side);
        m.param("steps", count);
        m.param("burn_in", a.burn_in);
        m.param("thinning", a.thinning);
        if a.engine == Engine::Rmh {
            m.param("sigma", a.sigma);
        }
        m.write(&a.out)?;
        r.say(format!(
            "{} samples, acceptance {:.4}, failed steps {}",
            chain.samples.len(),
            chain.acceptance_rate,
            chain.failed_steps
        ));
        if chain.no_eligible_sites {
            r.say("warning: the trace has no free latent site; the chain repeats its initial trace".into());
        }
        return Ok(r);
    }
    let post = match &net {
        Some(net) => infer_ic(&mut sims, net, &conditions, obs.as_ref(), count, a.seed)?,
        None => infer_is(&mut sims, &conditions, obs.as_ref(), count, a.seed)?,
    };
    save_posterior(&a.out, &post).map_err(|e| input_err(&a.out, e))?;
    m.output(&a.out);
    m.param("n", count);
    m.write(&a.out)?;
    if post.ess() == 0.0 {
        return Err(CliError::Numerical(format!(
            "every importance weight is zero; {} written anyway",
            a.out.display()
        )));
    }
    r.say(format!(
        "{} traces, ESS {:.3}, log evidence {:.6}",
        post.len(),
        post.ess(),
        post.log_evidence()
    ));
    Ok(r)
}

/// Loads a posterior file, or a trace file as equally weighted samples.
pub fn load_weighted(p: &Path) -> Result<(AddressDictionary, WeightedPosterior), CliError> {
    let mut head = [0u8; 3];
    {
        use std::io::Read;
        let mut f = std::fs::File::open(p).map_err(|e| input_err(p, e))?;
        f.read_exact(&mut head).map_err(|e| input_err(p, e))?;
    }
    if head == crate::importance::POSTERIOR_MAGIC {
        load_posterior(p).map_err(|e| input_err(p, e))
    } else if head == crate::trace::TRACE_MAGIC {
        let (d, ts) = load_trace_file(p)?;
        Ok((d, WeightedPosterior::uniform(ts)))
    } else {
        Err(input_err(p, TraceIoError::Corrupt {
            offset: 0,
            reason: "neither a posterior nor a trace file".into(),
        }))
    }
}

fn load_series(p: &Path, burn_in: usize) -> Result<Vec<f64>, CliError> {
    let (lj, _) = load_sidecar(p).map_err(|e| input_err(p, e))?;
    Ok(lj.into_iter().skip(burn_in).collect())
}

fn site_binning(s: &SiteArgs) -> Option<Binning> {
    match (s.classes, s.bins, s.low, s.high) {
        (Some(k), _, _, _) => Some(Binning::Classes(k)),
        (None, Some(count), Some(low), Some(high)) => Some(Binning::Bins { low, high, count }),
        (None, None, Some(low), Some(high)) => Some(Binning::Bins {
            low,
            high,
            count: crate::diagnostics::DEFAULT_BINS,
        }),
        _ => None,
    }
}

fn resolve_site(dict: &AddressDictionary, s: &SiteArgs) -> String {
    dict.resolve(&s.address)
        .map(|a| a.raw().to_string())
        .unwrap_or_else(|| s.address.clone())
}

fn diagnose(d: DiagnoseCommand) -> Result<Report, CliError> {
    let mut r = Report::default();
    let mut m = RunManifest::new("diagnose");
    let out = match d {
        DiagnoseCommand::Gr { chains, burn_in, out } => {
            let series = chains
                .iter()
                .map(|p| load_series(p, burn_in))
                .collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&[f64]> = series.iter().map(Vec::as_slice).collect();
            let rhat = gelman_rubin(&refs)?;
            write_csv(&out, &statistics_csv(&[("r_hat", rhat)]))?;
            for (i, p) in chains.iter().enumerate() {
                m.input(&format!("chain{i}"), p);
            }
            m.param("statistic", "gr");
            m.param("burn_in", burn_in);
            r.say(format!("{rhat}"));
            out
        }
        DiagnoseCommand::Acf {
            chain,
            max_lag,
            burn_in,
            out,
        } => {
            let s = load_series(&chain, burn_in)?;
            let rho = autocorrelation(&s, max_lag)?;
            write_csv(&out, &acf_csv(&rho))?;
            m.input("chain", &chain);
            m.param("statistic", "acf");
            m.param("max_lag", max_lag);
            m.param("burn_in", burn_in);
            r.say(format!("lag 1: {}", rho.get(1).copied().unwrap_or(f64::NAN)));
            out
        }
        DiagnoseCommand::Ess { posterior, chain, out } => {
            if posterior.is_none() && chain.is_none() {
                return Err(CliError::Usage("give --posterior and/or --chain".into()));
            }
            let mut rows: Vec<(&str, f64)> = Vec::new();
            if let Some(p) = &posterior {
                let (_, post) = load_weighted(p)?;
                rows.push(("weighted_ess", post.ess()));
                rows.push(("samples", post.len() as f64));
                m.input("posterior", p);
            }
            if let Some(c) = &chain {
                let s = load_series(c, 0)?;
                rows.push(("chain_ess", ess_chain(&s)?));
                rows.push(("chain_length", s.len() as f64));
                m.input("chain", c);
            }
            write_csv(&out, &statistics_csv(&rows))?;
            m.param("statistic", "ess");
            for (k, v) in &rows {
                r.say(format!("{k} {v}"));
            }
            out
        }
        DiagnoseCommand::Marginal { posterior, site, out } => {
            let (dict, post) = load_weighted(&posterior)?;
            let raw = resolve_site(&dict, &site);
            let binning = site_binning(&site).unwrap_or(Binning::Auto);
            let binning = match (binning, site.bins) {
                (Binning::Auto, Some(count)) => match auto_binning(&[&post], &raw, site.instance)? {
                    Binning::Bins { low, high, .. } => Binning::Bins { low, high, count },
                    b => b,
                },
                (b, _) => b,
            };
            let h = marginal(&post, &raw, site.instance, &binning)?;
            write_csv(&out, &histogram_csv(&h))?;
            m.input("posterior", &posterior);
            m.param("statistic", "marginal");
            m.param("address", &raw);
            m.param("instance", site.instance);
            r.say(format!("{} bins, absent {}, outside {}", h.masses.len(), h.absent, h.outside));
            out
        }
        DiagnoseCommand::Tv {
            posterior,
            other,
            site,
            out,
        } => {
            let (da, pa) = load_weighted(&posterior)?;
            let (_, pb) = load_weighted(&other)?;
            let raw = resolve_site(&da, &site);
            let binning = match site_binning(&site) {
                Some(b) => b,
                None => match auto_binning(&[&pa, &pb], &raw, site.instance)? {
                    Binning::Bins { low, high, .. } if site.bins.is_some() => Binning::Bins {
                        low,
                        high,
                        count: site.bins.unwrap_or(crate::diagnostics::DEFAULT_BINS),
                    },
                    b => b,
                },
            };
            let ha = marginal(&pa, &raw, site.instance, &binning)?;
            let hb = marginal(&pb, &raw, site.instance, &binning)?;
            let tv = tv_distance(&ha, &hb)?;
            write_csv(&out, &statistics_csv(&[("tv", tv)]))?;
            m.input("posterior", &posterior);
            m.input("other", &other);
            m.param("statistic", "tv");
            m.param("address", &raw);
            m.param("instance", site.instance);
            r.say(format!("{tv}"));
            out
        }
    };
    m.output(&out);
    m.write(&out)?;
    Ok(r)
}

fn graph(a: GraphArgs) -> Result<Report, CliError> {
    if a.top == Some(0) {
        return Err(CliError::Usage("--top must be at least 1".into()));
    }
    let (dict, traces) = load_trace_file(&a.data)?;
    if traces.is_empty() {
        return Err(input_err(&a.data, "no traces"));
    }
    let traces = match a.top {
        Some(k) => most_frequent_types(&traces, k),
        None => traces,
    };
    let g = extract_graph(&traces, Some(&dict));
    std::fs::write(&a.out, g.to_dot()).map_err(|e| input_err(&a.out, e))?;
    let mut m = RunManifest::new("graph");
    m.input("data", &a.data);
    m.output(&a.out);
    if let Some(k) = a.top {
        m.param("top", k);
    }
    m.write(&a.out)?;
    let mut r = Report::default();
    r.say(format!("{} nodes, {} edges over {} traces", g.nodes.len(), g.edges.len(), g.traces));
    Ok(r)
}

fn serve(a: ServeArgs) -> Result<Report, CliError> {
    let model = crate::reference::by_name(&a.model).ok_or_else(|| {
        CliError::Usage(format!(
            "--model: unknown model {:?} (known: {})",
            a.model,
            crate::reference::MODEL_NAMES.join(", ")
        ))
    })?;
    let endpoint: Endpoint = a.endpoint.parse().map_err(|e| CliError::Usage(format!("--endpoint: {e}")))?;
    if a.max_connections == Some(0) {
        return Err(CliError::Usage("--max-connections must be at least 1".into()));
    }
    crate::frontend::serve(model.as_ref(), &endpoint, None, a.max_connections, |bound| {
        use std::io::Write;
        println!("listening on {bound}");
        let _ = std::io::stdout().flush();
    })
    .map_err(|e| CliError::Simulator(e.to_string()))?;
    Ok(Report::default())
}
