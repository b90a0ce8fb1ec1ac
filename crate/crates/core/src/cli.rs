//! Command-line front end: `run`, `compare` and `trials`.
//!
//! Every option can also come from a JSON config file (`--config`); flags
//! win over the file. A run manifest written by any command is itself a
//! valid config file, so `--config out/manifest.json` replays it.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::engine_async::{build_schedule, run_async, AsyncRunConfig, ScheduleParams};
use crate::engine_sync::{run, Method, SyncRunConfig};
use crate::error::{Error, Result};
use crate::experiments::{compare_table, run_trials, summary_csv, CompareRow, ExchangeUnit, TrialConfig, TrialSummary};
use crate::problem::{generate_quadratic_with, ConditionRegime, ProblemInstance};
use crate::topology::{regular_cycle, Graph};
use crate::trace::Trace;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "DBFGS_OUTPUT_ROOT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DIVERGENCE: i32 = 2;
pub const EXIT_IO: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Divergence { .. } | Error::NotPositiveDefinite { .. } | Error::Staleness { .. } => EXIT_DIVERGENCE,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dbfgs",
    version,
    about = "Decentralized dual BFGS consensus optimization simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one method on one instance and write its trace.
    Run(CommonArgs),
    /// Run several methods on the same instance and tabulate them.
    Compare(CommonArgs),
    /// Run many independent instances and histogram the communication cost.
    Trials(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON config file (or a previous run manifest).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Method for `run`: dbfgs or dd.
    #[arg(long)]
    pub method: Option<Method>,
    /// Comma-separated methods for `compare` and `trials`.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    /// Topology, `cycle<k>` for a k-regular cycle.
    #[arg(long)]
    pub graph: Option<String>,
    /// Condition regime: 1e2 (split intervals) or 1e0 (near identity).
    #[arg(long)]
    pub cond: Option<ConditionRegime>,
    /// Step size for `run`.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub eps_dbfgs: Option<f64>,
    #[arg(long)]
    pub eps_dd: Option<f64>,
    /// Curvature regularization.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Descent-direction regularization.
    #[arg(long = "Gamma")]
    pub big_gamma: Option<f64>,
    /// Iterations (sync) or ticks (async).
    #[arg(long)]
    pub iters: Option<usize>,
    /// Stop once the normalized error reaches this value.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Target error for exchanges-to-converge.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Use the asynchronous engine.
    #[arg(long = "async")]
    pub async_mode: bool,
    #[arg(long)]
    pub mu_d: Option<f64>,
    #[arg(long)]
    pub sigma_d: Option<f64>,
    #[arg(long = "B-bound")]
    pub b_bound: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed list such as `0..100` or `3,5,8`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Shorthand for `--seeds 0..N`.
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub bin_width: Option<f64>,
    /// Exchange unit: rounds or messages.
    #[arg(long)]
    pub unit: Option<ExchangeUnit>,
    /// Output directory; defaults to `$DBFGS_OUTPUT_ROOT/<command>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Config file schema; every field optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub method: Option<Method>,
    pub methods: Option<Vec<Method>>,
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub graph: Option<String>,
    pub cond: Option<ConditionRegime>,
    pub eps: Option<f64>,
    pub eps_dbfgs: Option<f64>,
    pub eps_dd: Option<f64>,
    pub gamma: Option<f64>,
    #[serde(rename = "Gamma")]
    pub big_gamma: Option<f64>,
    pub iters: Option<usize>,
    pub threshold: Option<f64>,
    pub delta: Option<f64>,
    #[serde(rename = "async")]
    pub async_mode: Option<bool>,
    pub mu_d: Option<f64>,
    pub sigma_d: Option<f64>,
    #[serde(rename = "B_bound")]
    pub b_bound: Option<usize>,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub bin_width: Option<f64>,
    pub unit: Option<ExchangeUnit>,
    pub out: Option<PathBuf>,
}

impl ConfigFile {
    /// Reads a config file, or the `config` section of a manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        let section = match value.get("config") {
            Some(inner) if value.get("tool").is_some() => inner.clone(),
            _ => value,
        };
        serde_json::from_value(section).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommandKind {
    #[serde(rename = "run")]
    Run,
    #[serde(rename = "compare")]
    Compare,
    #[serde(rename = "trials")]
    Trials,
}

impl CommandKind {
    fn name(self) -> &'static str {
        match self {
            Self::Run => "run",
            Self::Compare => "compare",
            Self::Trials => "trials",
        }
    }
}

/// Fully resolved and validated experiment parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub n: usize,
    pub p: usize,
    pub graph: String,
    pub cond: ConditionRegime,
    pub eps: Option<f64>,
    pub eps_dbfgs: f64,
    pub eps_dd: f64,
    pub gamma: f64,
    #[serde(rename = "Gamma")]
    pub big_gamma: f64,
    pub iters: usize,
    pub threshold: Option<f64>,
    pub delta: f64,
    #[serde(rename = "async")]
    pub async_mode: bool,
    pub mu_d: f64,
    pub sigma_d: f64,
    #[serde(rename = "B_bound")]
    pub b_bound: usize,
    pub seeds: Vec<u64>,
    pub bin_width: f64,
    pub unit: ExchangeUnit,
    pub out: PathBuf,
}

/// Default step sizes for the synchronous and asynchronous engines.
pub fn default_stepsize(method: Method, async_mode: bool) -> f64 {
    match (method, async_mode) {
        (Method::Dbfgs, false) => 0.01,
        (Method::DualDescent, false) => 0.002,
        (Method::Dbfgs, true) => 0.007,
        (Method::DualDescent, true) => 0.001,
    }
}

pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let bad = || Error::config("seeds", format!("cannot parse {spec:?} (use a..b or a,b,c)"));
    if let Some((a, b)) = spec.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b <= a {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

/// Degree of a `cycle<k>` graph spec.
pub fn parse_graph(spec: &str) -> Result<usize> {
    spec.strip_prefix("cycle")
        .and_then(|k| k.parse().ok())
        .ok_or_else(|| Error::config("graph", format!("unknown graph {spec:?} (use cycle<k>, e.g. cycle4)")))
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be positive and finite, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn resolve(kind: CommandKind, args: &CommonArgs, file: &ConfigFile) -> Result<Self> {
        let async_mode = args.async_mode || file.async_mode.unwrap_or(false);
        let methods = match kind {
            CommandKind::Run => {
                let m = args
                    .method
                    .or(file.method)
                    .or_else(|| {
                        args.methods
                            .as_ref()
                            .or(file.methods.as_ref())
                            .and_then(|v| v.first().copied())
                    })
                    .unwrap_or(Method::Dbfgs);
                vec![m]
            }
            _ => args
                .methods
                .clone()
                .or_else(|| file.methods.clone())
                .unwrap_or_else(|| vec![Method::Dbfgs, Method::DualDescent]),
        };
        let eps = args.eps.or(file.eps);
        if kind == CommandKind::Run && eps.is_none() {
            return Err(Error::config("eps", "step size is required for `run` (pass --eps)"));
        }
        let seeds = match (&args.seeds, args.trials, args.seed) {
            (Some(s), _, _) => parse_seeds(s)?,
            (None, Some(k), _) => (0..k).collect(),
            (None, None, Some(s)) => vec![s],
            (None, None, None) => match (&file.seeds, file.seed) {
                (Some(s), _) => s.clone(),
                (None, Some(s)) => vec![s],
                (None, None) if kind == CommandKind::Trials => (0..100).collect(),
                (None, None) => vec![0],
            },
        };
        let default_iters = match (kind, async_mode) {
            (CommandKind::Trials, false) => 5000,
            (CommandKind::Trials, true) => 20000,
            (_, false) => 500,
            (_, true) => 5000,
        };
        let out = match args.out.clone().or_else(|| file.out.clone()) {
            Some(dir) => dir,
            None => std::env::var_os(OUTPUT_ROOT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("runs"))
                .join(kind.name()),
        };
        let schedule_defaults = ScheduleParams::default();
        let cfg = Self {
            methods,
            n: args.n.or(file.n).unwrap_or(50),
            p: args.p.or(file.p).unwrap_or(4),
            graph: args
                .graph
                .clone()
                .or_else(|| file.graph.clone())
                .unwrap_or_else(|| "cycle4".into()),
            cond: args.cond.or(file.cond).unwrap_or_default(),
            eps,
            eps_dbfgs: args
                .eps_dbfgs
                .or(file.eps_dbfgs)
                .unwrap_or(default_stepsize(Method::Dbfgs, async_mode)),
            eps_dd: args
                .eps_dd
                .or(file.eps_dd)
                .unwrap_or(default_stepsize(Method::DualDescent, async_mode)),
            gamma: args.gamma.or(file.gamma).unwrap_or(1e-2),
            big_gamma: args.big_gamma.or(file.big_gamma).unwrap_or(1e-3),
            iters: args.iters.or(file.iters).unwrap_or(default_iters),
            threshold: args.threshold.or(file.threshold),
            delta: args
                .delta
                .or(file.delta)
                .unwrap_or(if async_mode { 5e-2 } else { 1e-2 }),
            async_mode,
            mu_d: args.mu_d.or(file.mu_d).unwrap_or(schedule_defaults.mean_gap),
            sigma_d: args.sigma_d.or(file.sigma_d).unwrap_or(schedule_defaults.std_gap),
            b_bound: args.b_bound.or(file.b_bound).unwrap_or(schedule_defaults.b_bound),
            seeds,
            bin_width: args.bin_width.or(file.bin_width).unwrap_or(10.0),
            unit: args.unit.or(file.unit).unwrap_or_default(),
            out,
        };
        cfg.validate(kind)?;
        Ok(cfg)
    }

    pub fn validate(&self, kind: CommandKind) -> Result<()> {
        if self.n < 2 {
            return Err(Error::config("n", "need at least two nodes"));
        }
        if self.p == 0 {
            return Err(Error::config("p", "must be at least 1"));
        }
        let degree = parse_graph(&self.graph)?;
        if degree == 0 || degree % 2 == 1 || degree >= self.n {
            return Err(Error::config(
                "graph",
                format!("cycle{degree} needs an even degree below n = {}", self.n),
            ));
        }
        if let Some(eps) = self.eps {
            positive("eps", eps)?;
        }
        positive("eps_dbfgs", self.eps_dbfgs)?;
        positive("eps_dd", self.eps_dd)?;
        positive("gamma", self.gamma)?;
        if !(self.big_gamma >= 0.0 && self.big_gamma.is_finite()) {
            return Err(Error::config("Gamma", "must be non-negative"));
        }
        if self.iters == 0 {
            return Err(Error::config("iters", "must be at least 1"));
        }
        if let Some(th) = self.threshold {
            positive("threshold", th)?;
        }
        positive("delta", self.delta)?;
        positive("bin_width", self.bin_width)?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        if kind == CommandKind::Compare && self.methods.len() < 2 {
            return Err(Error::config("methods", "compare needs at least two methods"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("methods", "need at least one method"));
        }
        if self.async_mode {
            if !(self.mu_d >= 1.0) {
                return Err(Error::config("mu_d", "must be at least 1"));
            }
            if !(self.sigma_d >= 0.0) {
                return Err(Error::config("sigma_d", "must be non-negative"));
            }
            if self.b_bound < 3 {
                return Err(Error::config("B_bound", "must be at least 3"));
            }
        }
        Ok(())
    }

    pub fn stepsize(&self, method: Method) -> f64 {
        match (self.eps, self.methods.len()) {
            (Some(eps), 1) => eps,
            _ => match method {
                Method::Dbfgs => self.eps_dbfgs,
                Method::DualDescent => self.eps_dd,
            },
        }
    }

    pub fn degree(&self) -> usize {
        parse_graph(&self.graph).expect("validated")
    }

    pub fn schedule_params(&self, seed: u64) -> ScheduleParams {
        ScheduleParams {
            n: self.n,
            horizon: self.iters,
            mean_gap: self.mu_d,
            std_gap: self.sigma_d,
            b_bound: self.b_bound,
            seed,
        }
    }

    fn instance(&self, seed: u64) -> Result<(ProblemInstance, Graph)> {
        Ok((
            generate_quadratic_with(self.n, self.p, seed, self.cond)?,
            regular_cycle(self.n, self.degree())?,
        ))
    }

    fn trace(&self, method: Method, seed: u64, prob: &ProblemInstance, graph: &Graph) -> Result<Trace> {
        let stepsize = self.stepsize(method);
        if self.async_mode {
            let schedule = build_schedule(self.schedule_params(seed))?;
            run_async(
                &AsyncRunConfig {
                    method,
                    stepsize,
                    gamma: self.gamma,
                    big_gamma: self.big_gamma,
                    threshold: self.threshold,
                    init_scale: 1.0,
                },
                prob,
                graph,
                &schedule,
            )
        } else {
            run(
                &SyncRunConfig {
                    method,
                    stepsize,
                    max_iters: self.iters,
                    gamma: self.gamma,
                    big_gamma: self.big_gamma,
                    threshold: self.threshold,
                    init_scale: 1.0,
                },
                prob,
                graph,
            )
        }
    }

    fn trial_config(&self, method: Method) -> TrialConfig {
        TrialConfig {
            n: self.n,
            p: self.p,
            degree: self.degree(),
            regime: self.cond,
            method,
            stepsize: self.stepsize(method),
            gamma: self.gamma,
            big_gamma: self.big_gamma,
            max_iters: self.iters,
            threshold: self.delta,
            init_scale: 1.0,
            schedule: self.async_mode.then(|| self.schedule_params(0)),
            unit: self.unit,
        }
    }

    /// The file-schema form, used inside manifests.
    pub fn as_file(&self) -> ConfigFile {
        ConfigFile {
            method: (self.methods.len() == 1).then(|| self.methods[0]),
            methods: Some(self.methods.clone()),
            n: Some(self.n),
            p: Some(self.p),
            graph: Some(self.graph.clone()),
            cond: Some(self.cond),
            eps: self.eps,
            eps_dbfgs: Some(self.eps_dbfgs),
            eps_dd: Some(self.eps_dd),
            gamma: Some(self.gamma),
            big_gamma: Some(self.big_gamma),
            iters: Some(self.iters),
            threshold: self.threshold,
            delta: Some(self.delta),
            async_mode: Some(self.async_mode),
            mu_d: Some(self.mu_d),
            sigma_d: Some(self.sigma_d),
            b_bound: Some(self.b_bound),
            seed: None,
            seeds: Some(self.seeds.clone()),
            bin_width: Some(self.bin_width),
            unit: Some(self.unit),
            out: Some(self.out.clone()),
        }
    }
}

/// Everything needed to reproduce an output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: CommandKind,
    pub config: ConfigFile,
    pub files: Vec<String>,
}

struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.dir.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn finish(mut self, kind: CommandKind, cfg: &ExperimentConfig) -> Result<PathBuf> {
        self.files.push("manifest.json".into());
        let manifest = Manifest {
            tool: "dbfgs".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: kind,
            config: cfg.as_file(),
            files: self.files.clone(),
        };
        fs::write(
            self.dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        Ok(self.dir)
    }
}

pub fn cmd_run(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let method = cfg.methods[0];
    let seed = cfg.seeds[0];
    let (prob, graph) = cfg.instance(seed)?;
    let trace = cfg.trace(method, seed, &prob, &graph)?;
    let mut out = Output::create(&cfg.out)?;
    out.write("trace.csv", &trace.to_csv())?;
    out.write("problem.json", &prob.to_json()?)?;
    if cfg.async_mode {
        out.write("schedule.json", &build_schedule(cfg.schedule_params(seed))?.to_json()?)?;
    }
    if let Some(last) = trace.last() {
        println!(
            "{method} seed {seed}: t = {}, err = {:.6e}, |g| = {:.6e}",
            last.t, last.err, last.grad_norm
        );
    }
    out.finish(CommandKind::Run, cfg)
}

pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let seed = cfg.seeds[0];
    let (prob, graph) = cfg.instance(seed)?;
    let mut out = Output::create(&cfg.out)?;
    let mut rows = Vec::new();
    for (k, &method) in cfg.methods.iter().enumerate() {
        let trace = cfg.trace(method, seed, &prob, &graph)?;
        out.write(&format!("trace_{k}_{method}.csv"), &trace.to_csv())?;
        rows.push(CompareRow::from_trace(method, &trace, cfg.delta, cfg.unit));
    }
    let table = compare_table(&rows);
    print!("{table}");
    out.write("compare.txt", &table)?;
    out.write("compare.json", &serde_json::to_string_pretty(&rows)?)?;
    out.finish(CommandKind::Compare, cfg)
}

pub fn cmd_trials(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let mut out = Output::create(&cfg.out)?;
    let mut all: Vec<TrialSummary> = Vec::new();
    for &method in &cfg.methods {
        let report = run_trials(&cfg.trial_config(method), &cfg.seeds, cfg.bin_width)?;
        let median = report
            .median_exchanges()
            .map_or_else(|| "-".to_string(), |m| format!("{m}"));
        println!(
            "{method}: {}/{} converged, median exchanges {median}",
            report.converged_count(),
            report.summaries.len()
        );
        out.write(&format!("histogram_{method}.json"), &report.histogram.to_json()?)?;
        all.extend(report.summaries);
    }
    out.write("summary.csv", &summary_csv(&all))?;
    out.finish(CommandKind::Trials, cfg)
}

pub fn execute(cli: Cli) -> Result<PathBuf> {
    let (kind, args) = match cli.command {
        Command::Run(a) => (CommandKind::Run, a),
        Command::Compare(a) => (CommandKind::Compare, a),
        Command::Trials(a) => (CommandKind::Trials, a),
    };
    let file = match &args.config {
        Some(path) => ConfigFile::load(path).map_err(|e| match e {
            Error::Io(io) => Error::config("config", format!("{}: {io}", path.display())),
            other => other,
        })?,
        None => ConfigFile::default(),
    };
    let cfg = ExperimentConfig::resolve(kind, &args, &file)?;
    match kind {
        CommandKind::Run => cmd_run(&cfg),
        CommandKind::Compare => cmd_compare(&cfg),
        CommandKind::Trials => cmd_trials(&cfg),
    }
}

/// Parses arguments, runs, reports errors on stderr; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(kind: CommandKind, argv: &[&str]) -> Result<ExperimentConfig> {
        let mut full = vec!["dbfgs", kind.name()];
        full.extend_from_slice(argv);
        let cli = Cli::try_parse_from(full).unwrap();
        let (Command::Run(a) | Command::Compare(a) | Command::Trials(a)) = cli.command;
        ExperimentConfig::resolve(kind, &a, &ConfigFile::default())
    }

    #[test]
    fn defaults_follow_the_benchmark() {
        let cfg = resolve(CommandKind::Compare, &[]).unwrap();
        assert_eq!((cfg.n, cfg.p, cfg.degree()), (50, 4, 4));
        assert_eq!((cfg.gamma, cfg.big_gamma), (1e-2, 1e-3));
        assert_eq!(
            (cfg.stepsize(Method::Dbfgs), cfg.stepsize(Method::DualDescent)),
            (0.01, 0.002)
        );
        let cfg = resolve(CommandKind::Compare, &["--async"]).unwrap();
        assert_eq!(
            (cfg.stepsize(Method::Dbfgs), cfg.stepsize(Method::DualDescent)),
            (0.007, 0.001)
        );
        assert_eq!(cfg.delta, 5e-2);
        assert_eq!((cfg.mu_d, cfg.sigma_d, cfg.b_bound), (3.0, 1.0, 12));
    }

    #[test]
    fn run_requires_eps() {
        match resolve(CommandKind::Run, &["--method", "dd"]) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "eps"),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            resolve(CommandKind::Run, &["--eps", "0.1"])
                .unwrap()
                .stepsize(Method::Dbfgs),
            0.1
        );
    }

    #[test]
    fn seeds_and_graph_specs() {
        assert_eq!(parse_seeds("2..5").unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_seeds("7, 1").unwrap(), vec![7, 1]);
        assert!(parse_seeds("5..5").is_err());
        assert!(parse_seeds("x").is_err());
        assert_eq!(parse_graph("cycle6").unwrap(), 6);
        assert!(parse_graph("ring").is_err());
        assert!(resolve(CommandKind::Compare, &["--graph", "cycle3"]).is_err());
        assert_eq!(resolve(CommandKind::Trials, &[]).unwrap().seeds.len(), 100);
        assert_eq!(
            resolve(CommandKind::Trials, &["--trials", "3"]).unwrap().seeds,
            vec![0, 1, 2]
        );
    }

    #[test]
    fn flags_override_file() {
        let file = ConfigFile {
            n: Some(12),
            p: Some(2),
            eps: Some(0.5),
            ..Default::default()
        };
        let cli = Cli::try_parse_from(["dbfgs", "run", "--p", "6"]).unwrap();
        let Command::Run(a) = cli.command else { unreachable!() };
        let cfg = ExperimentConfig::resolve(CommandKind::Run, &a, &file).unwrap();
        assert_eq!((cfg.n, cfg.p, cfg.eps), (12, 6, Some(0.5)));
    }

    #[test]
    fn compare_needs_two_methods() {
        assert!(resolve(CommandKind::Compare, &["--methods", "dd"]).is_err());
        assert!(resolve(CommandKind::Compare, &["--methods", "dd,dd"]).is_ok());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::config("x", "y")), EXIT_CONFIG);
        assert_eq!(
            exit_code(&Error::Divergence {
                iteration: 1,
                what: "x"
            }),
            EXIT_DIVERGENCE
        );
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), EXIT_IO);
    }
}
