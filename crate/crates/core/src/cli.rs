//! Command-line front end: config parsing, experiment orchestration and artifacts.
//!
//! Every command reads one JSON config with `model`, `observable` and
//! `experiment` sections; flags override the experiment section. Outputs go
//! to `--out` (default `qtraj-out`) together with a `manifest.json`.
//!
//! CSV headers per command:
//!
//! | command       | file                   | columns |
//! |---------------|------------------------|---------|
//! | `simulate`    | `trajectory_NNNN.csv`  | `step,branch_index,weight,re_0,im_0,…,distance_to_estimator` |
//! | `poisson`     | `poisson_probes.csv`   | `probe,re_0,im_0,…,g_tilde,poisson_residual,residual_bound` |
//! | `clt`         | `clt_samples.csv`      | `replica,normalized` |
//! | `clt`         | `fclt_covariance.csv`  | `s,t,covariance,target` |
//! | `lil`         | `lil_envelopes.csv`    | `replica,max_plus,max_minus` |
//! | `mdp`         | `mdp_cumulant.csv`     | `z,lambda_hat,std_error,literal,literal_std_error,target` |
//! | `wasserstein` | `decay.csv`            | `n,W1,stderr` |
//!
//! Exit codes: 0 ok, 1 domain failure, 2 input error, 3 assumption violation.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::assumptions::{assess, AssumptionReport};
use crate::engine::{run_replicas, sample_trajectory, Initial, TrajectoryConfig, ZeroBranchPolicy};
use crate::error::Error;
use crate::kernel::{
    default_probes, gamma_sq_ergodic, solve_poisson, MeanSource, Observable, PoissonConfig, VarianceMethod,
};
use crate::measures::{cesaro_pushforward, fit_lambda, DiscreteMeasure, FitOptions};
use crate::model::{KrausFamily, ProjectiveState, C64};
use crate::plot::{self, Series};
use crate::reference::{random_valid_family, KeepSwitchModel};
use crate::stats::{self, LimitSetup};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ASSUMPTION: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "qtraj", version, about = "Quantum trajectory simulation and limit-theorem diagnostics")]
pub struct Cli {
    /// Worker threads for replica sampling.
    #[arg(long, env = "QTRAJ_THREADS", global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse the model and check Σ A_i* A_i = Id.
    Validate { config: PathBuf },
    /// Run the purification and ergodicity checkers.
    Check(RunArgs),
    /// Sample trajectories and dump them as CSV.
    Simulate(RunArgs),
    /// Solve the Poisson equation on probe states.
    Poisson(RunArgs),
    /// CLT and functional CLT checks.
    Clt(RunArgs),
    /// Law of the iterated logarithm envelopes.
    Lil(RunArgs),
    /// Moderate deviation cumulant estimates.
    Mdp(RunArgs),
    /// Wasserstein decay of the Cesàro pushforward.
    Wasserstein(RunArgs),
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// `population:k` or `constant:c`.
    #[arg(long)]
    pub observable: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Also write SVG charts.
    #[arg(long)]
    pub plot: bool,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Lib(Error),
    Input(String),
    Assumption(Box<AssumptionReport>),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Assumption(_) => EXIT_ASSUMPTION,
            CliError::Lib(e) => match e {
                Error::Json(_)
                | Error::Io(_)
                | Error::InvalidParameter(_)
                | Error::DimensionMismatch { .. }
                | Error::EmptyFamily
                | Error::InvalidIndex { .. } => EXIT_INPUT,
                Error::ErgodicityNotVerified | Error::NonUniqueFixedPoint { .. } => EXIT_ASSUMPTION,
                _ => EXIT_DOMAIN,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Lib(e) => e.to_string(),
            CliError::Input(m) => m.clone(),
            CliError::Assumption(r) => format!(
                "assumptions not verified\n{}",
                serde_json::to_string_pretty(r).unwrap_or_default()
            ),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

// ---------------------------------------------------------------------------
// Config

/// Where the Kraus family comes from.
#[derive(Clone, Debug)]
pub enum ModelSpec {
    KeepSwitch(f64),
    Random { dim: usize, count: usize, seed: u64 },
    Family(KrausFamily),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RandomSpec {
    dim: usize,
    count: usize,
    #[serde(default)]
    seed: u64,
}

impl ModelSpec {
    fn from_value(v: Value) -> CliResult<Self> {
        let obj = v.as_object().ok_or_else(|| CliError::Input("model must be a JSON object".into()))?;
        if let Some(p) = obj.get("keep_switch") {
            let p = p.as_f64().ok_or_else(|| CliError::Input("keep_switch expects a number p".into()))?;
            return Ok(ModelSpec::KeepSwitch(p));
        }
        if let Some(r) = obj.get("random") {
            let r: RandomSpec =
                serde_json::from_value(r.clone()).map_err(|e| CliError::Input(format!("model.random: {e}")))?;
            return Ok(ModelSpec::Random { dim: r.dim, count: r.count, seed: r.seed });
        }
        let tolerance = obj.get("tolerance").and_then(Value::as_f64);
        let mut stripped = obj.clone();
        stripped.remove("tolerance");
        let fam: KrausFamily =
            serde_json::from_value(Value::Object(stripped)).map_err(|e| CliError::Input(format!("model: {e}")))?;
        Ok(ModelSpec::Family(match tolerance {
            Some(t) => fam.with_tolerance(t),
            None => fam,
        }))
    }

    fn label(&self) -> String {
        match self {
            ModelSpec::KeepSwitch(p) => format!("keep_switch(p={p})"),
            ModelSpec::Random { dim, count, seed } => format!("random(d={dim},K={count},seed={seed})"),
            ModelSpec::Family(f) => format!("family(d={},K={})", f.dim(), f.len()),
        }
    }
}

#[derive(Deserialize, Clone, Debug)]
#[serde(untagged)]
enum InitialSpec {
    Named(String),
    State { state: Vec<[f64; 2]> },
    Measure { measure: DiscreteMeasure },
}

#[derive(Deserialize, Default, Clone, Debug)]
#[serde(default, deny_unknown_fields)]
struct ExperimentSection {
    seed: Option<u64>,
    n: Option<usize>,
    replicas: Option<usize>,
    burn_in: Option<usize>,
    beta: Option<f64>,
    initial: Option<InitialSpec>,
    tol: Option<f64>,
    probes: Option<usize>,
    gamma_samples: Option<usize>,
    max_word_len: Option<usize>,
    n_min: Option<usize>,
    z: Option<Vec<f64>>,
    t: Option<Vec<f64>>,
    n_grid: Option<Vec<usize>>,
    /// Used by `simulate`; the other commands abort.
    zero_branch: Option<ZeroBranchPolicy>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    model: Value,
    #[serde(default)]
    observable: Option<String>,
    #[serde(default)]
    experiment: ExperimentSection,
}

/// A parsed config with its digest.
pub struct Config {
    pub model: ModelSpec,
    pub family: KrausFamily,
    observable: Option<String>,
    experiment: ExperimentSection,
    pub digest: String,
}

fn input_error(path: &Path, e: &serde_json::Error) -> CliError {
    CliError::Input(format!("{}: malformed JSON at line {}, column {}: {e}", path.display(), e.line(), e.column()))
}

/// Reads a config; a document without a `model` key is taken as the model itself.
pub fn load_config(path: &Path) -> CliResult<Config> {
    let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let digest = hex::encode(Sha256::digest(&bytes));
    let value: Value = serde_json::from_slice(&bytes).map_err(|e| input_error(path, &e))?;
    let file = if value.get("model").is_some() {
        serde_json::from_value::<ConfigFile>(value).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
    } else {
        ConfigFile { model: value, observable: None, experiment: ExperimentSection::default() }
    };
    let model = ModelSpec::from_value(file.model)?;
    let family = match &model {
        ModelSpec::KeepSwitch(p) => KeepSwitchModel::new(*p)?.family(),
        ModelSpec::Random { dim, count, seed } => random_valid_family(*dim, *count, *seed)?,
        ModelSpec::Family(f) => f.clone(),
    };
    Ok(Config { model, family, observable: file.observable, experiment: file.experiment, digest })
}

/// Parses `population:k` or `constant:c`.
pub fn parse_observable(spec: &str, dim: usize) -> CliResult<Observable> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    match kind {
        "population" => {
            let k: usize = if arg.is_empty() { 0 } else { arg.parse().map_err(|_| bad_observable(spec))? };
            if k >= dim {
                return Err(CliError::Input(format!("population index {k} out of range for d = {dim}")));
            }
            Ok(Observable::population(k))
        }
        "constant" => Ok(Observable::constant(arg.parse().map_err(|_| bad_observable(spec))?)),
        _ => Err(bad_observable(spec)),
    }
}

fn bad_observable(spec: &str) -> CliError {
    CliError::Input(format!("unknown observable {spec:?}; expected population:k or constant:c"))
}

fn parse_initial(spec: Option<&InitialSpec>, dim: usize) -> CliResult<Initial> {
    let named = |name: &str| -> CliResult<Initial> {
        if name == "uniform" {
            return Ok(ProjectiveState::from_real(&vec![1.0; dim])?.into());
        }
        if let Some(k) = name.strip_prefix("basis:") {
            let k: usize = k.parse().map_err(|_| CliError::Input(format!("bad initial {name:?}")))?;
            if k >= dim {
                return Err(CliError::Input(format!("basis index {k} out of range for d = {dim}")));
            }
            return Ok(ProjectiveState::basis(dim, k).into());
        }
        Err(CliError::Input(format!("unknown initial {name:?}; expected uniform, basis:k, {{state}} or {{measure}}")))
    };
    let initial = match spec {
        None => named("uniform")?,
        Some(InitialSpec::Named(s)) => named(s)?,
        Some(InitialSpec::State { state }) => {
            let v: Vec<C64> = state.iter().map(|[re, im]| C64::new(*re, *im)).collect();
            ProjectiveState::from_vector(&v)?.into()
        }
        Some(InitialSpec::Measure { measure }) => measure.clone().into(),
    };
    if initial.dim() != dim {
        return Err(CliError::Lib(Error::DimensionMismatch { expected: dim, found: initial.dim() }));
    }
    Ok(initial)
}

/// Config merged with command-line overrides.
struct Resolved {
    cfg: Config,
    observable: Observable,
    initial: Initial,
    seed: u64,
    n: Option<usize>,
    replicas: Option<usize>,
    burn_in: usize,
    beta: Option<f64>,
    out: PathBuf,
    plot: bool,
}

impl Resolved {
    fn new(args: &RunArgs) -> CliResult<Self> {
        let cfg = load_config(&args.config)?;
        let d = cfg.family.dim();
        let obs_spec = args.observable.clone().or_else(|| cfg.observable.clone()).unwrap_or_else(|| "population:0".into());
        let observable = parse_observable(&obs_spec, d)?;
        let initial = parse_initial(cfg.experiment.initial.as_ref(), d)?;
        let ex = &cfg.experiment;
        Ok(Self {
            observable,
            initial,
            seed: args.seed.or(ex.seed).unwrap_or(0),
            n: args.n.or(ex.n),
            replicas: args.replicas.or(ex.replicas),
            burn_in: args.burn_in.or(ex.burn_in).unwrap_or(0),
            beta: args.beta.or(ex.beta),
            out: args.out.clone().unwrap_or_else(|| PathBuf::from("qtraj-out")),
            plot: args.plot,
            cfg,
        })
    }

    fn keep_switch(&self) -> Option<KeepSwitchModel> {
        match self.cfg.model {
            ModelSpec::KeepSwitch(p) => KeepSwitchModel::new(p).ok(),
            _ => None,
        }
    }

    /// Runs the checkers and refuses to continue unless both hypotheses hold.
    fn gate(&self) -> CliResult<AssumptionReport> {
        self.cfg.family.ensure_stochastic()?;
        let report = assess(&self.cfg.family, self.cfg.experiment.max_word_len);
        if !report.holds() {
            fs::create_dir_all(&self.out)?;
            fs::write(self.out.join("assumptions.json"), to_json(&report)?)?;
            return Err(CliError::Assumption(Box::new(report)));
        }
        Ok(report)
    }
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Serialize, Debug)]
pub struct OutputEntry {
    pub path: String,
    pub summary: Value,
}

/// Record of one run: enough to replay it and locate its artifacts.
#[derive(Serialize, Debug)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub command: String,
    pub config_path: String,
    pub config_digest: String,
    pub master_seed: u64,
    pub model: String,
    pub outputs: Vec<OutputEntry>,
    /// Wall-clock milliseconds per phase.
    pub timings_ms: Vec<(String, f64)>,
}

struct Run {
    out: PathBuf,
    manifest: RunManifest,
    clock: Instant,
}

impl Run {
    fn new(command: &str, args: &RunArgs, res: &Resolved) -> CliResult<Self> {
        fs::create_dir_all(&res.out)?;
        Ok(Self {
            out: res.out.clone(),
            manifest: RunManifest {
                tool_version: env!("CARGO_PKG_VERSION"),
                command: command.into(),
                config_path: args.config.display().to_string(),
                config_digest: res.cfg.digest.clone(),
                master_seed: res.seed,
                model: res.cfg.model.label(),
                outputs: Vec::new(),
                timings_ms: Vec::new(),
            },
            clock: Instant::now(),
        })
    }

    fn lap(&mut self, phase: &str) {
        let ms = self.clock.elapsed().as_secs_f64() * 1e3;
        self.manifest.timings_ms.push((phase.into(), ms));
        self.clock = Instant::now();
    }

    fn write(&mut self, name: &str, bytes: &[u8], summary: Value) -> CliResult<()> {
        fs::write(self.out.join(name), bytes)?;
        self.manifest.outputs.push(OutputEntry { path: name.into(), summary });
        Ok(())
    }

    fn finish(mut self) -> CliResult<()> {
        self.lap("write");
        let text = to_json(&self.manifest)?;
        fs::write(self.out.join("manifest.json"), text)?;
        println!("wrote {}", self.out.display());
        Ok(())
    }
}

fn to_json<T: Serialize>(v: &T) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(v).map_err(Error::from)? + "\n")
}

// ---------------------------------------------------------------------------
// Mean and variance

#[derive(Serialize, Clone, Debug)]
struct Moments {
    mean: f64,
    mean_source: &'static str,
    gamma_sq: f64,
    gamma_method: VarianceMethod,
    gamma_std_error: f64,
}

const DEFAULT_GAMMA_SAMPLES: usize = 2000;
const DEFAULT_MOMENT_PROBES: usize = 20;

/// Exact values for Keep-Switch, otherwise a Poisson solve plus an ergodic `h` average.
fn moments(res: &Resolved, report: &AssumptionReport) -> CliResult<Moments> {
    if let Some(ks) = res.keep_switch() {
        let o = ks.oracles(&res.observable);
        return Ok(Moments {
            mean: o.mean,
            mean_source: "exact",
            gamma_sq: o.gamma_sq,
            gamma_method: VarianceMethod::AtomsExact,
            gamma_std_error: 0.0,
        });
    }
    let fam = &res.cfg.family;
    let ex = &res.cfg.experiment;
    let probes = default_probes(fam.dim(), ex.probes.unwrap_or(DEFAULT_MOMENT_PROBES), res.seed);
    let pcfg = PoissonConfig {
        period: report.period_m.unwrap_or(1),
        tol: ex.tol.unwrap_or(PoissonConfig::default().tol),
        ..PoissonConfig::default()
    };
    let sol = solve_poisson(fam, &res.observable, MeanSource::KernelLimit, &probes, &pcfg)?;
    let samples = ex.gamma_samples.unwrap_or(DEFAULT_GAMMA_SAMPLES);
    let path = sample_trajectory(
        &TrajectoryConfig::new(fam, res.initial.clone(), samples + res.burn_in, res.seed).with_replica(u64::MAX),
    )?;
    let v = gamma_sq_ergodic(&sol, &path.states[res.burn_in..])?;
    Ok(Moments {
        mean: sol.mean(),
        mean_source: "kernel_limit",
        gamma_sq: v.gamma_sq,
        gamma_method: v.method,
        gamma_std_error: v.std_error,
    })
}

// ---------------------------------------------------------------------------
// Commands

fn cmd_validate(config: &Path) -> CliResult<()> {
    let cfg = load_config(config)?;
    let report = cfg.family.validate_stochasticity();
    println!("{}", to_json(&json!({ "model": cfg.model.label(), "dim": cfg.family.dim(), "operators": cfg.family.len(), "stochasticity": report }))?.trim_end());
    if report.pass {
        Ok(())
    } else {
        Err(Error::NonStochastic { residual: report.residual, tolerance: report.tolerance }.into())
    }
}

fn cmd_check(args: &RunArgs) -> CliResult<()> {
    let res = Resolved::new(args)?;
    let mut run = Run::new("check", args, &res)?;
    res.cfg.family.ensure_stochastic()?;
    let report = assess(&res.cfg.family, res.cfg.experiment.max_word_len);
    run.lap("assess");
    let text = to_json(&report)?;
    print!("{text}");
    run.write("assumptions.json", text.as_bytes(), json!({ "holds": report.holds() }))?;
    let holds = report.holds();
    run.finish()?;
    if holds {
        Ok(())
    } else {
        Err(CliError::Assumption(Box::new(report)))
    }
}

fn cmd_simulate(args: &RunArgs) -> CliResult<()> {
    let res = Resolved::new(args)?;
    let fam = &res.cfg.family;
    fam.ensure_stochastic()?;
    let n = res.n.unwrap_or(1000);
    let replicas = res.replicas.unwrap_or(1);
    if res.burn_in > n {
        return Err(CliError::Input(format!("burn-in {} exceeds n = {n}", res.burn_in)));
    }
    let mut run = Run::new("simulate", args, &res)?;
    let template = TrajectoryConfig::new(fam, res.initial.clone(), n, res.seed)
        .with_zero_branch(res.cfg.experiment.zero_branch.unwrap_or_default());
    let paths = run_replicas(replicas, |r| sample_trajectory(&template.with_replica(r)))?;
    run.lap("sample");
    let mut rows = Vec::with_capacity(replicas);
    for (r, path) in paths.iter().enumerate() {
        let mut csv = Vec::new();
        path.write_csv(fam, &mut csv)?;
        let tail = &path.states[res.burn_in..];
        let avg = tail.iter().map(|x| res.observable.eval(x)).sum::<f64>() / tail.len() as f64;
        let name = format!("trajectory_{r:04}.csv");
        run.write(&name, &csv, json!({ "replica": r, "steps": n, "observable_mean": avg }))?;
        rows.push(json!({ "replica": r, "observable_mean": avg, "final_state": path.states[n].to_string() }));
        if res.plot && r == 0 {
            let est = crate::engine::evolved_estimator(fam, path)?;
            let dist: Vec<(f64, f64)> =
                path.states.iter().zip(&est).enumerate().map(|(k, (x, y))| (k as f64, x.distance(y))).collect();
            let svg = plot::line_chart("distance to estimator", "step", "d(x_n, y_n)", &[Series::new("replica 0", dist)]);
            run.write("trajectory_0000.svg", svg.as_bytes(), Value::Null)?;
        }
    }
    let report = json!({
        "command": "simulate",
        "model": res.cfg.model.label(),
        "observable": res.observable.name(),
        "seed": res.seed,
        "n": n,
        "burn_in": res.burn_in,
        "replicas": rows,
    });
    run.write("simulate.json", to_json(&report)?.as_bytes(), Value::Null)?;
    run.finish()
}

fn cmd_poisson(args: &RunArgs) -> CliResult<()> {
    let res = Resolved::new(args)?;
    let assumptions = res.gate()?;
    let mut run = Run::new("poisson", args, &res)?;
    let fam = &res.cfg.family;
    let ex = &res.cfg.experiment;
    let probes = default_probes(fam.dim(), ex.probes.unwrap_or(100), res.seed);
    let pcfg = PoissonConfig {
        period: assumptions.period_m.unwrap_or(1),
        tol: ex.tol.unwrap_or(PoissonConfig::default().tol),
        ..PoissonConfig::default()
    };
    let mean = match res.keep_switch() {
        Some(ks) => MeanSource::Exact(ks.oracles(&res.observable).mean),
        None => MeanSource::KernelLimit,
    };
    let sol = solve_poisson(fam, &res.observable, mean, &probes, &pcfg)?;
    run.lap("solve");
    let d = fam.dim();
    let mut csv = String::from("probe");
    for k in 0..d {
        let _ = write!(csv, ",re_{k},im_{k}");
    }
    csv.push_str(",g_tilde,poisson_residual,residual_bound\n");
    let mut worst = 0.0f64;
    for (i, x) in probes.iter().enumerate() {
        let _ = write!(csv, "{i}");
        for z in x.amplitudes() {
            let _ = write!(csv, ",{},{}", z.re, z.im);
        }
        let resid = sol.poisson_residual(x);
        worst = worst.max(resid.abs());
        let _ = writeln!(csv, ",{},{},{}", sol.eval(x), resid, sol.residual_bound_at(x));
    }
    run.lap("evaluate");
    let diag = sol.diagnostics();
    run.write("poisson_probes.csv", csv.as_bytes(), json!({ "probes": probes.len(), "max_abs_residual": worst }))?;
    let report = json!({
        "command": "poisson",
        "model": res.cfg.model.label(),
        "diagnostics": diag,
        "max_abs_poisson_residual": worst,
        "within_tol": worst < diag.tol,
    });
    run.write("poisson.json", to_json(&report)?.as_bytes(), json!({ "residual_bound": diag.residual_bound }))?;
    if res.plot {
        let pts: Vec<(f64, f64)> =
            diag.block_increments.iter().enumerate().map(|(b, v)| (b as f64, v.max(1e-300).log10())).collect();
        let svg = plot::line_chart("Cesàro block increments", "block", "log10 sup increment", &[Series::new("probes", pts)]);
        run.write("poisson_blocks.svg", svg.as_bytes(), Value::Null)?;
    }
    run.finish()
}

fn setup<'a>(res: &'a Resolved, m: &Moments) -> LimitSetup<'a> {
    LimitSetup {
        family: &res.cfg.family,
        observable: &res.observable,
        mean: m.mean,
        gamma_sq: m.gamma_sq,
        initial: res.initial.clone(),
        seed: res.seed,
    }
}

fn normal_density(x: f64) -> f64 {
    (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn cmd_clt(args: &RunArgs) -> CliResult<()> {
    let res = Resolved::new(args)?;
    let assumptions = res.gate()?;
    let mut run = Run::new("clt", args, &res)?;
    let m = moments(&res, &assumptions)?;
    run.lap("moments");
    let n = res.n.unwrap_or(20_000);
    let replicas = res.replicas.unwrap_or(400);
    let s = setup(&res, &m);
    let clt = stats::clt_test(&s, n, replicas)?;
    run.lap("clt");
    let t_grid = res.cfg.experiment.t.clone().unwrap_or_else(|| vec![0.25, 0.5, 0.75, 1.0]);
    let fclt = stats::fclt_report(&s, n, replicas, &t_grid)?;
    run.lap("fclt");
    let mut samples = String::from("replica,normalized\n");
    for (r, v) in clt.normalized.iter().enumerate() {
        let _ = writeln!(samples, "{r},{v}");
    }
    run.write("clt_samples.csv", samples.as_bytes(), json!({ "p_value": clt.p_value, "ks_distance": clt.ks_distance }))?;
    let mut cov = String::from("s,t,covariance,target\n");
    for (i, si) in fclt.t.iter().enumerate() {
        for (j, tj) in fclt.t.iter().enumerate() {
            let _ = writeln!(cov, "{si},{tj},{},{}", fclt.covariance[i][j], fclt.target[i][j]);
        }
    }
    run.write("fclt_covariance.csv", cov.as_bytes(), Value::Null)?;
    let report = json!({
        "command": "clt",
        "model": res.cfg.model.label(),
        "observable": res.observable.name(),
        "seed": res.seed,
        "moments": m,
        "n": n,
        "replicas": replicas,
        "ks_distance": clt.ks_distance,
        "p_value": clt.p_value,
        "fclt": fclt,
    });
    run.write("clt.json", to_json(&report)?.as_bytes(), json!({ "p_value": clt.p_value }))?;
    if res.plot {
        let svg = plot::histogram("S_n / sqrt(n gamma^2)", "normalized sum", &clt.normalized, 30, Some(&normal_density));
        run.write("clt_histogram.svg", svg.as_bytes(), Value::Null)?;
    }
    run.finish()
}

fn cmd_lil(args: &RunArgs) -> CliResult<()> {
    let res = Resolved::new(args)?;
    let assumptions = res.gate()?;
    let mut run = Run::new("lil", args, &res)?;
    let m = moments(&res, &assumptions)?;
    run.lap("moments");
    let n = res.n.unwrap_or(100_000);
    let replicas = res.replicas.unwrap_or(20);
    let n_min = res.cfg.experiment.n_min.unwrap_or(100);
    let lil = stats::lil_scan(&setup(&res, &m), n, replicas, n_min)?;
    run.lap("scan");
    let mut csv = String::from("replica,max_plus,max_minus\n");
    for (r, e) in lil.envelopes.iter().enumerate() {
        let _ = writeln!(csv, "{r},{},{}", e.max_plus, e.max_minus);
    }
    run.write("lil_envelopes.csv", csv.as_bytes(), json!({ "pooled": lil.pooled, "in_band": lil.in_band }))?;
    let report = json!({
        "command": "lil",
        "model": res.cfg.model.label(),
        "observable": res.observable.name(),
        "seed": res.seed,
        "moments": m,
        "report": lil,
    });
    run.write("lil.json", to_json(&report)?.as_bytes(), Value::Null)?;
    if res.plot {
        let pts = |f: fn(&stats::LilEnvelope) -> f64| -> Vec<(f64, f64)> {
            lil.envelopes.iter().enumerate().map(|(r, e)| (r as f64, f(e))).collect()
        };
        let r_max = lil.envelopes.len().saturating_sub(1) as f64;
        let svg = plot::line_chart(
            "LIL envelopes",
            "replica",
            "max S_n / sqrt(2 n gamma^2 log log n)",
            &[
                Series::new("max +", pts(|e| e.max_plus)),
                Series::new("max -", pts(|e| e.max_minus)),
                Series::new("band", vec![(0.0, lil.band.0), (r_max, lil.band.0)]),
                Series::new("band", vec![(0.0, lil.band.1), (r_max, lil.band.1)]),
            ],
        );
        run.write("lil_envelopes.svg", svg.as_bytes(), Value::Null)?;
    }
    run.finish()
}

fn cmd_mdp(args: &RunArgs) -> CliResult<()> {
    let res = Resolved::new(args)?;
    let assumptions = res.gate()?;
    let mut run = Run::new("mdp", args, &res)?;
    let m = moments(&res, &assumptions)?;
    run.lap("moments");
    let n = res.n.unwrap_or(100_000);
    let replicas = res.replicas.unwrap_or(200);
    let beta = res.beta.unwrap_or(0.75);
    let z = res.cfg.experiment.z.clone().unwrap_or_else(|| vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    let mdp = stats::mdp_cumulant(&setup(&res, &m), n, replicas, beta, &z)?;
    run.lap("cumulant");
    let mut csv = String::from("z,lambda_hat,std_error,literal,literal_std_error,target\n");
    for p in &mdp.points {
        let _ = writeln!(csv, "{},{},{},{},{},{}", p.z, p.lambda_hat, p.std_error, p.literal, p.literal_std_error, p.target);
    }
    run.write("mdp_cumulant.csv", csv.as_bytes(), json!({ "points": mdp.points.len() }))?;
    let report = json!({
        "command": "mdp",
        "model": res.cfg.model.label(),
        "observable": res.observable.name(),
        "seed": res.seed,
        "moments": m,
        "report": mdp,
    });
    run.write("mdp.json", to_json(&report)?.as_bytes(), Value::Null)?;
    if res.plot {
        let pick = |f: fn(&stats::MdpPoint) -> f64| -> Vec<(f64, f64)> { mdp.points.iter().map(|p| (p.z, f(p))).collect() };
        let svg = plot::line_chart(
            "moderate deviation cumulant",
            "z",
            "Lambda(z)",
            &[
                Series::new("block estimate", pick(|p| p.lambda_hat)),
                Series::new("literal", pick(|p| p.literal)),
                Series::new("z^2 gamma^2 / 2", pick(|p| p.target)),
            ],
        );
        run.write("mdp_cumulant.svg", svg.as_bytes(), Value::Null)?;
    }
    run.finish()
}

fn cmd_wasserstein(args: &RunArgs) -> CliResult<()> {
    let res = Resolved::new(args)?;
    let assumptions = res.gate()?;
    let mut run = Run::new("wasserstein", args, &res)?;
    let fam = &res.cfg.family;
    let period = assumptions.period_m.unwrap_or(1);
    let ks = res.keep_switch();
    let replicas = res.replicas.unwrap_or(if ks.is_some() { 10_000 } else { 500 });
    let grid = match (&res.cfg.experiment.n_grid, res.n) {
        (Some(g), _) => g.clone(),
        (None, n) => (1..=n.unwrap_or(12)).collect(),
    };
    let nu = match &res.initial {
        Initial::State(s) => DiscreteMeasure::dirac(s.clone()),
        Initial::Measure(m) => m.clone(),
    };
    let (reference, reference_kind) = match ks {
        Some(k) => (k.invariant_measure(), "exact"),
        None => {
            let far = 4 * grid.iter().copied().max().unwrap_or(1);
            let m = cesaro_pushforward(fam, &nu, period, far, replicas, res.seed ^ 0x5eed)?;
            (m.coalesce(1e-12), "pushforward")
        }
    };
    run.lap("reference");
    let fit = fit_lambda(fam, &nu, period, &grid, replicas, &reference, &FitOptions { seed: res.seed, ..FitOptions::default() })?;
    run.lap("fit");
    let mut csv = Vec::new();
    fit.write_csv(&mut csv)?;
    run.write("decay.csv", &csv, json!({ "lambda_hat": fit.lambda_hat, "decays": fit.decays() }))?;
    let report = json!({
        "command": "wasserstein",
        "model": res.cfg.model.label(),
        "seed": res.seed,
        "period": period,
        "replicas": replicas,
        "reference": reference_kind,
        "decays": fit.decays(),
        "fit": fit,
    });
    run.write("wasserstein.json", to_json(&report)?.as_bytes(), Value::Null)?;
    if res.plot {
        let pts: Vec<(f64, f64)> = fit.points.iter().map(|p| (p.n as f64, p.w1.max(1e-300).ln())).collect();
        let line: Vec<(f64, f64)> = fit.points.iter().map(|p| (p.n as f64, fit.intercept + fit.slope * p.n as f64)).collect();
        let svg = plot::line_chart("W1 decay", "n", "log W1", &[Series::new("measured", pts), Series::new("fit", line)]);
        run.write("decay.svg", svg.as_bytes(), Value::Null)?;
    }
    run.finish()
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Validate { config } => cmd_validate(config),
        Command::Check(a) => cmd_check(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Poisson(a) => cmd_poisson(a),
        Command::Clt(a) => cmd_clt(a),
        Command::Lil(a) => cmd_lil(a),
        Command::Mdp(a) => cmd_mdp(a),
        Command::Wasserstein(a) => cmd_wasserstein(a),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    if let Some(t) = cli.threads {
        // A pool may already exist when `run` is called more than once in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {}", e.message());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observable_specs() {
        assert_eq!(parse_observable("population:1", 2).unwrap().name(), Observable::population(1).name());
        assert!(parse_observable("constant:0.5", 2).is_ok());
        assert_eq!(parse_observable("population:2", 2).unwrap_err().exit_code(), EXIT_INPUT);
        assert_eq!(parse_observable("energy", 2).unwrap_err().exit_code(), EXIT_INPUT);
    }

    #[test]
    fn model_spec_variants() {
        assert!(matches!(ModelSpec::from_value(json!({"keep_switch": 0.3})).unwrap(), ModelSpec::KeepSwitch(_)));
        assert!(matches!(
            ModelSpec::from_value(json!({"random": {"dim": 2, "count": 2, "seed": 4}})).unwrap(),
            ModelSpec::Random { dim: 2, count: 2, seed: 4 }
        ));
        let fam = KeepSwitchModel::new(0.3).unwrap().family();
        let v: Value = serde_json::from_str(&fam.to_json().unwrap()).unwrap();
        match ModelSpec::from_value(v).unwrap() {
            ModelSpec::Family(f) => assert_eq!(f, fam),
            other => panic!("{other:?}"),
        }
        assert!(ModelSpec::from_value(json!([1, 2])).is_err());
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::from(Error::NonStochastic { residual: 1.0, tolerance: 0.0 }).exit_code(), EXIT_DOMAIN);
        assert_eq!(CliError::from(Error::InvalidParameter("x".into())).exit_code(), EXIT_INPUT);
        assert_eq!(CliError::from(Error::ErgodicityNotVerified).exit_code(), EXIT_ASSUMPTION);
    }
}
