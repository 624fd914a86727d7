//! `coarsen`: certify coarsening models, run the theorem battery and
//! estimation studies from the command line.
//!
//! Exit codes: 0 success, 2 usage, 3 unreadable or malformed input, 4 path
//! cap exceeded, 5 reference pair or observation off the support, 6
//! internal error, 7 a theorem violation or a scenario disagreeing with its
//! declared verdicts. Reports are JSON with sorted keys and are written
//! only once the command has finished.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use coarsen::certify::battery::{run_random_battery, RandomModelConfig, Tamper};
use coarsen::certify::{CertifyError, Condition, Tolerances, Verdict};
use coarsen::gcmp::file::{read_text, FileError, ModelSpec};
use coarsen::gcmp::{JointModel, ModelError};
use coarsen::likelihood::LikelihoodError;
use coarsen::pathspace::SpaceError;
use coarsen::scenarios::study::StudyFileError;
use coarsen::scenarios::{
    bias_report, catalog, certify_scenario, find, run_study, simulate, write_csv, Built, Params, ScenarioError, StudyFile,
};
use coarsen::{tol, Exact, Scalar};

#[derive(Parser, Debug)]
#[command(name = "coarsen", version, about = "Exact likelihood checks for coarsened processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Refuse models whose path space exceeds this many paths.
    #[arg(long, global = true, env = "COARSEN_PATH_CAP", default_value_t = coarsen::gcmp::DEFAULT_PATH_CAP)]
    cap: u64,
    /// Tolerance for derived comparisons (verdicts, compensators).
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Tolerance for direct identities (factorization).
    #[arg(long, global = true)]
    tol_direct: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Certify every coarsening condition for a model file or scenario.
    Certify {
        #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
        input: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<String>,
        /// Scenario parameter as key=value; repeatable.
        #[arg(long = "param", value_parser = parse_param)]
        params: Vec<(String, String)>,
        /// Use exact rational arithmetic.
        #[arg(long)]
        exact: bool,
    },
    /// Check the implication arrows on randomly generated models.
    Battery {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        max_horizon: usize,
        /// Test hook: report CAR(GCMP) as failing on every model.
        #[arg(long, hide = true)]
        tamper_gcmp: bool,
    },
    /// Run an estimation study from a study file.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        /// Catalog scenario replacing the one named in the file.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Sample size per replicate.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        replicates: Option<usize>,
        /// Also export the first replicate's dataset as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// List the scenario catalog.
    ListScenarios,
    /// Re-certify catalog scenarios and compare with their declared verdicts.
    VerifyExample {
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        exact: bool,
    },
}

fn parse_param(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

const USAGE: u8 = 2;
const INPUT: u8 = 3;
const CAP: u8 = 4;
const SUPPORT: u8 = 5;
const INTERNAL: u8 = 6;
const VIOLATION: u8 = 7;

fn space_code(e: &SpaceError) -> u8 {
    match e {
        SpaceError::CapExceeded { .. } => CAP,
        _ => INTERNAL,
    }
}

fn model_code(e: &ModelError) -> u8 {
    match e {
        ModelError::Space(s) => space_code(s),
        ModelError::ReferenceOffGrid { .. } | ModelError::ROffSupport(_) => SUPPORT,
        ModelError::InvalidKernel(_)
        | ModelError::NonEquivalentFamily(_)
        | ModelError::Incompatible(_)
        | ModelError::EmptyGrid(_)
        | ModelError::NoAbsorbingState
        | ModelError::MalformedR(_)
        | ModelError::InvalidCoarsener(_) => INPUT,
    }
}

impl From<FileError> for Failure {
    fn from(e: FileError) -> Self {
        let code = match &e {
            FileError::Model(m) => model_code(m),
            _ => INPUT,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<LikelihoodError> for Failure {
    fn from(e: LikelihoodError) -> Self {
        let code = match &e {
            LikelihoodError::OffSupport(_) => SUPPORT,
            LikelihoodError::Model(m) => model_code(m),
            LikelihoodError::Space(s) => space_code(s),
            _ => INTERNAL,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<CertifyError> for Failure {
    fn from(e: CertifyError) -> Self {
        match e {
            CertifyError::Model(m) => Failure::new(model_code(&m), m.to_string()),
            CertifyError::Space(s) => Failure::new(space_code(&s), s.to_string()),
            CertifyError::Likelihood(l) => l.into(),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Model(m) => Failure::new(model_code(&m), m.to_string()),
            ScenarioError::Certify(c) => c.into(),
            ScenarioError::Likelihood(l) => l.into(),
            ScenarioError::Unknown(_) | ScenarioError::Param { .. } => Failure::new(USAGE, e.to_string()),
            ScenarioError::Study(_) => Failure::new(INPUT, e.to_string()),
            ScenarioError::NonFinite(_) => Failure::new(INTERNAL, e.to_string()),
        }
    }
}

impl From<StudyFileError> for Failure {
    fn from(e: StudyFileError) -> Self {
        match e {
            StudyFileError::File(f) => f.into(),
            StudyFileError::Scenario(s) => s.into(),
        }
    }
}

fn to_value(v: impl Serialize) -> Result<Value, Failure> {
    serde_json::to_value(v).map_err(|e| Failure::new(INTERNAL, e.to_string()))
}

/// Tolerances in effect and where each came from.
fn tolerances(global: &Global) -> Result<(Tolerances, Value), Failure> {
    let check = |v: Option<f64>, flag: &str| match v {
        Some(t) if !(t.is_finite() && t >= 0.0) => Err(Failure::new(USAGE, format!("{flag} must be a nonnegative number"))),
        _ => Ok(()),
    };
    check(global.tol, "--tol")?;
    check(global.tol_direct, "--tol-direct")?;
    let tols = Tolerances { derived: global.tol.unwrap_or(tol::DERIVED), direct: global.tol_direct.unwrap_or(tol::DIRECT) };
    let source = |given: Option<f64>, flag: &str| if given.is_some() { flag.to_string() } else { "default".to_string() };
    let echo = json!({
        "derived": { "value": tols.derived, "source": source(global.tol, "--tol") },
        "direct": { "value": tols.direct, "source": source(global.tol_direct, "--tol-direct") },
    });
    Ok((tols, echo))
}

fn scenario_params(params: &[(String, String)], cap: u64) -> Params {
    let mut p = Params::new().with_cap(cap);
    for (k, v) in params {
        p = p.with(k.clone(), v.clone());
    }
    p
}

fn model_summary<S: Scalar>(model: &JointModel<S>) -> Value {
    json!({
        "name": model.name,
        "horizon": model.horizon(),
        "r_dim": model.r_dim(),
        "support_paths": model.space().len(),
        "enumerated_paths": model.space().enumerated().to_string(),
        "theta_grid": model.n_theta(),
        "psi_grid": model.n_psi(),
        "reference": { "theta": model.reference().theta, "psi": model.reference().psi },
    })
}

fn certify_built<S: Scalar>(built: &Built<S>, tols: Tolerances) -> Result<Value, Failure> {
    let certs = certify_scenario(built, tols)?;
    let failing = certs.iter().filter(|c| c.verdict == Verdict::Fails).count();
    Ok(json!({
        "model": model_summary(&built.model),
        "certificates": to_value(&certs)?,
        "failing": failing,
    }))
}

fn load_built<S: Scalar>(input: Option<&Path>, scenario: Option<&str>, params: &[(String, String)], cap: u64) -> Result<Built<S>, Failure> {
    match (input, scenario) {
        (Some(path), _) => {
            if !params.is_empty() {
                return Err(Failure::new(USAGE, "--param only applies to --scenario"));
            }
            let spec = ModelSpec::load(path)?;
            let loaded = spec.build::<S>(cap)?;
            Ok(Built { model: loaded.model, vertical: loaded.vertical, visits: None })
        }
        (None, Some(name)) => Ok(find(name)?.build::<S>(&scenario_params(params, cap))?),
        (None, None) => Err(Failure::new(USAGE, "give --input or --scenario")),
    }
}

fn cmd_certify(global: &Global, input: Option<&Path>, scenario: Option<&str>, params: &[(String, String)], exact: bool) -> Result<(Value, u8), Failure> {
    let (tols, tol_echo) = tolerances(global)?;
    let body = if exact {
        certify_built(&load_built::<Exact>(input, scenario, params, global.cap)?, tols)?
    } else {
        certify_built(&load_built::<f64>(input, scenario, params, global.cap)?, tols)?
    };
    let config = json!({
        "input": input.map(|p| p.display().to_string()),
        "scenario": scenario,
        "params": params.iter().map(|(k, v)| (k.clone(), Value::from(v.clone()))).collect::<serde_json::Map<_, _>>(),
        "arithmetic": if exact { "exact" } else { "f64" },
        "cap": global.cap,
        "tolerances": tol_echo,
    });
    Ok((json!({ "config": config, "certify": body }), 0))
}

fn cmd_battery(global: &Global, n: usize, seed: u64, max_horizon: usize, tamper_gcmp: bool) -> Result<(Value, u8), Failure> {
    let (tols, tol_echo) = tolerances(global)?;
    if max_horizon == 0 {
        return Err(Failure::new(USAGE, "--max-horizon must be at least 1"));
    }
    let config = RandomModelConfig { max_horizon, ..RandomModelConfig::default() };
    let tamper = |c: &mut coarsen::Certificate| {
        if c.kind == Condition::CarGcmp {
            c.verdict = Verdict::Fails;
        }
    };
    let hook: Option<&Tamper> = if tamper_gcmp { Some(&tamper) } else { None };
    let summary = run_random_battery::<f64>(n, seed, global.cap, config, tols, hook)?;
    let code = if summary.violations.is_empty() { 0 } else { VIOLATION };
    let echo = json!({
        "n": n,
        "seed": seed,
        "max_horizon": max_horizon,
        "deterministic_rate": config.deterministic_rate,
        "cap": global.cap,
        "tolerances": tol_echo,
    });
    Ok((json!({ "config": echo, "battery": to_value(&summary)? }), code))
}

struct EstimateArgs<'a> {
    input: &'a Path,
    scenario: Option<&'a str>,
    seed: Option<u64>,
    n: Option<usize>,
    replicates: Option<usize>,
    csv: Option<&'a Path>,
}

fn cmd_estimate(global: &Global, args: EstimateArgs) -> Result<(Value, u8), Failure> {
    let mut file = StudyFile::from_toml(&read_text(args.input)?)?;
    if let Some(name) = args.scenario {
        file.scenario = Some(name.to_string());
        file.model = None;
    }
    if let Some(seed) = args.seed {
        file.study.seed = seed;
    }
    if let Some(n) = args.n {
        file.study.sample_size = n;
    }
    if let Some(r) = args.replicates {
        file.study.n_replicates = r;
    }
    let model = file.build(global.cap)?;
    let study = run_study(&model, &file.study)?;
    let report = bias_report(&model, &study)?;
    if let Some(path) = args.csv {
        let theta = [study.true_theta];
        let data = simulate(&model, &theta, study.true_psi, study.sample_size, study.seed, 0)?;
        let out = fs::File::create(path).map_err(|e| Failure::new(INPUT, format!("cannot write {}: {e}", path.display())))?;
        write_csv(&model, &data, out).map_err(|e| Failure::new(INTERNAL, e.to_string()))?;
    }
    let config = json!({
        "input": args.input.display().to_string(),
        "study": to_value(&file.study)?,
        "scenario": file.scenario,
        "cap": global.cap,
    });
    let results: Vec<Value> = study
        .results
        .iter()
        .enumerate()
        .map(|(k, &(ignoring, correct))| json!({ "replicate": k, "ignoring": ignoring, "correct": correct }))
        .collect();
    Ok((
        json!({
            "config": config,
            "model": model_summary(&model),
            "estimation": { "report": to_value(&report)?, "replicates": results },
        }),
        0,
    ))
}

fn cmd_list() -> Result<(Value, u8), Failure> {
    let list: Vec<Value> = catalog()
        .iter()
        .map(|s| {
            json!({
                "name": s.name,
                "setting": s.setting,
                "description": s.description,
                "params": s.params.iter().map(|(k, v)| (k.to_string(), Value::from(*v))).collect::<serde_json::Map<_, _>>(),
                "expected": s.expected.iter().map(|(k, v)| (k.to_string(), Value::from(v.to_string()))).collect::<serde_json::Map<_, _>>(),
            })
        })
        .collect();
    Ok((json!({ "scenarios": list }), 0))
}

fn verify_one<S: Scalar>(name: &str, cap: u64, tols: Tolerances) -> Result<Value, Failure> {
    let s = find(name)?;
    let built = s.build::<S>(&Params::new().with_cap(cap))?;
    let certs = certify_scenario(&built, tols)?;
    let mut rechecked = true;
    for c in &certs {
        rechecked &= c.recheck(&built.model)?;
    }
    let mismatches = s.mismatches(&certs);
    Ok(json!({
        "scenario": name,
        "ok": mismatches.is_empty() && rechecked,
        "rechecked": rechecked,
        "mismatches": to_value(&mismatches)?,
    }))
}

fn cmd_verify(global: &Global, scenario: Option<&str>, exact: bool) -> Result<(Value, u8), Failure> {
    let (tols, tol_echo) = tolerances(global)?;
    let names: Vec<String> = match scenario {
        Some(name) => vec![find(name)?.name.to_string()],
        None => catalog().iter().map(|s| s.name.to_string()).collect(),
    };
    let results = names
        .iter()
        .map(|n| if exact { verify_one::<Exact>(n, global.cap, tols) } else { verify_one::<f64>(n, global.cap, tols) })
        .collect::<Result<Vec<_>, _>>()?;
    let ok = results.iter().all(|r| r["ok"] == Value::Bool(true));
    let config = json!({ "scenario": scenario, "arithmetic": if exact { "exact" } else { "f64" }, "cap": global.cap, "tolerances": tol_echo });
    Ok((json!({ "config": config, "verify": results }), if ok { 0 } else { VIOLATION }))
}

fn run(cli: &Cli) -> Result<(Value, u8), Failure> {
    let g = &cli.global;
    match &cli.command {
        Command::Certify { input, scenario, params, exact } => cmd_certify(g, input.as_deref(), scenario.as_deref(), params, *exact),
        Command::Battery { n, seed, max_horizon, tamper_gcmp } => cmd_battery(g, *n, *seed, *max_horizon, *tamper_gcmp),
        Command::Estimate { input, scenario, seed, n, replicates, csv } => cmd_estimate(
            g,
            EstimateArgs { input, scenario: scenario.as_deref(), seed: *seed, n: *n, replicates: *replicates, csv: csv.as_deref() },
        ),
        Command::ListScenarios => cmd_list(),
        Command::VerifyExample { scenario, exact } => cmd_verify(g, scenario.as_deref(), *exact),
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Certify { .. } => "certify",
        Command::Battery { .. } => "battery",
        Command::Estimate { .. } => "estimate",
        Command::ListScenarios => "list-scenarios",
        Command::VerifyExample { .. } => "verify-example",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    let (mut body, code) = match run(&cli) {
        Ok(done) => done,
        Err(f) => {
            eprintln!("error: {}", f.message);
            return ExitCode::from(f.code);
        }
    };
    body["tool"] = json!({ "name": "coarsen", "version": env!("CARGO_PKG_VERSION") });
    body["command"] = Value::from(command_name(&cli.command));
    body["wall_clock_ms"] = Value::from(started.elapsed().as_millis() as u64);
    let text = match serde_json::to_string_pretty(&body) {
        Ok(t) => t + "\n",
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(INTERNAL);
        }
    };
    match &cli.global.output {
        Some(path) => {
            if let Err(e) = fs::write(path, text) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return ExitCode::from(INPUT);
            }
        }
        None => print!("{text}"),
    }
    ExitCode::from(code)
}
