//! Batch command-line driver: generate trajectories, train and evaluate
//! predictors, run experiments and sweeps, and evaluate the bound formulas.
//!
//! Exit status: 0 on success, 1 on usage/config validation errors, 2 on
//! runtime errors. All file outputs are written atomically and embed the
//! fully resolved configuration, so identical invocations produce identical
//! bytes.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use spoar::analysis::{
    block_split, bound_report, calibration_bound_polyhedral, calibration_bound_strongly_convex,
    excess_risk_rate, BetaSource, BoundInputs, BoundReport, BoundVariant, RegionFamily,
};
use spoar::armodel::{build_lagged, pacf, select_lag, ArModel};
use spoar::bench::{
    normalized_regret, run_experiment_to_dir, sweep_a12, sweep_deg, write_report, ExperimentConfig,
    LagPolicy, RegretReport,
};
use spoar::dynsys::{
    mixing_proxy, read_trajectory_csv, simulate, spectral_radius, write_trajectory_csv, SystemSpec,
};
use spoar::fsio::write_atomic;
use spoar::geometry::FeasibleRegion;
use spoar::train::{train, TrainConfig};

#[derive(Parser)]
#[command(
    name = "spoar",
    version,
    about = "Decision-focused autoregressive forecasting toolkit"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Overrides {
    /// Override a config field before validation, e.g. --set system.deg=8
    /// (repeatable; values parse as JSON, else as strings).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct ExperimentFlags {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Override the trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker count (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a cost trajectory to CSV (plus a .spec.json sidecar).
    Generate {
        /// System spec (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Number of recorded steps.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train one predictor on a trajectory CSV.
    Train {
        /// Training config (JSON: {region, lag, train}).
        #[arg(long)]
        config: PathBuf,
        /// Input trajectory CSV.
        #[arg(long)]
        traj: PathBuf,
        /// Output directory (model.json, train_report.json).
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a trained model's normalized regret on a trajectory CSV.
    Eval {
        /// Evaluation config (JSON: {region, q, p}).
        #[arg(long)]
        config: PathBuf,
        /// Model JSON produced by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Input trajectory CSV.
        #[arg(long)]
        traj: PathBuf,
        /// Output directory (eval.json).
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a full multi-loss experiment (report.json, trials.csv).
    Experiment(ExperimentFlags),
    /// Run the observer-degree sweep.
    SweepDeg {
        #[command(flatten)]
        flags: ExperimentFlags,
        /// Comma-separated degrees.
        #[arg(long, default_value = "2,4,6,8")]
        degs: String,
    },
    /// Run the off-diagonal coupling sweep.
    SweepA12 {
        #[command(flatten)]
        flags: ExperimentFlags,
        /// Comma-separated couplings.
        #[arg(long, default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6")]
        values: String,
    },
    /// Evaluate generalization/calibration bound formulas from an inputs file.
    Bounds {
        /// Bound inputs (JSON).
        #[arg(long)]
        inputs: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print the interleaved independent-block split for (n, a, m, l).
    Blocks {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        a: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        l: usize,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-coordinate partial autocorrelations and the selected lag.
    Pacf {
        /// Input trajectory CSV.
        #[arg(long)]
        traj: PathBuf,
        #[arg(long, default_value_t = 10)]
        max_lag: usize,
        #[arg(long, default_value_t = 1.96)]
        confidence: f64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum CliError {
    Validation(String),
    Runtime(spoar::Error),
}

impl From<spoar::Error> for CliError {
    fn from(e: spoar::Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn validation<T: std::fmt::Display>(msg: T) -> CliError {
    CliError::Validation(msg.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Loads a JSON config, applies `--set` overrides, and deserializes with
/// validation. All failures here are usage errors (exit 1).
fn load_config<T: serde::de::DeserializeOwned>(path: &Path, overrides: &Overrides) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| validation(format!("cannot read {}: {e}", path.display())))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| validation(format!("{} is not valid JSON: {e}", path.display())))?;
    for entry in &overrides.set {
        let (key, raw) = entry
            .split_once('=')
            .ok_or_else(|| validation(format!("--set expects KEY=VALUE, got '{entry}'")))?;
        let parsed: Value =
            serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut value, key, parsed)
            .map_err(|msg| validation(format!("--set {entry}: {msg}")))?;
    }
    serde_json::from_value(value)
        .map_err(|e| validation(format!("invalid config {}: {e}", path.display())))
}

fn set_path(root: &mut Value, dotted: &str, new: Value) -> Result<(), String> {
    let mut cursor = root;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        if let Ok(index) = part.parse::<usize>() {
            let arr = cursor
                .as_array_mut()
                .ok_or_else(|| format!("'{part}' indexes a non-array"))?;
            if index >= arr.len() {
                return Err(format!("index {index} out of bounds"));
            }
            if last {
                arr[index] = new;
                return Ok(());
            }
            cursor = &mut arr[index];
        } else {
            let obj = cursor
                .as_object_mut()
                .ok_or_else(|| format!("'{part}' addresses a non-object"))?;
            if last {
                obj.insert(part.to_string(), new);
                return Ok(());
            }
            cursor = obj
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(serde_json::Map::new()));
        }
    }
    Ok(())
}

fn write_json_out<T: Serialize>(out: Option<&Path>, payload: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(payload).map_err(spoar::Error::from)?;
    bytes.push(b'\n');
    match out {
        Some(path) => {
            write_atomic(path, &bytes)?;
            eprintln!("wrote {}", path.display());
        }
        None => {
            let text = String::from_utf8(bytes).expect("serde_json emits utf-8");
            print!("{text}");
        }
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::Generate {
            config,
            n,
            seed,
            out,
            overrides,
        } => generate(&config, n, seed, &out, &overrides),
        Cmd::Train {
            config,
            traj,
            out,
            overrides,
        } => train_cmd(&config, &traj, &out, &overrides),
        Cmd::Eval {
            config,
            model,
            traj,
            out,
            overrides,
        } => eval_cmd(&config, &model, &traj, &out, &overrides),
        Cmd::Experiment(flags) => {
            let cfg = load_experiment(&flags)?;
            let report = run_experiment_to_dir(&cfg, &flags.out)?;
            eprintln!(
                "experiment done: {} trials x {} losses in {:.2?} -> {}",
                cfg.trials,
                cfg.losses.len(),
                report.runtime,
                flags.out.display()
            );
            Ok(())
        }
        Cmd::SweepDeg { flags, degs } => {
            let cfg = load_experiment(&flags)?;
            let degs = parse_list::<u32>(&degs)?;
            let reports = sweep_deg(&cfg, &degs)?;
            let labels: Vec<String> = degs.iter().map(|d| format!("deg_{d}")).collect();
            write_sweep(&flags.out, &labels, &reports)
        }
        Cmd::SweepA12 { flags, values } => {
            let cfg = load_experiment(&flags)?;
            let values = parse_list::<f64>(&values)?;
            let reports = sweep_a12(&cfg, &values)?;
            let labels: Vec<String> = values.iter().map(|v| format!("a12_{v}")).collect();
            write_sweep(&flags.out, &labels, &reports)
        }
        Cmd::Bounds {
            inputs,
            out,
            overrides,
        } => bounds_cmd(&inputs, out.as_deref(), &overrides),
        Cmd::Blocks { n, a, m, l, out } => {
            let split = block_split(n, a, m, l)?;
            write_json_out(out.as_deref(), &split)
        }
        Cmd::Pacf {
            traj,
            max_lag,
            confidence,
            out,
        } => pacf_cmd(&traj, max_lag, confidence, out.as_deref()),
    }
}

fn parse_list<T: std::str::FromStr>(text: &str) -> CliResult<Vec<T>> {
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| validation(format!("bad list element '{s}'")))
        })
        .collect()
}

fn load_experiment(flags: &ExperimentFlags) -> CliResult<ExperimentConfig> {
    let mut cfg: ExperimentConfig = load_config(&flags.config, &flags.overrides)?;
    if let Some(t) = flags.trials {
        cfg.trials = t;
    }
    if let Some(s) = flags.seed {
        cfg.master_seed = s;
    }
    if let Some(j) = flags.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct SweepPoint {
    label: String,
    rho: f64,
    sigma_max: f64,
    deg: u32,
    a12: f64,
    mixing_proxy: Option<BTreeMap<u32, f64>>,
    median_regret: BTreeMap<String, f64>,
}

fn write_sweep(out: &Path, labels: &[String], reports: &[RegretReport]) -> CliResult<()> {
    let mut points = Vec::with_capacity(reports.len());
    for (label, report) in labels.iter().zip(reports) {
        write_report(report, &out.join(label))?;
        let d = &report.diagnostics;
        let medians = report
            .summaries
            .iter()
            .map(|s| (s.loss.name().to_string(), s.quantiles.median))
            .collect();
        points.push(SweepPoint {
            label: label.clone(),
            rho: d.rho,
            sigma_max: d.sigma_max,
            deg: d.deg,
            a12: d.a12,
            mixing_proxy: d.mixing_proxy.clone(),
            median_regret: medians,
        });
        eprintln!("{label}: done in {:.2?}", report.runtime);
    }
    let bytes = serde_json::to_vec_pretty(&points).map_err(spoar::Error::from)?;
    write_atomic(&out.join("sweep_summary.json"), &bytes)?;
    eprintln!("wrote {}", out.join("sweep_summary.json").display());
    Ok(())
}

#[derive(Serialize)]
struct GenerateSidecar<'a> {
    system: &'a SystemSpec,
    n: usize,
    seed: u64,
}

fn generate(
    config: &Path,
    n: usize,
    seed: u64,
    out: &Path,
    overrides: &Overrides,
) -> CliResult<()> {
    let spec: SystemSpec = load_config(config, overrides)?;
    let rho = spectral_radius(&spec.a)?;
    if rho >= 1.0 && spec.allow_unstable {
        eprintln!("warning: spectral radius {rho:.6} >= 1; the process is not stationary");
    }
    let traj = simulate(&spec, n, seed)?;
    let mut csv = Vec::new();
    write_trajectory_csv(&traj.data, &mut csv)?;
    write_atomic(out, &csv)?;
    let sidecar_path = out.with_extension("spec.json");
    let sidecar = GenerateSidecar {
        system: &spec,
        n,
        seed,
    };
    let bytes = serde_json::to_vec_pretty(&sidecar).map_err(spoar::Error::from)?;
    write_atomic(&sidecar_path, &bytes)?;
    eprintln!("wrote {} and {}", out.display(), sidecar_path.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainFileConfig {
    region: FeasibleRegion,
    lag: LagPolicy,
    train: TrainConfig,
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    config: &'a TrainFileConfig,
    lag: usize,
    epochs: usize,
    stop_reason: spoar::train::StopReason,
    risk_trace: &'a [f64],
}

fn train_cmd(config: &Path, traj: &Path, out: &Path, overrides: &Overrides) -> CliResult<()> {
    let cfg: TrainFileConfig = load_config(config, overrides)?;
    let file = std::fs::File::open(traj)
        .map_err(|e| validation(format!("cannot read {}: {e}", traj.display())))?;
    let data = read_trajectory_csv(file)?;
    let lag = match cfg.lag {
        LagPolicy::Fixed(l) => l,
        LagPolicy::Pacf {
            max_lag,
            confidence,
        } => select_lag(&data, max_lag, confidence)?,
    };
    let dataset = build_lagged(&data, lag)?;
    let region = cfg.train.loss.requires_region().then_some(&cfg.region);
    let report = train(&dataset, region, &cfg.train)?;
    let model_bytes = serde_json::to_vec_pretty(&report.model).map_err(spoar::Error::from)?;
    write_atomic(&out.join("model.json"), &model_bytes)?;
    let summary = TrainOutput {
        config: &cfg,
        lag,
        epochs: report.epochs,
        stop_reason: report.stop_reason,
        risk_trace: &report.risk_trace,
    };
    let bytes = serde_json::to_vec_pretty(&summary).map_err(spoar::Error::from)?;
    write_atomic(&out.join("train_report.json"), &bytes)?;
    eprintln!(
        "trained lag-{lag} model in {} epochs -> {}",
        report.epochs,
        out.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EvalFileConfig {
    region: FeasibleRegion,
    q: usize,
    p: usize,
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    config: &'a EvalFileConfig,
    model_lag: usize,
    normalized_regret: f64,
}

fn eval_cmd(
    config: &Path,
    model: &Path,
    traj: &Path,
    out: &Path,
    overrides: &Overrides,
) -> CliResult<()> {
    let cfg: EvalFileConfig = load_config(config, overrides)?;
    let model: ArModel = load_config(model, &Overrides { set: Vec::new() })?;
    let file = std::fs::File::open(traj)
        .map_err(|e| validation(format!("cannot read {}: {e}", traj.display())))?;
    let data = read_trajectory_csv(file)?;
    let regret = normalized_regret(&model, &data, cfg.q, cfg.p, &cfg.region)?;
    let output = EvalOutput {
        config: &cfg,
        model_lag: model.lag(),
        normalized_regret: regret,
    };
    let bytes = serde_json::to_vec_pretty(&output).map_err(spoar::Error::from)?;
    write_atomic(&out.join("eval.json"), &bytes)?;
    eprintln!(
        "normalized regret {regret:.6} -> {}",
        out.join("eval.json").display()
    );
    Ok(())
}

/// Dependence coefficient input: a literal value or the spectral proxy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum BetaInput {
    Value(f64),
    Proxy {
        a: Vec<Vec<f64>>,
        k: u32,
        #[serde(default = "default_proxy_c")]
        c: f64,
    },
}

fn default_proxy_c() -> f64 {
    1.0
}

impl BetaInput {
    fn resolve(&self) -> CliResult<(f64, BetaSource)> {
        match self {
            BetaInput::Value(v) => Ok((*v, BetaSource::UserSupplied)),
            BetaInput::Proxy { a, k, c } => {
                let n = a.len();
                let flat: Vec<f64> = a.iter().flatten().copied().collect();
                if flat.len() != n * n {
                    return Err(validation("proxy matrix must be square"));
                }
                let m = nalgebra::DMatrix::from_row_slice(n, n, &flat);
                let rho = spectral_radius(&m)?;
                let beta = mixing_proxy(&m, *k, *c)?;
                Ok((beta, BetaSource::MixingProxy { c: *c, rho, k: *k }))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GeneralizationSection {
    empirical_risk: f64,
    rademacher: f64,
    omega: f64,
    m: usize,
    delta: f64,
    beta: BetaInput,
    variant: BoundVariant,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CalibrationPolyhedralSection {
    eps: f64,
    alpha: f64,
    region: FeasibleRegion,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CalibrationStronglyConvexSection {
    eps: f64,
    mu: f64,
    smoothness: f64,
    alpha: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ExcessRiskSection {
    m: usize,
    delta: f64,
    beta: BetaInput,
    c: f64,
    family: RegionFamily,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BoundsFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generalization: Option<GeneralizationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    calibration_polyhedral: Option<CalibrationPolyhedralSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    calibration_strongly_convex: Option<CalibrationStronglyConvexSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    excess_risk: Option<ExcessRiskSection>,
}

#[derive(Serialize)]
struct BoundsOutput {
    config: BoundsFile,
    #[serde(skip_serializing_if = "Option::is_none")]
    generalization: Option<BoundReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    calibration_polyhedral: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    calibration_strongly_convex: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    excess_risk: Option<f64>,
}

fn bounds_cmd(inputs: &Path, out: Option<&Path>, overrides: &Overrides) -> CliResult<()> {
    let file: BoundsFile = load_config(inputs, overrides)?;
    if file.generalization.is_none()
        && file.calibration_polyhedral.is_none()
        && file.calibration_strongly_convex.is_none()
        && file.excess_risk.is_none()
    {
        return Err(validation("bounds file has no sections to evaluate"));
    }
    let mut output = BoundsOutput {
        config: file.clone(),
        generalization: None,
        calibration_polyhedral: None,
        calibration_strongly_convex: None,
        excess_risk: None,
    };
    if let Some(g) = &file.generalization {
        let (beta_al, source) = g.beta.resolve()?;
        let inputs = BoundInputs {
            empirical_risk: g.empirical_risk,
            rademacher: g.rademacher,
            omega: g.omega,
            m: g.m,
            delta: g.delta,
            beta_al,
        };
        output.generalization = Some(bound_report(inputs, g.variant, source)?);
    }
    if let Some(cp) = &file.calibration_polyhedral {
        output.calibration_polyhedral =
            Some(calibration_bound_polyhedral(cp.eps, &cp.region, cp.alpha)?);
    }
    if let Some(cs) = &file.calibration_strongly_convex {
        output.calibration_strongly_convex = Some(calibration_bound_strongly_convex(
            cs.eps,
            cs.mu,
            cs.smoothness,
            cs.alpha,
        )?);
    }
    if let Some(er) = &file.excess_risk {
        let (beta_al, _) = er.beta.resolve()?;
        output.excess_risk = Some(excess_risk_rate(er.m, er.delta, beta_al, er.c, er.family)?);
    }
    write_json_out(out, &output)
}

#[derive(Serialize)]
struct PacfOutput {
    max_lag: usize,
    confidence: f64,
    threshold: f64,
    coefficients: Vec<Vec<f64>>,
    selected_lag: usize,
}

fn pacf_cmd(traj: &Path, max_lag: usize, confidence: f64, out: Option<&Path>) -> CliResult<()> {
    let file = std::fs::File::open(traj)
        .map_err(|e| validation(format!("cannot read {}: {e}", traj.display())))?;
    let data = read_trajectory_csv(file)?;
    let dim = data[0].len();
    let mut coefficients = Vec::with_capacity(dim);
    for c in 0..dim {
        let series: Vec<f64> = data.iter().map(|y| y[c]).collect();
        coefficients.push(pacf(&series, max_lag)?);
    }
    let selected_lag = select_lag(&data, max_lag, confidence)?;
    let output = PacfOutput {
        max_lag,
        confidence,
        threshold: confidence / (data.len() as f64).sqrt(),
        coefficients,
        selected_lag,
    };
    write_json_out(out, &output)
}
