//! Command-line front end.
//!
//! Every command that writes files writes a `manifest.json` next to them
//! holding the fully resolved configuration. Passing that manifest back with
//! `--config` reproduces the outputs byte for byte.
//!
//! Exit codes: 0 success, 1 usage or invalid parameter, 2 numerical failure,
//! 3 budget or I/O failure. Failures are reported on stderr as one line,
//! `error kind=<kind> message="<text>"`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::distribution::Dataset;
use crate::error::{Error, Result};
use crate::experiments::{self, detect, SweepSpec};
use crate::io::{self, Manifest};
use crate::ode::{self, IntegratorOptions, OdeParams, SummaryState};
use crate::perceptron::{self, ModelParams, TestOracle};
use crate::theory::{self, ReducedCoords};
use crate::DataDistribution;

#[derive(Parser, Debug)]
#[command(name = "sgdreg", version, about = "SGD on the teacher-student hinge perceptron: simulation, theory, sweeps")]
pub struct Cli {
    /// Report progress on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw a training set and dump it in binary form.
    Sample(SampleArgs),
    /// Train one perceptron (or several seeds) and record its trajectory.
    Train(TrainArgs),
    /// Evaluate the population averages on a (lambda, r) grid.
    Theory(TheoryArgs),
    /// Integrate the reduced two-dimensional dynamics.
    Ode(OdeArgs),
    /// Run a parameter sweep described by a JSON spec.
    Sweep(SweepArgs),
    /// Fit scaling laws and detect crossovers in a finished sweep.
    Fit(FitArgs),
}

/// Problem and optimiser parameters shared by several commands.
#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub chi: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// T = eta/B; sets eta from the batch size, or the batch size from eta.
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the training set (defaults to --seed).
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// JSON file with parameters, or a manifest from an earlier run; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TheoryArgs {
    #[arg(long)]
    pub chi: Option<f64>,
    /// Comma-separated values of lambda = w1/||w_perp||.
    #[arg(long, value_delimiter = ',')]
    pub lambda: Vec<f64>,
    /// Comma-separated values of r = kappa*sqrt(d)/||w_perp||.
    #[arg(long, value_delimiter = ',')]
    pub r: Vec<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write theory.csv and manifest.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OdeInit {
    /// w1 = ||w_perp|| = 1e-6 T sqrt(d) at t = 0.
    Epsilon,
    /// The expected state after one SGD step from zero.
    FirstStep,
}

#[derive(Args, Debug)]
pub struct OdeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// First output time (default T*d/100).
    #[arg(long)]
    pub t_min: Option<f64>,
    /// Last output time (default: the predicted breakdown time).
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Number of geometrically spaced output times.
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long, value_enum)]
    pub init: Option<OdeInit>,
    /// Write ode.csv, prediction.json and manifest.json here instead of
    /// printing the CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Sweep spec (JSON), or the manifest of an earlier sweep.
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory; overrides the sweep spec.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seeds per cell; overrides the sweep spec.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Worker threads (results do not depend on it).
    #[arg(long, env = "SGDREG_WORKERS")]
    pub workers: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Analysis {
    /// Power laws against every swept axis.
    Auto,
    /// Joint fit of ||w|| in (T, P).
    WeightScaling,
    /// Joint fit of the breakdown time in (T, P).
    THat,
    /// Critical batch size per P.
    Bstar,
    /// Boundary of the gradient-descent region in the (eta, B) plane.
    GdBoundary,
    /// Temperature where ||w_perp|| leaves its low-T plateau, per kappa.
    Tc,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Directory of a finished sweep (containing cells.csv).
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long, value_enum)]
    pub analysis: Analysis,
    /// Threshold factor for gd-boundary and tc.
    #[arg(long, default_value_t = 2.0)]
    pub factor: f64,
    /// Noise filter for weight-scaling and t-hat: keep T >= this * kappa.
    #[arg(long, default_value_t = 8.0)]
    pub t_over_kappa: f64,
    /// Noise filter for weight-scaling and t-hat: keep B <= this * P^(1/(1+chi)).
    #[arg(long, default_value_t = 0.25)]
    pub bstar_fraction: f64,
    /// Also write fit.json and manifest.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidParameter(_) => 1,
        Error::Quadrature(_) | Error::Integrator(_) | Error::NegativeVariance { .. } | Error::Detection(_) => 2,
        Error::Budget(_) | Error::Io { .. } | Error::Format { .. } | Error::Json(_) => 3,
    }
}

/// The single-line error report.
pub fn error_line(kind: &str, message: &str) -> String {
    let one_line = message.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ");
    format!("error kind={kind} message={one_line:?}")
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                eprint!("{e}");
                return 1;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first));
            return 1;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Sample(a) => cmd_sample(a),
        Command::Train(a) => cmd_train(a, cli.verbose),
        Command::Theory(a) => cmd_theory(a),
        Command::Ode(a) => cmd_ode(a),
        Command::Sweep(a) => cmd_sweep(a, cli.verbose),
        Command::Fit(a) => cmd_fit(a),
    }
}

/// Configuration file contents: a manifest is unwrapped to its `config`.
fn load_config(path: &Path) -> Result<Map<String, Value>> {
    let value: Value = io::read_json(path)?;
    let value = match value {
        Value::Object(mut m) if m.contains_key("tool") && m.contains_key("config") => m.remove("config").unwrap_or_default(),
        v => v,
    };
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(Error::Format {
            path: path.to_path_buf(),
            reason: "config must be a JSON object".into(),
        }),
    }
}

/// Split a config object into its `params` part (or the whole object when
/// there is no `params` key) and the remaining command options.
fn split_config(mut cfg: Map<String, Value>) -> (Map<String, Value>, Map<String, Value>) {
    match cfg.remove("params") {
        Some(Value::Object(params)) => {
            let options = match cfg.remove("options") {
                Some(Value::Object(o)) => o,
                _ => Map::new(),
            };
            (params, options)
        }
        _ => (cfg, Map::new()),
    }
}

fn set<T: Serialize>(map: &mut Map<String, Value>, key: &str, value: &Option<T>) {
    if let Some(v) = value {
        map.insert(key.to_string(), json!(v));
    }
}

impl ModelArgs {
    /// Defaults, then the config file, then the flags.
    pub fn resolve(&self, defaults: &ModelParams) -> Result<(ModelParams, Map<String, Value>)> {
        let (mut from_file, options) = match &self.config {
            Some(path) => split_config(load_config(path)?),
            None => (Map::new(), Map::new()),
        };
        let mut temperature = match from_file.remove("temperature") {
            Some(v) => Some(v.as_f64().ok_or_else(|| Error::invalid("temperature must be a number"))?),
            None => None,
        };
        let mut flags = Map::new();
        set(&mut flags, "chi", &self.chi);
        set(&mut flags, "d", &self.d);
        set(&mut flags, "p", &self.p);
        set(&mut flags, "kappa", &self.kappa);
        set(&mut flags, "eta", &self.eta);
        set(&mut flags, "batch", &self.batch);
        set(&mut flags, "momentum", &self.momentum);
        set(&mut flags, "weight_decay", &self.weight_decay);
        set(&mut flags, "max_steps", &self.max_steps);
        set(&mut flags, "seed", &self.seed);
        set(&mut flags, "data_seed", &self.data_seed);
        if self.temperature.is_some() {
            temperature = self.temperature;
        }

        let explicit_eta = flags.contains_key("eta") || from_file.contains_key("eta");
        let explicit_batch = flags.contains_key("batch") || from_file.contains_key("batch");
        let mut merged = match serde_json::to_value(defaults)? {
            Value::Object(m) => m,
            _ => unreachable!("ModelParams serializes to an object"),
        };
        merged.extend(from_file);
        merged.extend(flags);
        let mut params: ModelParams = serde_json::from_value(Value::Object(merged))
            .map_err(|e| Error::invalid(format!("bad parameters: {e}")))?;
        if let Some(t) = temperature {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::invalid(format!("temperature must be positive, got {t}")));
            }
            match (explicit_eta, explicit_batch) {
                (true, true) => {
                    return Err(Error::invalid("--temperature cannot be combined with both --eta and --batch"));
                }
                (true, false) => {
                    let b = params.eta / t;
                    if !(b >= 1.0 && b.fract() == 0.0) {
                        return Err(Error::invalid(format!("eta/T = {} is not a positive integer batch", b)));
                    }
                    params.batch = b as usize;
                }
                (false, _) => params.eta = t * params.batch as f64,
            }
        }
        params.validate()?;
        Ok((params, options))
    }
}

fn option_f64(flag: Option<f64>, options: &Map<String, Value>, key: &str) -> Result<Option<f64>> {
    match (flag, options.get(key)) {
        (Some(v), _) => Ok(Some(v)),
        (None, None | Some(Value::Null)) => Ok(None),
        (None, Some(v)) => v.as_f64().map(Some).ok_or_else(|| Error::invalid(format!("option {key} must be a number"))),
    }
}

fn option_u64(flag: Option<u64>, options: &Map<String, Value>, key: &str) -> Result<Option<u64>> {
    match (flag, options.get(key)) {
        (Some(v), _) => Ok(Some(v)),
        (None, None | Some(Value::Null)) => Ok(None),
        (None, Some(v)) => v.as_u64().map(Some).ok_or_else(|| Error::invalid(format!("option {key} must be an integer"))),
    }
}

fn manifest_config(params: &ModelParams, options: Value) -> Value {
    json!({ "params": params, "options": options })
}

fn cmd_sample(a: &SampleArgs) -> Result<()> {
    let (params, _) = a.model.resolve(&ModelParams::default())?;
    let data: Dataset<f64> = params.dataset()?;
    io::write_dataset(&a.out.join("dataset.bin"), &data)?;
    Manifest::new("sample", manifest_config(&params, json!({}))).write(&a.out)?;
    let mean_abs = data.iter().map(|(x, _)| x[0].abs()).sum::<f64>() / data.len() as f64;
    let positive = data.iter().filter(|(_, y)| *y > 0.0).count() as f64 / data.len() as f64;
    println!(
        "P={} d={} data_seed={} mean_abs_x1={} expected_mean_abs_x1={} positive_fraction={}",
        data.len(),
        data.dim(),
        data.seed(),
        io::fmt_f64(mean_abs),
        io::fmt_f64(data.distribution().mean_abs_x1()),
        io::fmt_f64(positive)
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs, verbose: u8) -> Result<()> {
    let (params, options) = a.model.resolve(&ModelParams::default())?;
    let seeds = option_u64(a.seeds.map(|s| s as u64), &options, "seeds")?.unwrap_or(1) as usize;
    if seeds == 0 {
        return Err(Error::invalid("--seeds must be >= 1"));
    }
    let oracle = TestOracle::new(params.chi, params.d)?;
    for i in 0..seeds {
        let run_params = if seeds == 1 {
            params.clone()
        } else {
            ModelParams {
                seed: params.seed + i as u64,
                data_seed: params.data_seed.map(|s| s + i as u64),
                ..params.clone()
            }
        };
        let data: Dataset<f64> = run_params.dataset()?;
        let record = perceptron::train(&run_params, &data, &oracle)?;
        let dir = if seeds == 1 { a.out.clone() } else { a.out.join(format!("seed_{i}")) };
        io::write_run(&dir, &record)?;
        let last = record.last();
        println!(
            "seed={} stop={} steps={} t_star={} w1={} w_perp_norm={} test_error={}",
            run_params.seed,
            serde_json::to_value(record.stop_reason)?.as_str().unwrap_or_default(),
            record.steps,
            io::fmt_opt(record.t_star),
            io::fmt_f64(last.obs.w1),
            io::fmt_f64(last.obs.w_perp_norm),
            io::fmt_f64(last.obs.test_error)
        );
        if verbose > 0 {
            eprintln!("wrote {}", dir.display());
        }
    }
    let options = if seeds == 1 { json!({}) } else { json!({ "seeds": seeds }) };
    Manifest::new("train", manifest_config(&params, options)).write(&a.out)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TheoryConfig {
    chi: f64,
    lambda: Vec<f64>,
    r: Vec<f64>,
}

fn cmd_theory(a: &TheoryArgs) -> Result<()> {
    let mut cfg = TheoryConfig {
        chi: ModelParams::default().chi,
        lambda: vec![],
        r: vec![0.0],
    };
    if let Some(path) = &a.config {
        let file: Map<String, Value> = load_config(path)?;
        let mut base = serde_json::to_value(&cfg)?.as_object().cloned().unwrap_or_default();
        base.extend(file);
        cfg = serde_json::from_value(Value::Object(base)).map_err(|e| Error::invalid(format!("bad theory config: {e}")))?;
    }
    if let Some(chi) = a.chi {
        cfg.chi = chi;
    }
    if !a.lambda.is_empty() {
        cfg.lambda = a.lambda.clone();
    }
    if !a.r.is_empty() {
        cfg.r = a.r.clone();
    }
    if cfg.lambda.is_empty() {
        return Err(Error::invalid("--lambda needs at least one value"));
    }
    let dist = DataDistribution::new(cfg.chi, 2)?;
    let mut rows = Vec::new();
    for &lambda in &cfg.lambda {
        for &r in &cfg.r {
            let e = theory::evaluate(&dist, ReducedCoords::new(lambda, r)?)?;
            rows.push(vec![
                lambda,
                r,
                e.g1,
                e.g_perp,
                e.n,
                e.sigma11_tilde,
                e.sigma12_tilde,
                e.sigma22_tilde,
                e.sigma1,
                e.sigma2,
            ]);
        }
    }
    let table = io::float_table(io::THEORY_HEADER, &rows);
    print!("{table}");
    if let Some(out) = &a.out {
        io::write_atomic(&out.join("theory.csv"), table.as_bytes())?;
        Manifest::new("theory", serde_json::to_value(&cfg)?).write(out)?;
    }
    Ok(())
}

fn cmd_ode(a: &OdeArgs) -> Result<()> {
    let (params, options) = a.model.resolve(&ModelParams::default())?;
    let temperature = params.temperature();
    let prediction = ode::predict_with(params.chi, temperature, params.d, params.p, params.weight_decay, 1.0)?;
    let init_kind = match (a.init, options.get("init")) {
        (Some(i), _) => i,
        (None, Some(v)) => serde_json::from_value(v.clone()).map_err(|e| Error::invalid(format!("bad init: {e}")))?,
        (None, None) => OdeInit::Epsilon,
    };
    let t_min = option_f64(a.t_min, &options, "t_min")?.unwrap_or(temperature * params.d as f64 / 100.0);
    let t_max = option_f64(a.t_max, &options, "t_max")?.unwrap_or(prediction.t_hat);
    let points = option_u64(a.points.map(|p| p as u64), &options, "points")?.unwrap_or(200) as usize;
    let op = OdeParams::from_model(&params)?;
    let init: SummaryState<f64> = match init_kind {
        OdeInit::Epsilon => op.epsilon_init(),
        OdeInit::FirstStep => ode::first_step_init(&params)?,
    };
    if !(t_min > init.t) {
        return Err(Error::invalid(format!("t_min = {t_min} must exceed the initial time {}", init.t)));
    }
    let grid = ode::geometric_grid(t_min, t_max, points)?;
    let states = ode::integrate(&op, init, &grid, IntegratorOptions::default())?;
    let mut rows = Vec::with_capacity(states.len());
    for s in &states {
        rows.push(vec![s.t, s.w1, s.wp, s.w1 / s.wp, op.n_theory(s)?]);
    }
    let table = io::float_table(io::ODE_HEADER, &rows);
    let options = json!({ "init": init_kind, "t_min": t_min, "t_max": t_max, "points": points });
    match &a.out {
        Some(out) => {
            io::write_atomic(&out.join("ode.csv"), table.as_bytes())?;
            io::write_json(&out.join("prediction.json"), &prediction)?;
            Manifest::new("ode", manifest_config(&params, options)).write(out)?;
        }
        None => print!("{table}"),
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs, verbose: u8) -> Result<()> {
    let mut spec: SweepSpec = {
        let cfg = load_config(&a.spec)?;
        serde_json::from_value(Value::Object(cfg)).map_err(|e| Error::Format {
            path: a.spec.clone(),
            reason: e.to_string(),
        })?
    };
    if let Some(out) = &a.out {
        spec.outputs = Some(out.clone());
    }
    if let Some(s) = a.seeds {
        spec.seeds_per_cell = s;
    }
    let out = spec
        .outputs
        .clone()
        .ok_or_else(|| Error::invalid("sweep needs an output directory (--out or \"outputs\" in the sweep spec)"))?;
    let result = experiments::run_sweep(&spec, a.workers)?;
    let mut recorded = spec.clone();
    recorded.outputs = None;
    Manifest::new("sweep", serde_json::to_value(&recorded)?).write(&out)?;
    let diverged = result.records.iter().filter(|r| r.diverged).count();
    println!(
        "cells={} runs={} diverged={} fits={} out={}",
        result.summaries.len(),
        result.records.len(),
        diverged,
        result.fits.len(),
        out.display()
    );
    if verbose > 0 {
        for f in result.fits.iter().filter(|f| f.flagged) {
            eprintln!("flagged fit (r2={:.3}): {}", f.r_squared, f.label);
        }
    }
    Ok(())
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let records = experiments::read_cells_csv(&a.dir.join("cells.csv"))?;
    let summaries = experiments::summarize(&records);
    let filter = detect::NoiseFilter {
        t_over_kappa: a.t_over_kappa,
        bstar_fraction: a.bstar_fraction,
    };
    let value = match a.analysis {
        Analysis::Auto => serde_json::to_value(experiments::auto_fits(&summaries))?,
        Analysis::WeightScaling => {
            let (t, p) = detect::fit_weight_scaling(&summaries, &filter)?;
            json!({ "temperature": t, "p": p })
        }
        Analysis::THat => {
            let (t, p) = detect::fit_that_scaling(&summaries, &filter)?;
            json!({ "temperature": t, "p": p })
        }
        Analysis::Bstar => serde_json::to_value(detect::detect_bstar(&summaries)?)?,
        Analysis::GdBoundary => serde_json::to_value(detect::detect_gd_boundary(&summaries, a.factor)?)?,
        Analysis::Tc => {
            let mut by_kappa: std::collections::BTreeMap<u64, Vec<experiments::CellSummary>> = Default::default();
            for s in &summaries {
                by_kappa.entry(s.params.kappa.to_bits()).or_default().push(s.clone());
            }
            let mut out = Vec::new();
            for group in by_kappa.values() {
                out.push(detect::detect_tc(group, a.factor)?);
            }
            serde_json::to_value(out)?
        }
    };
    let text = serde_json::to_string_pretty(&value)?;
    println!("{text}");
    if let Some(out) = &a.out {
        io::write_json(&out.join("fit.json"), &value)?;
        let config = json!({
            "dir": a.dir,
            "analysis": a.analysis,
            "factor": a.factor,
            "t_over_kappa": a.t_over_kappa,
            "bstar_fraction": a.bstar_fraction,
        });
        Manifest::new("fit", config).write(out)?;
    }
    Ok(())
}
