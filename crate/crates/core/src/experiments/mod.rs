//! Parameter sweeps over many training runs, and the analyses built on them.
//!
//! A sweep is a grid of cells (one [`ModelParams`] each) times a number of
//! seeds. Every `(cell, seed)` job is independent; jobs run on a worker pool
//! and their results are written by a single thread, one small CSV per job,
//! so an interrupted sweep resumes where it stopped. Outputs are sorted by
//! `(cell, seed)` and depend only on the sweep spec, never on the worker count.
//!
//! Seeds are derived from the master seed:
//!
//! ```text
//! sgd seed   = derive(master, [Sweep, 1, cell, seed_index])
//! data seed  = derive(master, [Sweep, 2, seed_index])   (reseed mode)
//!            = derive(master, [Sweep, 2])               (fixed mode)
//! ```
//!
//! so the training sets are shared between cells with the same seed index
//! (common random numbers), and datasets with different `P` are prefixes of
//! one another.

pub mod detect;
pub mod fit;
pub mod studies;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::Dataset;
use crate::error::{Error, Result};
use crate::io::{self, csv_line, fmt_f64, fmt_opt};
use crate::perceptron::{self, ModelParams, Observables, RunRecord, StopReason, TestOracle, TrainOptions};
use crate::rng::{self, Purpose};

pub use fit::{fit_power_law, fit_power_law_2d, geometric_mean, PowerLawFit};

/// Relative train/test gap that defines the breakdown time.
pub const T_HAT_THRESHOLD: f64 = 0.5;
/// Thresholds reported alongside the default for sensitivity checks.
pub const T_HAT_THRESHOLD_LO: f64 = 0.3;
pub const T_HAT_THRESHOLD_HI: f64 = 0.7;

/// Values for each swept parameter. `temperature` combines with `batch`
/// (then `eta = T·B`) or with `eta` (then `B = eta/T`, which must be an
/// integer); giving all three is an error.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axes {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none", alias = "P")]
    pub p: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none", alias = "Lambda")]
    pub weight_decay: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none", alias = "m")]
    pub momentum: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none", alias = "T")]
    pub temperature: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none", alias = "B")]
    pub batch: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    /// A fresh training set per seed index.
    #[default]
    Reseed,
    /// One training set for every job; only SGD is reseeded.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    /// Upper bound on `cells × seeds`.
    #[serde(default = "default_max_runs")]
    pub max_runs: usize,
    /// Upper bound on `Σ max_steps` over all jobs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_total_steps: Option<u64>,
}

fn default_max_runs() -> usize {
    100_000
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_runs: default_max_runs(),
            max_total_steps: None,
        }
    }
}

fn default_seeds() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: ModelParams,
    #[serde(default)]
    pub axes: Axes,
    #[serde(default = "default_seeds")]
    pub seeds_per_cell: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub data_mode: DataMode,
    /// Output directory; `None` keeps everything in memory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<PathBuf>,
    #[serde(default)]
    pub budget: Budget,
    /// Also write the full trajectory of every job.
    #[serde(default)]
    pub keep_records: bool,
    /// Stop each run once its train and test errors separate by this
    /// relative gap, so the end-of-run values are those at `t̂`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_at_separation: Option<f64>,
}

impl SweepSpec {
    pub fn new(base: ModelParams) -> Self {
        SweepSpec {
            base,
            axes: Axes::default(),
            seeds_per_cell: default_seeds(),
            master_seed: 0,
            data_mode: DataMode::default(),
            outputs: None,
            budget: Budget::default(),
            keep_records: false,
            stop_at_separation: None,
        }
    }

    /// Expand the axes into one parameter set per cell (seeds not yet set).
    pub fn cells(&self) -> Result<Vec<ModelParams>> {
        let a = &self.axes;
        let one_f = |v: &Option<Vec<f64>>, x: f64| v.clone().unwrap_or_else(|| vec![x]);
        let one_u = |v: &Option<Vec<usize>>, x: usize| v.clone().unwrap_or_else(|| vec![x]);
        for (name, vals) in [
            ("chi", &a.chi),
            ("kappa", &a.kappa),
            ("weight_decay", &a.weight_decay),
            ("momentum", &a.momentum),
            ("temperature", &a.temperature),
            ("eta", &a.eta),
        ] {
            if vals.as_ref().is_some_and(|v| v.is_empty()) {
                return Err(Error::invalid(format!("axis {name} is empty")));
            }
        }
        if a.temperature.is_some() && a.eta.is_some() && a.batch.is_some() {
            return Err(Error::invalid("temperature, eta and batch axes cannot all be given"));
        }
        let mut cells = Vec::new();
        for &chi in &one_f(&a.chi, self.base.chi) {
            for &p in &one_u(&a.p, self.base.p) {
                for &kappa in &one_f(&a.kappa, self.base.kappa) {
                    for &wd in &one_f(&a.weight_decay, self.base.weight_decay) {
                        for &m in &one_f(&a.momentum, self.base.momentum) {
                            let temps: Vec<Option<f64>> = match &a.temperature {
                                Some(ts) => ts.iter().map(|&t| Some(t)).collect(),
                                None => vec![None],
                            };
                            for &temp in &temps {
                                for &b in &one_u(&a.batch, self.base.batch) {
                                    for &eta in &one_f(&a.eta, self.base.eta) {
                                        let (eta, batch) = match temp {
                                            None => (eta, b),
                                            Some(t) if a.eta.is_some() => {
                                                let bf = eta / t;
                                                if !(bf >= 1.0 && bf.fract() == 0.0) {
                                                    return Err(Error::invalid(format!(
                                                        "eta/T = {eta}/{t} is not a positive integer batch"
                                                    )));
                                                }
                                                (eta, bf as usize)
                                            }
                                            Some(t) => (t * b as f64, b),
                                        };
                                        let params = ModelParams {
                                            chi,
                                            p,
                                            kappa,
                                            weight_decay: wd,
                                            momentum: m,
                                            eta,
                                            batch,
                                            seed: 0,
                                            data_seed: None,
                                            ..self.base.clone()
                                        };
                                        params.validate()?;
                                        cells.push(params);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(cells)
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            seeds_per_cell: self.seeds_per_cell,
            master_seed: self.master_seed,
            data_mode: self.data_mode,
            outputs: self.outputs.clone(),
            keep_records: self.keep_records,
            budget: self.budget.clone(),
            stop_at_separation: self.stop_at_separation,
            workers: None,
        }
    }
}

/// How a list of cells is executed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub seeds_per_cell: usize,
    pub master_seed: u64,
    pub data_mode: DataMode,
    pub outputs: Option<PathBuf>,
    pub keep_records: bool,
    pub budget: Budget,
    pub stop_at_separation: Option<f64>,
    /// Worker threads; `None` uses all available cores.
    pub workers: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        SweepSpec::new(ModelParams::default()).run_options()
    }
}

/// SGD and data seeds of job `(cell, seed_index)`.
pub fn job_seeds(master: u64, mode: DataMode, cell: usize, seed_index: usize) -> (u64, u64) {
    let tag = Purpose::Sweep as u64;
    let sgd = rng::derive_seed(master, &[tag, 1, cell as u64, seed_index as u64]);
    let data = match mode {
        DataMode::Reseed => rng::derive_seed(master, &[tag, 2, seed_index as u64]),
        DataMode::Fixed => rng::derive_seed(master, &[tag, 2]),
    };
    (sgd, data)
}

/// End-of-run summary of one `(cell, seed)` job.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub cell: usize,
    pub seed_index: usize,
    pub params: ModelParams,
    pub stop_reason: StopReason,
    pub steps: u64,
    pub t_star: Option<f64>,
    pub t_hat: Option<f64>,
    pub t_hat_lo: Option<f64>,
    pub t_hat_hi: Option<f64>,
    /// Test error at the recorded point where `t_hat` was detected.
    pub test_error_at_t_hat: Option<f64>,
    pub diverged: bool,
    pub last: Observables,
}

pub const CELLS_HEADER: &str = "cell,seed_index,chi,d,p,kappa,eta,batch,temperature,momentum,weight_decay,max_steps,seed,data_seed,stop_reason,steps,t_star,t_hat,t_hat_03,t_hat_07,test_error_at_t_hat,diverged,train_loss,n_train,test_error,alignment,w1,w_perp_norm,lambda,r";

fn stop_name(s: StopReason) -> &'static str {
    match s {
        StopReason::Converged => "converged",
        StopReason::MaxSteps => "max_steps",
        StopReason::Diverged => "diverged",
        StopReason::Separated => "separated",
    }
}

impl CellRecord {
    pub fn from_run(cell: usize, seed_index: usize, run: &RunRecord) -> Self {
        let hat = detect::detect_empirical_that(run, T_HAT_THRESHOLD);
        CellRecord {
            cell,
            seed_index,
            params: run.params.clone(),
            stop_reason: run.stop_reason,
            steps: run.steps,
            t_star: run.t_star,
            t_hat: hat.map(|h| h.t),
            t_hat_lo: detect::detect_empirical_that(run, T_HAT_THRESHOLD_LO).map(|h| h.t),
            t_hat_hi: detect::detect_empirical_that(run, T_HAT_THRESHOLD_HI).map(|h| h.t),
            test_error_at_t_hat: hat.map(|h| h.test_error),
            diverged: run.diverged(),
            last: run.last().obs,
        }
    }

    /// `‖w‖ = √(w₁² + ‖w⊥‖²)` at the end of the run.
    pub fn w_norm(&self) -> f64 {
        self.last.w1.hypot(self.last.w_perp_norm)
    }

    pub fn to_csv_row(&self) -> String {
        let p = &self.params;
        let o = &self.last;
        csv_line([
            self.cell.to_string(),
            self.seed_index.to_string(),
            fmt_f64(p.chi),
            p.d.to_string(),
            p.p.to_string(),
            fmt_f64(p.kappa),
            fmt_f64(p.eta),
            p.batch.to_string(),
            fmt_f64(p.temperature()),
            fmt_f64(p.momentum),
            fmt_f64(p.weight_decay),
            p.max_steps.to_string(),
            p.seed.to_string(),
            p.data_seed().to_string(),
            stop_name(self.stop_reason).to_string(),
            self.steps.to_string(),
            fmt_opt(self.t_star),
            fmt_opt(self.t_hat),
            fmt_opt(self.t_hat_lo),
            fmt_opt(self.t_hat_hi),
            fmt_opt(self.test_error_at_t_hat),
            u8::from(self.diverged).to_string(),
            fmt_f64(o.train_loss),
            fmt_f64(o.n_train),
            fmt_f64(o.test_error),
            fmt_f64(o.alignment),
            fmt_f64(o.w1),
            fmt_f64(o.w_perp_norm),
            fmt_f64(o.lambda),
            fmt_f64(o.r),
        ])
    }

    pub fn from_csv_fields(fields: &[String]) -> std::result::Result<Self, String> {
        if fields.len() != CELLS_HEADER.split(',').count() {
            return Err(format!("expected {} fields, got {}", CELLS_HEADER.split(',').count(), fields.len()));
        }
        fn num<T: std::str::FromStr>(s: &str, name: &str) -> std::result::Result<T, String> {
            s.parse().map_err(|_| format!("bad {name}: {s:?}"))
        }
        fn opt(s: &str, name: &str) -> std::result::Result<Option<f64>, String> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s, name).map(Some)
            }
        }
        let f = |i: usize| fields[i].as_str();
        let params = ModelParams {
            chi: num(f(2), "chi")?,
            d: num(f(3), "d")?,
            p: num(f(4), "p")?,
            kappa: num(f(5), "kappa")?,
            eta: num(f(6), "eta")?,
            batch: num(f(7), "batch")?,
            momentum: num(f(9), "momentum")?,
            weight_decay: num(f(10), "weight_decay")?,
            max_steps: num(f(11), "max_steps")?,
            seed: num(f(12), "seed")?,
            data_seed: Some(num(f(13), "data_seed")?),
        };
        let stop_reason = match f(14) {
            "converged" => StopReason::Converged,
            "max_steps" => StopReason::MaxSteps,
            "diverged" => StopReason::Diverged,
            "separated" => StopReason::Separated,
            other => return Err(format!("bad stop_reason: {other:?}")),
        };
        Ok(CellRecord {
            cell: num(f(0), "cell")?,
            seed_index: num(f(1), "seed_index")?,
            params,
            stop_reason,
            steps: num(f(15), "steps")?,
            t_star: opt(f(16), "t_star")?,
            t_hat: opt(f(17), "t_hat")?,
            t_hat_lo: opt(f(18), "t_hat_03")?,
            t_hat_hi: opt(f(19), "t_hat_07")?,
            test_error_at_t_hat: opt(f(20), "test_error_at_t_hat")?,
            diverged: f(21) == "1",
            last: Observables {
                train_loss: num(f(22), "train_loss")?,
                n_train: num(f(23), "n_train")?,
                test_error: num(f(24), "test_error")?,
                alignment: num(f(25), "alignment")?,
                w1: num(f(26), "w1")?,
                w_perp_norm: num(f(27), "w_perp_norm")?,
                lambda: num(f(28), "lambda")?,
                r: num(f(29), "r")?,
            },
        })
    }
}

pub fn cells_csv(records: &[CellRecord]) -> String {
    let mut out = String::from(CELLS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_row());
    }
    out
}

pub fn read_cells_csv(path: &Path) -> Result<Vec<CellRecord>> {
    let (header, rows) = io::read_csv(path)?;
    if header.join(",") != CELLS_HEADER {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "unexpected cells.csv header".into(),
        });
    }
    rows.iter()
        .map(|r| {
            CellRecord::from_csv_fields(r).map_err(|reason| Error::Format {
                path: path.to_path_buf(),
                reason,
            })
        })
        .collect()
}

/// Seed-averaged view of one cell: geometric means for scales, arithmetic
/// means for errors and alignment, diverged seeds excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub cell: usize,
    /// Parameters of the cell with the seed fields of its first job.
    pub params: ModelParams,
    pub n_seeds: usize,
    pub n_diverged: usize,
    pub alignment: Option<f64>,
    pub test_error: Option<f64>,
    pub w1: Option<f64>,
    pub w_perp_norm: Option<f64>,
    pub w_norm: Option<f64>,
    pub t_star: Option<f64>,
    pub t_hat: Option<f64>,
    pub test_error_at_t_hat: Option<f64>,
}

impl CellSummary {
    /// Any diverged seed marks the whole cell.
    pub fn diverged(&self) -> bool {
        self.n_diverged > 0
    }

    pub fn temperature(&self) -> f64 {
        self.params.temperature()
    }
}

pub fn summarize(records: &[CellRecord]) -> Vec<CellSummary> {
    let mut by_cell: BTreeMap<usize, Vec<&CellRecord>> = BTreeMap::new();
    for r in records {
        by_cell.entry(r.cell).or_default().push(r);
    }
    by_cell
        .into_iter()
        .map(|(cell, rs)| {
            let ok: Vec<&&CellRecord> = rs.iter().filter(|r| !r.diverged).collect();
            let collect = |f: &dyn Fn(&CellRecord) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
            let all_present = |v: &Vec<f64>| v.len() == ok.len() && !v.is_empty();
            let geo = |f: &dyn Fn(&CellRecord) -> Option<f64>| {
                let v = collect(f);
                if all_present(&v) {
                    geometric_mean(&v)
                } else {
                    None
                }
            };
            let arith = |f: &dyn Fn(&CellRecord) -> Option<f64>| {
                let v = collect(f);
                if all_present(&v) {
                    fit::arithmetic_mean(&v)
                } else {
                    None
                }
            };
            CellSummary {
                cell,
                params: rs[0].params.clone(),
                n_seeds: rs.len(),
                n_diverged: rs.len() - ok.len(),
                alignment: arith(&|r| Some(r.last.alignment)),
                test_error: arith(&|r| Some(r.last.test_error)),
                w1: geo(&|r| Some(r.last.w1)),
                w_perp_norm: geo(&|r| Some(r.last.w_perp_norm)),
                w_norm: geo(&|r| Some(r.w_norm())),
                t_star: geo(&|r| r.t_star),
                t_hat: geo(&|r| r.t_hat),
                test_error_at_t_hat: arith(&|r| r.test_error_at_t_hat),
            }
        })
        .collect()
}

pub const PHASE_HEADER: &str = "eta,batch,alignment,test_error,diverged,cell,p,temperature,kappa,chi,momentum,weight_decay,w1,w_perp_norm,w_norm,t_star,n_seeds,n_diverged";

pub fn phase_csv(summaries: &[CellSummary]) -> String {
    let mut out = String::from(PHASE_HEADER);
    out.push('\n');
    for s in summaries {
        let p = &s.params;
        out.push_str(&csv_line([
            fmt_f64(p.eta),
            p.batch.to_string(),
            fmt_opt(s.alignment),
            fmt_opt(s.test_error),
            u8::from(s.diverged()).to_string(),
            s.cell.to_string(),
            p.p.to_string(),
            fmt_f64(p.temperature()),
            fmt_f64(p.kappa),
            fmt_f64(p.chi),
            fmt_f64(p.momentum),
            fmt_f64(p.weight_decay),
            fmt_opt(s.w1),
            fmt_opt(s.w_perp_norm),
            fmt_opt(s.w_norm),
            fmt_opt(s.t_star),
            s.n_seeds.to_string(),
            s.n_diverged.to_string(),
        ]));
    }
    out
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub records: Vec<CellRecord>,
    pub summaries: Vec<CellSummary>,
    pub fits: Vec<PowerLawFit>,
    /// Full trajectories, sorted like `records`, when `keep_records` is set.
    pub runs: Vec<RunRecord>,
}

type DataKey = (u64, usize, usize, u64);

/// Datasets shared between jobs, built once per key.
#[derive(Default)]
struct DataCache {
    slots: Mutex<HashMap<DataKey, Arc<OnceLock<Result<Arc<Dataset<f64>>, String>>>>>,
}

impl DataCache {
    fn get(&self, params: &ModelParams) -> Result<Arc<Dataset<f64>>> {
        let key = (params.chi.to_bits(), params.d, params.p, params.data_seed());
        let slot = {
            let mut map = self.slots.lock().expect("cache lock");
            map.entry(key).or_default().clone()
        };
        slot.get_or_init(|| params.dataset::<f64>().map(Arc::new).map_err(|e| e.to_string()))
            .clone()
            .map_err(Error::InvalidParameter)
    }
}

fn job_path(dir: &Path, cell: usize, seed_index: usize) -> PathBuf {
    dir.join("jobs").join(format!("c{cell:06}_s{seed_index:04}.csv"))
}

fn record_path(dir: &Path, cell: usize, seed_index: usize) -> PathBuf {
    dir.join("records").join(format!("c{cell:06}_s{seed_index:04}"))
}

fn load_job(path: &Path, expected: &ModelParams) -> Option<CellRecord> {
    let (header, rows) = io::read_csv(path).ok()?;
    if header.join(",") != CELLS_HEADER || rows.len() != 1 {
        return None;
    }
    let rec = CellRecord::from_csv_fields(&rows[0]).ok()?;
    (rec.params == *expected).then_some(rec)
}

/// Run `seeds_per_cell` jobs for every cell.
pub fn run_cells(cells: &[ModelParams], opts: &RunOptions) -> Result<SweepResult> {
    if opts.seeds_per_cell == 0 {
        return Err(Error::invalid("seeds_per_cell must be >= 1"));
    }
    let n_runs = cells.len() * opts.seeds_per_cell;
    if n_runs > opts.budget.max_runs {
        return Err(Error::Budget(format!("{n_runs} runs exceed max_runs = {}", opts.budget.max_runs)));
    }
    if let Some(limit) = opts.budget.max_total_steps {
        let total: u64 = cells.iter().map(|c| c.max_steps.saturating_mul(opts.seeds_per_cell as u64)).sum();
        if total > limit {
            return Err(Error::Budget(format!("{total} total steps exceed max_total_steps = {limit}")));
        }
    }

    let mut jobs = Vec::with_capacity(n_runs);
    for (c, base) in cells.iter().enumerate() {
        for s in 0..opts.seeds_per_cell {
            let (seed, data_seed) = job_seeds(opts.master_seed, opts.data_mode, c, s);
            let params = ModelParams {
                seed,
                data_seed: Some(data_seed),
                ..base.clone()
            };
            params.validate()?;
            jobs.push((c, s, params));
        }
    }

    let mut done: BTreeMap<(usize, usize), CellRecord> = BTreeMap::new();
    if let Some(dir) = &opts.outputs {
        if !opts.keep_records {
            for (c, s, params) in &jobs {
                if let Some(rec) = load_job(&job_path(dir, *c, *s), params) {
                    done.insert((*c, *s), rec);
                }
            }
        }
    }
    let pending: Vec<(usize, usize, ModelParams)> = jobs
        .iter()
        .filter(|(c, s, _)| !done.contains_key(&(*c, *s)))
        .cloned()
        .collect();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = opts.workers {
        pool = pool.num_threads(w.max(1));
    }
    let pool = pool
        .build()
        .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?;

    let cache = DataCache::default();
    let train_opts = TrainOptions {
        stop_at_separation: opts.stop_at_separation,
        ..TrainOptions::default()
    };
    let train_opts = &train_opts;
    let oracles: Mutex<HashMap<(u64, usize), Arc<TestOracle>>> = Mutex::new(HashMap::new());
    let oracle_for = |params: &ModelParams| -> Result<Arc<TestOracle>> {
        let key = (params.chi.to_bits(), params.d);
        let mut map = oracles.lock().expect("oracle lock");
        if let Some(o) = map.get(&key) {
            return Ok(o.clone());
        }
        let o = Arc::new(TestOracle::new(params.chi, params.d)?);
        map.insert(key, o.clone());
        Ok(o)
    };

    type JobOutput = Result<(usize, usize, CellRecord, Option<RunRecord>)>;
    let (tx, rx) = mpsc::channel::<JobOutput>();
    let mut runs: BTreeMap<(usize, usize), RunRecord> = BTreeMap::new();
    let mut first_error: Option<Error> = None;

    std::thread::scope(|scope| {
        let pending = &pending;
        let cache = &cache;
        let oracle_for = &oracle_for;
        let pool = &pool;
        let keep = opts.keep_records;
        scope.spawn(move || {
            pool.install(|| {
                pending.par_iter().for_each_with(tx, |tx, (c, s, params)| {
                    let out = (|| {
                        let data = cache.get(params)?;
                        let oracle = oracle_for(params)?;
                        let run = perceptron::train_with(params, &data, &oracle, train_opts)?;
                        let rec = CellRecord::from_run(*c, *s, &run);
                        Ok((*c, *s, rec, keep.then_some(run)))
                    })();
                    let _ = tx.send(out);
                });
            });
        });
        // single writer
        for out in rx {
            match out {
                Ok((c, s, rec, run)) => {
                    if let Some(dir) = &opts.outputs {
                        let row = format!("{CELLS_HEADER}\n{}", rec.to_csv_row());
                        if let Err(e) = io::write_atomic(&job_path(dir, c, s), row.as_bytes()) {
                            first_error.get_or_insert(e);
                        }
                        if let Some(run) = &run {
                            if let Err(e) = io::write_run(&record_path(dir, c, s), run) {
                                first_error.get_or_insert(e);
                            }
                        }
                    }
                    if let Some(run) = run {
                        runs.insert((c, s), run);
                    }
                    done.insert((c, s), rec);
                }
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
    });
    if let Some(e) = first_error {
        return Err(e);
    }

    let records: Vec<CellRecord> = done.into_values().collect();
    let summaries = summarize(&records);
    let fits = auto_fits(&summaries);
    let result = SweepResult {
        records,
        summaries,
        fits,
        runs: runs.into_values().collect(),
    };
    if let Some(dir) = &opts.outputs {
        write_outputs(dir, &result)?;
    }
    Ok(result)
}

pub fn run_sweep(spec: &SweepSpec, workers: Option<usize>) -> Result<SweepResult> {
    let cells = spec.cells()?;
    let opts = RunOptions {
        workers,
        ..spec.run_options()
    };
    run_cells(&cells, &opts)
}

pub fn write_outputs(dir: &Path, result: &SweepResult) -> Result<()> {
    io::write_atomic(&dir.join("cells.csv"), cells_csv(&result.records).as_bytes())?;
    io::write_atomic(&dir.join("phase.csv"), phase_csv(&result.summaries).as_bytes())?;
    io::write_json(&dir.join("fits.json"), &result.fits)
}

/// For every swept parameter with at least four values, fit the end-of-
/// training scales against it, separately for each combination of the other
/// parameters. Fits that cannot be made (too few points, non-positive
/// values) are skipped.
pub fn auto_fits(summaries: &[CellSummary]) -> Vec<PowerLawFit> {
    type Getter = fn(&ModelParams) -> f64;
    let axes: [(&str, Getter); 7] = [
        ("eta", |p| p.eta),
        ("batch", |p| p.batch as f64),
        ("p", |p| p.p as f64),
        ("temperature", |p| p.temperature()),
        ("kappa", |p| p.kappa),
        ("weight_decay", |p| p.weight_decay),
        ("momentum", |p| p.momentum),
    ];
    let key_of = |p: &ModelParams, skip: &str| -> String {
        let mut parts = Vec::new();
        for (name, get) in &axes {
            let related = match skip {
                "temperature" => ["temperature", "eta", "batch"].contains(name) && *name != "batch",
                "eta" | "batch" => *name == skip || *name == "temperature",
                _ => *name == skip,
            };
            if !related {
                parts.push(format!("{name}={}", get(p)));
            }
        }
        parts.push(format!("chi={}", p.chi));
        parts.join(",")
    };
    let mut fits = Vec::new();
    for (name, get) in &axes {
        let mut groups: BTreeMap<String, Vec<&CellSummary>> = BTreeMap::new();
        for s in summaries.iter().filter(|s| !s.diverged()) {
            groups.entry(key_of(&s.params, name)).or_default().push(s);
        }
        for (key, group) in groups {
            let mut xs: Vec<f64> = group.iter().map(|s| get(&s.params)).collect();
            xs.sort_by(|a, b| a.total_cmp(b));
            xs.dedup();
            if xs.len() < fit::MIN_POINTS || xs.len() != group.len() {
                continue;
            }
            type Obs = fn(&CellSummary) -> Option<f64>;
            let observables: [(&str, Obs); 4] = [
                ("w_norm", |s| s.w_norm),
                ("w1", |s| s.w1),
                ("w_perp_norm", |s| s.w_perp_norm),
                ("t_star", |s| s.t_star),
            ];
            for (obs_name, obs) in observables {
                let pts: Option<Vec<(f64, f64)>> = group.iter().map(|s| obs(s).map(|y| (get(&s.params), y))).collect();
                if let Some(pts) = pts {
                    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
                    if let Ok(f) = fit_power_law(&format!("{obs_name} ~ {name} | {key}"), &x, &y) {
                        fits.push(f);
                    }
                }
            }
        }
    }
    fits
}
