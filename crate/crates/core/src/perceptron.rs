//! The student perceptron `f(w, x) = w·x/√d`, hinge loss with margin `κ`,
//! and minibatch SGD with optional momentum and weight decay.
//!
//! One step with batch `B_t` (drawn without replacement, fresh every step):
//!
//! ```text
//! v ← m v + (η/B) Σ_{μ∈B_t} θ(κ - y^μ f(w, x^μ)) y^μ x^μ/√d - ηΛ w
//! w ← w + v
//! ```
//!
//! With `m = 0` the velocity is not stored and the increment is applied
//! directly. Time is `t = step · η`.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::distribution::{DataDistribution, Dataset};
use crate::error::{Error, Result};
use crate::real::{self, Real};
use crate::rng::{self, Purpose, StreamRng};
use crate::theory;

pub const DEFAULT_MAX_STEPS: u64 = 10_000_000;
pub const OVERFLOW_GUARD: f64 = 1e12;

/// Problem instance and optimiser settings. Scalars are kept in `f64`; the
/// simulation converts them to its own scalar type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub chi: f64,
    pub d: usize,
    pub p: usize,
    pub kappa: f64,
    pub eta: f64,
    pub batch: usize,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    #[serde(default)]
    pub seed: u64,
    /// Seed of the training set; `None` uses `seed`.
    #[serde(default)]
    pub data_seed: Option<u64>,
}

fn default_max_steps() -> u64 {
    DEFAULT_MAX_STEPS
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            chi: 1.0,
            d: 128,
            p: 8192,
            kappa: 1.0 / 128.0,
            eta: 16.0,
            batch: 8,
            momentum: 0.0,
            weight_decay: 0.0,
            max_steps: DEFAULT_MAX_STEPS,
            seed: 0,
            data_seed: None,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.chi.is_finite() && self.chi > -1.0) {
            return Err(Error::invalid(format!("chi must be > -1, got {}", self.chi)));
        }
        if self.d < 2 {
            return Err(Error::invalid(format!("d must be >= 2, got {}", self.d)));
        }
        if self.p == 0 {
            return Err(Error::invalid("P must be >= 1"));
        }
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(Error::invalid(format!("kappa must be > 0, got {}", self.kappa)));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::invalid(format!("eta must be > 0, got {}", self.eta)));
        }
        if self.batch == 0 || self.batch > self.p {
            return Err(Error::invalid(format!("batch must be in [1, P={}], got {}", self.p, self.batch)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid(format!("weight decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps must be >= 1"));
        }
        Ok(())
    }

    /// `T = η/B`
    pub fn temperature(&self) -> f64 {
        self.eta / self.batch as f64
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    pub fn distribution<R: Real>(&self) -> Result<DataDistribution<R>> {
        DataDistribution::new(R::lit(self.chi), self.d)
    }

    pub fn dataset<R: Real>(&self) -> Result<Dataset<R>> {
        Dataset::generate(self.distribution()?, self.p, self.data_seed())
    }

    pub fn sgd_stream(&self) -> StreamRng {
        rng::stream(self.seed, Purpose::Sgd, &[])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerceptronState<R> {
    /// Full weight vector; component 0 is `w₁`, the rest is `w⊥`.
    pub w: Vec<R>,
    /// Empty unless momentum is active.
    pub velocity: Vec<R>,
    pub step: u64,
    eta: f64,
}

impl<R: Real> PerceptronState<R> {
    /// `w = 0` at step 0.
    pub fn zeros(d: usize, eta: f64) -> Self {
        PerceptronState {
            w: vec![R::zero(); d],
            velocity: Vec::new(),
            step: 0,
            eta,
        }
    }

    pub fn t(&self) -> f64 {
        self.step as f64 * self.eta
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn w1(&self) -> R {
        self.w[0]
    }

    pub fn w_perp(&self) -> &[R] {
        &self.w[1..]
    }

    pub fn w_perp_norm(&self) -> R {
        real::norm(self.w_perp())
    }
}

/// `Σ_μ (κ - y f)⁺ / P` and the fraction with `y f < κ`.
fn loss_and_unfitted<R: Real>(w: &[R], data: &Dataset<R>, kappa: R) -> Result<(R, R)> {
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let inv_sqrt_d = R::one() / R::from_usize(data.dim()).expect("dimension").sqrt();
    let mut loss = R::zero();
    let mut unfitted = 0usize;
    for (x, y) in data.iter() {
        let gap = kappa - y * real::dot(w, x) * inv_sqrt_d;
        if gap > R::zero() {
            loss = loss + gap;
            unfitted += 1;
        }
    }
    let p = R::from_usize(data.len()).expect("size");
    Ok((loss / p, R::from_usize(unfitted).expect("count") / p))
}

pub fn hinge_loss<R: Real>(state: &PerceptronState<R>, data: &Dataset<R>, kappa: R) -> Result<R> {
    Ok(loss_and_unfitted(&state.w, data, kappa)?.0)
}

pub fn unfitted_fraction<R: Real>(state: &PerceptronState<R>, data: &Dataset<R>, kappa: R) -> Result<R> {
    Ok(loss_and_unfitted(&state.w, data, kappa)?.1)
}

/// Indices of the next batch of size `b` out of `p`, drawn without
/// replacement and sorted so that `b = p` is plain gradient descent whatever
/// the stream.
pub fn draw_batch(rng: &mut StreamRng, p: usize, b: usize, out: &mut Vec<usize>) {
    out.clear();
    if b == p {
        out.extend(0..p);
    } else {
        out.extend(index::sample(rng, p, b).into_iter());
        out.sort_unstable();
    }
}

/// Applies SGD steps with the constants of one [`ModelParams`] precomputed.
pub struct Stepper<R> {
    kappa: R,
    inv_sqrt_d: R,
    lr_over_b: R,
    momentum: R,
    decay: R,
    batch: usize,
    grad: Vec<R>,
    indices: Vec<usize>,
}

impl<R: Real> Stepper<R> {
    pub fn new(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        Ok(Stepper {
            kappa: R::lit(params.kappa),
            inv_sqrt_d: R::one() / R::from_usize(params.d).expect("dimension").sqrt(),
            lr_over_b: R::lit(params.eta) / R::from_usize(params.batch).expect("batch"),
            momentum: R::lit(params.momentum),
            decay: R::lit(params.eta * params.weight_decay),
            batch: params.batch,
            grad: vec![R::zero(); params.d],
            indices: Vec::with_capacity(params.batch),
        })
    }

    /// One update; returns the number of batch points violating the margin.
    pub fn step(&mut self, state: &mut PerceptronState<R>, data: &Dataset<R>, rng: &mut StreamRng) -> usize {
        debug_assert_eq!(state.w.len(), data.dim());
        draw_batch(rng, data.len(), self.batch, &mut self.indices);
        for g in self.grad.iter_mut() {
            *g = R::zero();
        }
        let mut active = 0;
        for &mu in &self.indices {
            let x = data.row(mu);
            let y = data.label(mu);
            if y * real::dot(&state.w, x) * self.inv_sqrt_d < self.kappa {
                real::axpy(y, x, &mut self.grad);
                active += 1;
            }
        }
        let scale = self.lr_over_b * self.inv_sqrt_d;
        let has_decay = self.decay > R::zero();
        if self.momentum > R::zero() {
            if state.velocity.len() != state.w.len() {
                state.velocity = vec![R::zero(); state.w.len()];
            }
            for ((v, w), g) in state.velocity.iter_mut().zip(state.w.iter_mut()).zip(&self.grad) {
                *v = self.momentum * *v + scale * *g - self.decay * *w;
                *w = *w + *v;
            }
        } else if has_decay {
            for (w, g) in state.w.iter_mut().zip(&self.grad) {
                *w = *w + scale * *g - self.decay * *w;
            }
        } else if active > 0 {
            real::axpy(scale, &self.grad, &mut state.w);
        }
        state.step += 1;
        active
    }
}

/// Single SGD step; builds a [`Stepper`] each call, so prefer the stepper in
/// loops.
pub fn sgd_step<R: Real>(
    state: &mut PerceptronState<R>,
    data: &Dataset<R>,
    params: &ModelParams,
    rng: &mut StreamRng,
) -> Result<usize> {
    if params.p != data.len() || params.d != data.dim() {
        return Err(Error::invalid("dataset shape does not match parameters"));
    }
    Ok(Stepper::new(params)?.step(state, data, rng))
}

/// How test error is obtained for a weight vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestErrorMode {
    /// Quadrature over the known distribution.
    Analytic,
    /// Fresh samples of `(x₁, z)` with `z = x⊥·w⊥/‖w⊥‖ ~ N(0, 1)`.
    MonteCarlo { samples: usize, seed: u64 },
}

/// Population quantities used by [`observables`]: test error and alignment.
#[derive(Debug, Clone)]
pub struct TestOracle {
    dist: DataDistribution<f64>,
    mode: TestErrorMode,
}

impl TestOracle {
    pub fn new(chi: f64, d: usize) -> Result<Self> {
        Ok(TestOracle {
            dist: DataDistribution::new(chi, d)?,
            mode: TestErrorMode::Analytic,
        })
    }

    pub fn with_mode(mut self, mode: TestErrorMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn distribution(&self) -> &DataDistribution<f64> {
        &self.dist
    }

    /// Probability that `sign(w·x) ≠ y` for a fresh sample.
    pub fn test_error(&self, w1: f64, w_perp_norm: f64) -> Result<f64> {
        if w_perp_norm == 0.0 {
            return Ok(if w1 > 0.0 {
                0.0
            } else if w1 < 0.0 {
                1.0
            } else {
                0.5
            });
        }
        match self.mode {
            TestErrorMode::Analytic => {
                let e = theory::analytic_test_error(&self.dist, (w1 / w_perp_norm).abs())?;
                Ok(if w1 < 0.0 { 1.0 - e } else { e })
            }
            TestErrorMode::MonteCarlo { samples, seed } => {
                use rand_distr::{Distribution, StandardNormal};
                let mut rng = rng::stream(seed, Purpose::MonteCarlo, &[]);
                let mut wrong = 0usize;
                for _ in 0..samples {
                    let x1: f64 = self.dist.sample_x1(&mut rng);
                    let z: f64 = StandardNormal.sample(&mut rng);
                    if (w1 * x1 + w_perp_norm * z) * x1.signum() <= 0.0 {
                        wrong += 1;
                    }
                }
                Ok(wrong as f64 / samples.max(1) as f64)
            }
        }
    }

    /// `E[y f] = (w₁/√d) E|x₁|`
    pub fn alignment(&self, w1: f64) -> f64 {
        w1 / (self.dist.dim() as f64).sqrt() * self.dist.mean_abs_x1()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub train_loss: f64,
    pub n_train: f64,
    pub test_error: f64,
    pub alignment: f64,
    pub w1: f64,
    pub w_perp_norm: f64,
    /// `+∞` when `‖w⊥‖ = 0`.
    pub lambda: f64,
    /// `+∞` when `‖w⊥‖ = 0`.
    pub r: f64,
}

pub fn observables<R: Real>(
    state: &PerceptronState<R>,
    data: &Dataset<R>,
    kappa: f64,
    oracle: &TestOracle,
) -> Result<Observables> {
    let (loss, n) = loss_and_unfitted(&state.w, data, R::lit(kappa))?;
    let w1 = state.w1().as_f64();
    let wp = state.w_perp_norm().as_f64();
    let (lambda, r) = if wp > 0.0 {
        (w1 / wp, kappa * (data.dim() as f64).sqrt() / wp)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    Ok(Observables {
        train_loss: loss.as_f64(),
        n_train: n.as_f64(),
        test_error: oracle.test_error(w1, wp)?,
        alignment: oracle.alignment(w1),
        w1,
        w_perp_norm: wp,
        lambda,
        r,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordPoint {
    pub step: u64,
    pub t: f64,
    #[serde(flatten)]
    pub obs: Observables,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Every training point fits the margin.
    Converged,
    MaxSteps,
    /// `‖w‖` exceeded the overflow guard or became non-finite.
    Diverged,
    /// Train and test errors separated (only with
    /// [`TrainOptions::stop_at_separation`]).
    Separated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub params: ModelParams,
    pub stop_reason: StopReason,
    /// Time at which the loss reached zero.
    pub t_star: Option<f64>,
    pub steps: u64,
    pub points: Vec<RecordPoint>,
}

impl RunRecord {
    pub fn last(&self) -> &RecordPoint {
        self.points.last().expect("a record always holds step 0")
    }

    pub fn diverged(&self) -> bool {
        self.stop_reason == StopReason::Diverged
    }
}

/// Steps `0..=linear` and then `⌈ratio · previous⌉`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordSchedule {
    pub linear: u64,
    pub ratio: f64,
}

impl Default for RecordSchedule {
    fn default() -> Self {
        RecordSchedule {
            linear: 10,
            ratio: 1.1,
        }
    }
}

impl RecordSchedule {
    pub fn next_after(&self, step: u64) -> u64 {
        if step < self.linear {
            step + 1
        } else {
            ((step as f64 * self.ratio).ceil() as u64).max(step + 1)
        }
    }
}

/// Train from `w = 0` until every point fits the margin, the step cap is
/// reached, or the weights blow up.
///
/// Convergence is checked on the full training set once per epoch
/// (`⌈P/B⌉` steps) and at every recording step. Without momentum the
/// weights freeze once all points fit, so `t*` is the time of the last
/// update that moved them; with momentum it is the time of the check.
pub fn train<R: Real>(params: &ModelParams, data: &Dataset<R>, oracle: &TestOracle) -> Result<RunRecord> {
    train_with(params, data, oracle, &TrainOptions::default())
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrainOptions {
    pub schedule: RecordSchedule,
    /// Stop at the first recorded point where
    /// `(test_error - n_train) / test_error` exceeds this value.
    pub stop_at_separation: Option<f64>,
}

pub fn train_with<R: Real>(
    params: &ModelParams,
    data: &Dataset<R>,
    oracle: &TestOracle,
    options: &TrainOptions,
) -> Result<RunRecord> {
    let schedule = options.schedule;
    params.validate()?;
    if params.p != data.len() || params.d != data.dim() {
        return Err(Error::invalid("dataset shape does not match parameters"));
    }
    let mut rng = params.sgd_stream();
    let mut stepper = Stepper::<R>::new(params)?;
    let mut state = PerceptronState::<R>::zeros(params.d, params.eta);
    let epoch = params.p.div_ceil(params.batch) as u64;
    let frozen_when_fit = params.momentum == 0.0 && params.weight_decay == 0.0;
    let guard = R::lit(OVERFLOW_GUARD);

    let record = |state: &PerceptronState<R>| -> Result<RecordPoint> {
        Ok(RecordPoint {
            step: state.step,
            t: state.t(),
            obs: observables(state, data, params.kappa, oracle)?,
        })
    };

    let mut points = vec![record(&state)?];
    let mut next_record = schedule.next_after(0);
    let mut last_change = 0u64;
    let mut stop = StopReason::MaxSteps;
    let mut t_star = None;

    while state.step < params.max_steps {
        let active = stepper.step(&mut state, data, &mut rng);
        if active > 0 {
            last_change = state.step;
        }
        if !(real::norm(&state.w) <= guard) {
            stop = StopReason::Diverged;
            break;
        }
        let at_record = state.step == next_record;
        let at_epoch = state.step % epoch == 0;
        if at_record {
            let point = record(&state)?;
            next_record = schedule.next_after(state.step);
            let done = point.obs.n_train == 0.0;
            let o = point.obs;
            let separated = options
                .stop_at_separation
                .is_some_and(|gap| o.test_error > 0.0 && (o.test_error - o.n_train) / o.test_error > gap);
            points.push(point);
            if done && params.weight_decay == 0.0 {
                stop = StopReason::Converged;
                break;
            }
            if separated {
                stop = StopReason::Separated;
                break;
            }
        } else if at_epoch && params.weight_decay == 0.0 {
            let (_, n) = loss_and_unfitted(&state.w, data, R::lit(params.kappa))?;
            if n == R::zero() {
                stop = StopReason::Converged;
                break;
            }
        }
    }

    if stop == StopReason::Converged {
        t_star = Some(if frozen_when_fit {
            last_change as f64 * params.eta
        } else {
            state.t()
        });
    }
    if points.last().map(|p| p.step) != Some(state.step) && stop != StopReason::Diverged {
        points.push(record(&state)?);
    }
    Ok(RunRecord {
        params: params.clone(),
        stop_reason: stop,
        t_star,
        steps: state.step,
        points,
    })
}
