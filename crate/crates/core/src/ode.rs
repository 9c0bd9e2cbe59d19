//! Deterministic reduced dynamics of `(w₁, ‖w⊥‖)` and the closed forms that
//! follow from its large-time behaviour.
//!
//! ```text
//! dw₁/dt  = g₁(λ, r) - Λ w₁
//! dwp/dt  = g⊥(λ, r) + T n(λ, r) / (2 wp) - Λ wp
//! ```
//!
//! with `λ = w₁/wp`, `r = κ√d/wp`. The system is integrated with the
//! Dormand–Prince 5(4) pair and standard step-size control.

use serde::{Deserialize, Serialize};

use crate::distribution::DataDistribution;
use crate::error::{Error, Result};
use crate::perceptron::ModelParams;
use crate::real::Real;
use crate::theory::{self, AsymptoticConstants, ReducedCoords};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryState<R> {
    pub w1: R,
    pub wp: R,
    pub t: R,
}

/// Parameters entering the reduced drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeParams<R> {
    pub dist: DataDistribution<R>,
    pub kappa: R,
    pub temperature: R,
    pub weight_decay: R,
}

impl<R: Real> OdeParams<R> {
    pub fn new(chi: R, d: usize, kappa: R, temperature: R, weight_decay: R) -> Result<Self> {
        if !(kappa > R::zero() && kappa.is_finite()) {
            return Err(Error::invalid("kappa must be > 0"));
        }
        if !(temperature >= R::zero() && temperature.is_finite()) {
            return Err(Error::invalid("temperature must be >= 0"));
        }
        if !(weight_decay >= R::zero() && weight_decay.is_finite()) {
            return Err(Error::invalid("weight decay must be >= 0"));
        }
        Ok(OdeParams {
            dist: DataDistribution::new(chi, d)?,
            kappa,
            temperature,
            weight_decay,
        })
    }

    pub fn from_model(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        Self::new(
            R::lit(params.chi),
            params.d,
            R::lit(params.kappa),
            R::lit(params.temperature()),
            R::lit(params.weight_decay),
        )
    }

    fn sqrt_d(&self) -> R {
        R::from_usize(self.dist.dim()).expect("dimension").sqrt()
    }

    pub fn coords(&self, w1: R, wp: R) -> Result<ReducedCoords<R>> {
        ReducedCoords::from_weights(w1.max(R::zero()), wp, self.kappa, self.dist.dim())
    }

    /// Right-hand side `(dw₁/dt, dwp/dt)`.
    pub fn drift(&self, w1: R, wp: R) -> Result<[R; 2]> {
        if !(wp > R::zero()) {
            return Err(Error::Integrator(format!("||w_perp|| reached {wp}")));
        }
        let (g1, gp, n) = theory::drift_terms(&self.dist, self.coords(w1, wp)?)?;
        let half = R::lit(0.5);
        Ok([
            g1 - self.weight_decay * w1,
            gp + self.temperature * n * half / wp - self.weight_decay * wp,
        ])
    }

    /// Population unfitted fraction at a reduced state.
    pub fn n_theory(&self, s: &SummaryState<R>) -> Result<R> {
        theory::n_frac(&self.dist, self.coords(s.w1, s.wp)?)
    }

    /// `(w₁, wp) = (ε, ε)` with `ε = 10⁻⁶ T√d` at `t = 0`.
    pub fn epsilon_init(&self) -> SummaryState<R> {
        let eps = R::lit(1e-6) * self.temperature.max(R::epsilon()) * self.sqrt_d();
        SummaryState {
            w1: eps,
            wp: eps,
            t: R::zero(),
        }
    }
}

/// Expected state after one SGD step from `w = 0`: `w₁ = η E|x₁|/√d` and
/// `‖w⊥‖ = η/√B · √((d-1)/d)`, at `t = η`.
pub fn first_step_init<R: Real>(params: &ModelParams) -> Result<SummaryState<R>> {
    params.validate()?;
    let dist = DataDistribution::<R>::new(R::lit(params.chi), params.d)?;
    let d = params.d as f64;
    let eta = R::lit(params.eta);
    Ok(SummaryState {
        w1: eta * dist.mean_abs_x1() / R::lit(d.sqrt()),
        wp: eta * R::lit(((d - 1.0) / d / params.batch as f64).sqrt()),
        t: eta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            rtol: 1e-8,
            atol: 1e-12,
            max_steps: 1_000_000,
        }
    }
}

// Dormand–Prince 5(4) tableau
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// 5th-order weights minus 4th-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate `y' = f(t, y)` through the increasing output times `grid`,
/// returning `y` at each of them. Steps are clipped to land on grid points.
pub fn dopri5<R, const N: usize, F>(
    mut f: F,
    t0: R,
    y0: [R; N],
    grid: &[R],
    opts: IntegratorOptions,
) -> Result<Vec<[R; N]>>
where
    R: Real,
    F: FnMut(R, &[R; N]) -> Result<[R; N]>,
{
    if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.first().is_some_and(|&g| g < t0) {
        return Err(Error::invalid("output grid must be increasing and start at or after t0"));
    }
    let rtol = R::lit(opts.rtol).max(R::lit(100.0) * R::epsilon());
    let atol = R::lit(opts.atol);
    let lit = |x: f64| R::lit(x);

    let mut out = Vec::with_capacity(grid.len());
    let mut t = t0;
    let mut y = y0;
    let mut k = [[R::zero(); N]; 7];
    k[0] = f(t, &y)?;

    // initial step from the ratio of state to slope
    let mut h = {
        let mut ratio = R::infinity();
        for i in 0..N {
            let scale = atol + rtol * y[i].abs();
            if k[0][i] != R::zero() {
                ratio = ratio.min(scale.max(y[i].abs()) / k[0][i].abs());
            }
        }
        let span = grid.last().map(|&g| g - t0).unwrap_or(R::zero());
        (lit(0.01) * ratio).min(span).max(R::epsilon() * t0.abs().max(R::one()))
    };

    let mut steps = 0usize;
    for &target in grid {
        while t < target {
            steps += 1;
            if steps > opts.max_steps {
                return Err(Error::Integrator(format!("exceeded {} steps at t = {t}", opts.max_steps)));
            }
            if target - t <= R::epsilon() * target.abs() * lit(4.0) {
                t = target;
                break;
            }
            let last = h >= target - t;
            let h_try = if last { target - t } else { h };
            if h_try <= R::epsilon() * t.abs() * lit(4.0) {
                return Err(Error::Integrator(format!("step size underflow at t = {t}")));
            }
            for s in 1..7 {
                let mut ys = y;
                for i in 0..N {
                    let mut acc = R::zero();
                    for (j, kj) in k.iter().enumerate().take(s) {
                        acc = acc + lit(A[s][j]) * kj[i];
                    }
                    ys[i] = y[i] + h_try * acc;
                }
                // a drift undefined at a trial point rejects the step
                k[s] = f(t + lit(C[s]) * h_try, &ys).unwrap_or([R::nan(); N]);
            }
            // the last stage sits at the 5th-order solution (FSAL)
            let mut y_new = y;
            let mut err = R::zero();
            for i in 0..N {
                let mut acc = R::zero();
                let mut e = R::zero();
                for s in 0..6 {
                    acc = acc + lit(A[6][s]) * k[s][i];
                }
                for s in 0..7 {
                    e = e + lit(E[s]) * k[s][i];
                }
                y_new[i] = y[i] + h_try * acc;
                let scale = atol + rtol * y[i].abs().max(y_new[i].abs());
                let ratio = (h_try * e / scale).abs();
                err = if ratio.is_nan() { R::infinity() } else { err.max(ratio) };
            }
            if err <= R::one() {
                t = if last { target } else { t + h_try };
                y = y_new;
                k[0] = k[6];
                let grow = if err == R::zero() { lit(5.0) } else { (lit(0.9) * err.powf(lit(-0.2))).min(lit(5.0)) };
                if !last || grow < R::one() {
                    h = h_try * grow.max(lit(0.2));
                }
            } else {
                let shrink = if err.is_finite() { (lit(0.9) * err.powf(lit(-0.2))).max(lit(0.1)) } else { lit(0.1) };
                h = h_try * shrink;
            }
        }
        out.push(y);
    }
    Ok(out)
}

/// `n` points spaced geometrically from `t0 > 0` to `t1`, both included.
pub fn geometric_grid<R: Real>(t0: R, t1: R, n: usize) -> Result<Vec<R>> {
    if !(t0 > R::zero() && t1 > t0) || n < 2 {
        return Err(Error::invalid("geometric grid needs 0 < t0 < t1 and n >= 2"));
    }
    let ratio = (t1 / t0).ln() / R::from_usize(n - 1).expect("count");
    let mut grid: Vec<R> = (0..n)
        .map(|i| t0 * (ratio * R::from_usize(i).expect("index")).exp())
        .collect();
    grid[0] = t0;
    grid[n - 1] = t1;
    Ok(grid)
}

/// Integrate the reduced dynamics from `init` and report the state at each
/// time in `grid`.
pub fn integrate<R: Real>(
    params: &OdeParams<R>,
    init: SummaryState<R>,
    grid: &[R],
    opts: IntegratorOptions,
) -> Result<Vec<SummaryState<R>>> {
    if !(init.wp > R::zero()) {
        return Err(Error::invalid("initial ||w_perp|| must be > 0"));
    }
    let ys = dopri5(|_, y: &[R; 2]| params.drift(y[0], y[1]), init.t, [init.w1, init.wp], grid, opts)?;
    Ok(ys
        .into_iter()
        .zip(grid)
        .map(|(y, &t)| SummaryState { w1: y[0], wp: y[1], t })
        .collect())
}

/// Large-time solution `(k₁T√d (t/(Td))^{1/(3+χ)}, k⊥T√d)`; meaningful for
/// `t ≫ Td`.
pub fn asymptotic_solution<R: Real>(chi: R, temperature: R, d: usize, t: R) -> Result<SummaryState<R>> {
    if !(temperature > R::zero()) || !(t > R::zero()) || d == 0 {
        return Err(Error::invalid("asymptotic solution needs T > 0, t > 0, d >= 1"));
    }
    let k = theory::asymptotic_constants(chi)?;
    let d_r = R::from_usize(d).expect("dimension");
    let scale = temperature * d_r.sqrt();
    Ok(SummaryState {
        w1: k.k1 * scale * (t / (temperature * d_r)).powf(R::one() / (chi + R::lit(3.0))),
        wp: k.k_perp * scale,
        t,
    })
}

/// Predicted end-of-online-phase quantities for `(χ, T, d, P)` and optional
/// weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryPrediction {
    pub chi: f64,
    pub temperature: f64,
    pub d: usize,
    pub p: usize,
    pub weight_decay: f64,
    /// Constant `c` in `n(t̂) = c·d/P`.
    pub prefactor: f64,
    pub wp_steady: f64,
    pub lambda_hat: f64,
    pub t_hat: f64,
    pub w1_hat: f64,
    /// Stationary `w₁` under weight decay; 0 when `Λ = 0`.
    pub w1_l: f64,
    /// Stationary test error under weight decay; 0 when `Λ = 0`.
    pub error_l: f64,
    pub lambda_star: f64,
    pub constants: AsymptoticConstants<f64>,
}

impl TheoryPrediction {
    /// `ŵ₁(t)` of the asymptotic solution.
    pub fn w1_of_t(&self, t: f64) -> f64 {
        let k = &self.constants;
        let s = self.temperature * (self.d as f64).sqrt();
        k.k1 * s * (t / (self.temperature * self.d as f64)).powf(1.0 / (self.chi + 3.0))
    }

    pub fn lambda_of_t(&self, t: f64) -> f64 {
        self.w1_of_t(t) / self.wp_steady
    }

    /// `c_n λ(t)^{-(χ+1)}`
    pub fn n_of_t(&self, t: f64) -> f64 {
        self.constants.cn * self.lambda_of_t(t).powf(-(self.chi + 1.0))
    }
}

/// Solve `c_n λ^{-(χ+1)} = c·d/P` with `λ(t)` from the asymptotic solution.
pub fn predict_crossover(chi: f64, temperature: f64, d: usize, p: usize) -> Result<TheoryPrediction> {
    predict_with(chi, temperature, d, p, 0.0, 1.0)
}

/// As [`predict_crossover`], with weight decay `Λ` and an explicit
/// prefactor `c`.
pub fn predict_with(
    chi: f64,
    temperature: f64,
    d: usize,
    p: usize,
    weight_decay: f64,
    prefactor: f64,
) -> Result<TheoryPrediction> {
    if !(temperature > 0.0) || d == 0 || p == 0 || !(prefactor > 0.0) || !(weight_decay >= 0.0) {
        return Err(Error::invalid("prediction needs T > 0, d, P >= 1, c > 0, Lambda >= 0"));
    }
    let k = theory::asymptotic_constants(chi)?;
    let df = d as f64;
    let wp = k.k_perp * temperature * df.sqrt();
    let lambda_hat = (k.cn * p as f64 / (prefactor * df)).powf(1.0 / (chi + 1.0));
    let t_hat = temperature * df * (lambda_hat * k.k_perp / k.k1).powf(chi + 3.0);
    // balance g₁ = Λ w₁ at the steady ‖w⊥‖
    let lambda_star = k.c1 / (df * k.k_perp * temperature * lambda_hat.powf(chi + 3.0));
    let (w1_l, error_l) = if weight_decay > 0.0 {
        let lam = (k.c1 / (df * weight_decay * k.k_perp * temperature)).powf(1.0 / (chi + 3.0));
        (wp * lam, k.cn * lam.powf(-(chi + 1.0)))
    } else {
        (0.0, 0.0)
    };
    Ok(TheoryPrediction {
        chi,
        temperature,
        d,
        p,
        weight_decay,
        prefactor,
        wp_steady: wp,
        lambda_hat,
        t_hat,
        w1_hat: wp * lambda_hat,
        w1_l,
        error_l,
        lambda_star,
        constants: k,
    })
}

/// Scale of the temperature below which SGD behaves as gradient descent.
pub fn predict_tc(kappa: f64) -> f64 {
    kappa
}

/// Scale of the critical batch size, `P^{1/(1+χ)}`.
pub fn predict_bstar(chi: f64, p: usize) -> f64 {
    (p as f64).powf(1.0 / (1.0 + chi))
}
