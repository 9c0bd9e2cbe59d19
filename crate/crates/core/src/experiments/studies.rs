//! Momentum and weight-decay studies around a noise-dominated base cell.

use serde::{Deserialize, Serialize};

use super::fit::{fit_power_law, PowerLawFit};
use super::{run_cells, CellSummary, RunOptions, SweepResult};
use crate::error::{Error, Result};
use crate::ode;
use crate::perceptron::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentumRow {
    pub momentum: f64,
    /// End-of-training `‖w⊥‖` with momentum `m` at the base `η`.
    pub w_perp_momentum: f64,
    /// Same without momentum at `η/(1-m)`.
    pub w_perp_reference: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct MomentumStudy {
    pub result: SweepResult,
    pub rows: Vec<MomentumRow>,
}

fn w_perp(s: &CellSummary) -> Result<f64> {
    if s.diverged() {
        return Err(Error::Detection(format!("cell {} diverged", s.cell)));
    }
    s.w_perp_norm
        .ok_or_else(|| Error::Detection(format!("cell {} has no w_perp", s.cell)))
}

/// For every `m`, compare a run with momentum `m` to a run without
/// momentum at the effective learning rate `η/(1-m)`.
pub fn momentum_equivalence_study(base: &ModelParams, momenta: &[f64], opts: &RunOptions) -> Result<MomentumStudy> {
    let mut cells = Vec::new();
    for &m in momenta {
        if !(0.0..1.0).contains(&m) {
            return Err(Error::invalid(format!("momentum {m} outside [0, 1)")));
        }
        cells.push(ModelParams {
            momentum: m,
            ..base.clone()
        });
        cells.push(ModelParams {
            momentum: 0.0,
            eta: base.eta / (1.0 - m),
            ..base.clone()
        });
    }
    let result = run_cells(&cells, opts)?;
    let mut rows = Vec::new();
    for (i, &m) in momenta.iter().enumerate() {
        let with = w_perp(&result.summaries[2 * i])?;
        let reference = w_perp(&result.summaries[2 * i + 1])?;
        rows.push(MomentumRow {
            momentum: m,
            w_perp_momentum: with,
            w_perp_reference: reference,
            ratio: with / reference,
        });
    }
    Ok(MomentumStudy { result, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightDecayRow {
    pub weight_decay: f64,
    pub w1: f64,
    pub w_perp_norm: f64,
    pub test_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightDecayOptions {
    /// Runs with `Λ > 0` last `horizon / Λ` in time.
    pub horizon: f64,
    /// Cells with `Λ ≥ branch_factor · Λ*` form the decay-dominated branch.
    pub branch_factor: f64,
}

impl Default for WeightDecayOptions {
    fn default() -> Self {
        WeightDecayOptions {
            horizon: 20.0,
            branch_factor: 8.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WeightDecayStudy {
    pub result: SweepResult,
    /// The run without weight decay, stopped at zero loss.
    pub baseline: WeightDecayRow,
    /// Values at the end of the horizon, one per `Λ`, in input order.
    pub rows: Vec<WeightDecayRow>,
    pub lambda_star_theory: f64,
    /// Where the fitted decay-dominated `w₁(Λ)` reaches the baseline `w₁`.
    pub lambda_star_empirical: Option<f64>,
    pub w1_fit: Option<PowerLawFit>,
    pub error_fit: Option<PowerLawFit>,
}

fn row(s: &CellSummary) -> Result<WeightDecayRow> {
    if s.diverged() {
        return Err(Error::Detection(format!("cell {} diverged", s.cell)));
    }
    let missing = || Error::Detection(format!("cell {} has incomplete observables", s.cell));
    Ok(WeightDecayRow {
        weight_decay: s.params.weight_decay,
        w1: s.w1.ok_or_else(missing)?,
        w_perp_norm: s.w_perp_norm.ok_or_else(missing)?,
        test_error: s.test_error.ok_or_else(missing)?,
    })
}

/// Stationary weights and test error under weight decay, plus a baseline
/// without it. Cells with `Λ > 0` never reach zero loss; each runs for
/// `⌈horizon/(Λη)⌉` steps in place of `base.max_steps`.
pub fn weight_decay_study(
    base: &ModelParams,
    decays: &[f64],
    wd: &WeightDecayOptions,
    opts: &RunOptions,
) -> Result<WeightDecayStudy> {
    let mut cells = vec![ModelParams {
        weight_decay: 0.0,
        ..base.clone()
    }];
    for &l in decays {
        if !(l > 0.0) {
            return Err(Error::invalid(format!("weight decay {l} must be positive")));
        }
        let steps = (wd.horizon / (l * base.eta)).ceil() as u64;
        cells.push(ModelParams {
            weight_decay: l,
            max_steps: steps.max(1),
            ..base.clone()
        });
    }
    let result = run_cells(&cells, opts)?;
    let baseline = row(&result.summaries[0])?;
    let rows = result.summaries[1..].iter().map(row).collect::<Result<Vec<_>>>()?;

    let theory = ode::predict_crossover(base.chi, base.temperature(), base.d, base.p)?;
    let branch: Vec<&WeightDecayRow> = rows
        .iter()
        .filter(|r| r.weight_decay >= wd.branch_factor * theory.lambda_star)
        .collect();
    let ls: Vec<f64> = branch.iter().map(|r| r.weight_decay).collect();
    let w1s: Vec<f64> = branch.iter().map(|r| r.w1).collect();
    let errs: Vec<f64> = branch.iter().map(|r| r.test_error).collect();
    let w1_fit = fit_power_law("w1 ~ Lambda", &ls, &w1s).ok();
    let error_fit = fit_power_law("test_error ~ Lambda", &ls, &errs).ok();
    let lambda_star_empirical = w1_fit
        .as_ref()
        .map(|f| (baseline.w1 / f.prefactor).powf(1.0 / f.exponent))
        .filter(|l| l.is_finite());
    Ok(WeightDecayStudy {
        result,
        baseline,
        rows,
        lambda_star_theory: theory.lambda_star,
        lambda_star_empirical,
        w1_fit,
        error_fit,
    })
}
