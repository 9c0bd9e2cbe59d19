//! Detectors for crossovers and regime boundaries in sweep results.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::fit::{self, fit_power_law, fit_power_law_2d, geometric_mean, PowerLawFit};
use super::CellSummary;
use crate::error::{Error, Result};
use crate::ode;
use crate::perceptron::RunRecord;

/// First recorded point where the train and test errors separate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub step: u64,
    pub t: f64,
    pub test_error: f64,
    pub n_train: f64,
    pub lambda: f64,
    pub r: f64,
}

/// First recorded `t` where `(test_error - n_train) / test_error` exceeds
/// `threshold`; `None` if the errors never separate.
pub fn detect_empirical_that(run: &RunRecord, threshold: f64) -> Option<Separation> {
    run.points
        .iter()
        .find(|p| p.obs.test_error > 0.0 && (p.obs.test_error - p.obs.n_train) / p.obs.test_error > threshold)
        .map(|p| Separation {
            step: p.step,
            t: p.t,
            test_error: p.obs.test_error,
            n_train: p.obs.n_train,
            lambda: p.obs.lambda,
            r: p.obs.r,
        })
}

fn by_p(summaries: &[CellSummary]) -> BTreeMap<usize, Vec<&CellSummary>> {
    let mut groups: BTreeMap<usize, Vec<&CellSummary>> = BTreeMap::new();
    for s in summaries.iter().filter(|s| !s.diverged()) {
        groups.entry(s.params.p).or_default().push(s);
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BstarPoint {
    pub p: usize,
    pub bstar: f64,
    /// Plateau of `w₁·B/η` on the small-batch branch.
    pub small_plateau: f64,
    /// Plateau of `w₁/η` on the large-batch branch.
    pub large_plateau: f64,
    pub n_small: usize,
    pub n_large: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BstarResult {
    pub points: Vec<BstarPoint>,
    pub fit: PowerLawFit,
    /// Largest relative deviation, across `P`, of the small-batch plateau of
    /// `w₁·B/(η B*)` with `B*` taken from the fit.
    pub collapse_scatter: f64,
}

/// Locate the critical batch size for one `P` from `(B, η, w₁)` triples.
///
/// Starting from the geometric middle of the batch range, the plateaus are
/// averaged over `B ≤ B*/2` and `B ≥ 2B*` and `B*` is moved to their
/// intersection until it stops changing.
pub fn locate_bstar(points: &[(f64, f64, f64)]) -> Result<(f64, f64, f64, usize, usize)> {
    if points.len() < 6 {
        return Err(Error::Detection(format!(
            "critical batch size needs at least 6 batch sizes, got {}",
            points.len()
        )));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (bmin, bmax) = (pts[0].0, pts[pts.len() - 1].0);
    let mut bstar = (bmin * bmax).sqrt();
    let mut last = (0.0, 0.0, 0, 0);
    for _ in 0..50 {
        let mut small: Vec<f64> = pts.iter().filter(|p| p.0 <= bstar / 2.0).map(|p| p.2 * p.0 / p.1).collect();
        let mut large: Vec<f64> = pts.iter().filter(|p| p.0 >= bstar * 2.0).map(|p| p.2 / p.1).collect();
        if small.is_empty() {
            small = pts[..2].iter().map(|p| p.2 * p.0 / p.1).collect();
        }
        if large.is_empty() {
            large = pts[pts.len() - 2..].iter().map(|p| p.2 / p.1).collect();
        }
        let cs = geometric_mean(&small).ok_or_else(|| Error::Detection("non-positive w1 on small-B branch".into()))?;
        let cl = geometric_mean(&large).ok_or_else(|| Error::Detection("non-positive w1 on large-B branch".into()))?;
        let next = cs / cl;
        last = (cs, cl, small.len(), large.len());
        if (next / bstar - 1.0).abs() < 1e-12 {
            bstar = next;
            break;
        }
        bstar = next;
        if !(bstar.is_finite() && bstar > 0.0) {
            break;
        }
    }
    if !(bstar > bmin && bstar < bmax) {
        return Err(Error::Detection(format!(
            "critical batch size {bstar:.3e} outside swept range [{bmin}, {bmax}]"
        )));
    }
    Ok((bstar, last.0, last.1, last.2, last.3))
}

/// Critical batch size per `P` from a sweep over `B` (at fixed `η` or `T`)
/// and several `P`, and its power-law fit in `P`.
pub fn detect_bstar(summaries: &[CellSummary]) -> Result<BstarResult> {
    let groups = by_p(summaries);
    if groups.len() < 3 {
        return Err(Error::Detection(format!(
            "critical batch size needs at least 3 values of P, got {}",
            groups.len()
        )));
    }
    let mut points = Vec::new();
    for (&p, cells) in &groups {
        let triples: Vec<(f64, f64, f64)> = cells
            .iter()
            .filter_map(|s| s.w1.map(|w1| (s.params.batch as f64, s.params.eta, w1)))
            .collect();
        let (bstar, cs, cl, ns, nl) = locate_bstar(&triples)?;
        points.push(BstarPoint {
            p,
            bstar,
            small_plateau: cs,
            large_plateau: cl,
            n_small: ns,
            n_large: nl,
        });
    }
    let ps: Vec<f64> = points.iter().map(|b| b.p as f64).collect();
    let bs: Vec<f64> = points.iter().map(|b| b.bstar).collect();
    let fit = fit_power_law("bstar ~ P", &ps, &bs)?;
    let collapsed: Vec<f64> = points.iter().map(|b| b.small_plateau / fit.eval(b.p as f64)).collect();
    let centre = geometric_mean(&collapsed).ok_or_else(|| Error::Detection("collapse undefined".into()))?;
    let collapse_scatter = collapsed.iter().map(|v| (v / centre - 1.0).abs()).fold(0.0, f64::max);
    Ok(BstarResult {
        points,
        fit,
        collapse_scatter,
    })
}

/// Which cells count as noise dominated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseFilter {
    /// Keep `T ≥ t_over_kappa · κ`.
    pub t_over_kappa: f64,
    /// Keep `B ≤ bstar_fraction · P^{1/(1+χ)}`.
    pub bstar_fraction: f64,
}

impl Default for NoiseFilter {
    fn default() -> Self {
        NoiseFilter {
            t_over_kappa: 8.0,
            bstar_fraction: 0.25,
        }
    }
}

impl NoiseFilter {
    pub fn accepts(&self, s: &CellSummary) -> bool {
        let p = &s.params;
        !s.diverged()
            && s.temperature() >= self.t_over_kappa * p.kappa
            && (p.batch as f64) <= self.bstar_fraction * ode::predict_bstar(p.chi, p.p)
    }
}

fn joint_fit(
    summaries: &[CellSummary],
    filter: &NoiseFilter,
    name: &str,
    obs: fn(&CellSummary) -> Option<f64>,
) -> Result<(PowerLawFit, PowerLawFit)> {
    let mut ts = Vec::new();
    let mut ps = Vec::new();
    let mut ys = Vec::new();
    for s in summaries.iter().filter(|s| filter.accepts(s)) {
        if let Some(y) = obs(s) {
            ts.push(s.temperature());
            ps.push(s.params.p as f64);
            ys.push(y);
        }
    }
    fit_power_law_2d([&format!("{name} ~ T"), &format!("{name} ~ P")], &ts, &ps, &ys)
}

/// Joint fit `‖w‖ = A T^{a_T} P^{a_P}` over noise-dominated cells.
pub fn fit_weight_scaling(summaries: &[CellSummary], filter: &NoiseFilter) -> Result<(PowerLawFit, PowerLawFit)> {
    joint_fit(summaries, filter, "w_norm", |s| s.w_norm)
}

/// Joint fit `t̂ = A T^{a_T} P^{b}` over noise-dominated cells.
pub fn fit_that_scaling(summaries: &[CellSummary], filter: &NoiseFilter) -> Result<(PowerLawFit, PowerLawFit)> {
    joint_fit(summaries, filter, "t_hat", |s| s.t_hat)
}

/// Point of the boundary between the gradient-descent and noisy regimes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub batch: usize,
    pub eta_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdBoundary {
    /// Alignment averaged over the smallest-η column.
    pub m_gd: f64,
    pub factor: f64,
    pub points: Vec<BoundaryPoint>,
}

/// Contour where the alignment first exceeds `factor · m_GD`, scanning each
/// batch size by increasing `η` and interpolating linearly in `log η`.
/// Batch sizes without a crossing are left out.
pub fn detect_gd_boundary(summaries: &[CellSummary], factor: f64) -> Result<GdBoundary> {
    let cells: Vec<&CellSummary> = summaries.iter().filter(|s| !s.diverged()).collect();
    let eta_min = cells
        .iter()
        .map(|s| s.params.eta)
        .fold(f64::INFINITY, f64::min);
    if !eta_min.is_finite() {
        return Err(Error::Detection("phase grid has no usable cells".into()));
    }
    let reference: Vec<f64> = cells
        .iter()
        .filter(|s| s.params.eta == eta_min)
        .filter_map(|s| s.alignment)
        .collect();
    let m_gd = fit::arithmetic_mean(&reference).ok_or_else(|| Error::Detection("no alignment in reference column".into()))?;
    let threshold = factor * m_gd;

    let mut rows: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for s in &cells {
        if let Some(a) = s.alignment {
            rows.entry(s.params.batch).or_default().push((s.params.eta, a));
        }
    }
    let mut points = Vec::new();
    for (batch, mut row) in rows {
        row.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in row.windows(2) {
            let ((e0, a0), (e1, a1)) = (w[0], w[1]);
            if a0 < threshold && a1 >= threshold {
                let frac = (threshold - a0) / (a1 - a0);
                let eta_c = (e0.ln() + frac * (e1.ln() - e0.ln())).exp();
                points.push(BoundaryPoint { batch, eta_c });
                break;
            }
        }
    }
    Ok(GdBoundary { m_gd, factor, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalTemperature {
    pub kappa: f64,
    /// `‖w⊥‖` averaged over the two lowest temperatures.
    pub plateau: f64,
    pub t_c: f64,
}

/// Temperature at which the end-of-training `‖w⊥‖` first exceeds
/// `factor` times its low-temperature plateau, interpolated in log-log.
/// `summaries` should hold a single temperature sweep at fixed `κ`.
pub fn detect_tc(summaries: &[CellSummary], factor: f64) -> Result<CriticalTemperature> {
    let mut pts: Vec<(f64, f64)> = summaries
        .iter()
        .filter(|s| !s.diverged())
        .filter_map(|s| s.w_perp_norm.map(|w| (s.temperature(), w)))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.len() < 3 {
        return Err(Error::Detection("critical temperature needs at least 3 temperatures".into()));
    }
    let kappa = summaries[0].params.kappa;
    let plateau = geometric_mean(&[pts[0].1, pts[1].1]).ok_or_else(|| Error::Detection("non-positive plateau".into()))?;
    let level = factor * plateau;
    for w in pts.windows(2) {
        let ((t0, y0), (t1, y1)) = (w[0], w[1]);
        if y0 < level && y1 >= level {
            let frac = (level.ln() - y0.ln()) / (y1.ln() - y0.ln());
            let t_c = (t0.ln() + frac * (t1.ln() - t0.ln())).exp();
            return Ok(CriticalTemperature { kappa, plateau, t_c });
        }
    }
    Err(Error::Detection(format!(
        "w_perp never exceeds {factor} x its low-T plateau in the swept range"
    )))
}
