//! Power-law fits by ordinary least squares in log-log space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fits with fewer points are refused.
pub const MIN_POINTS: usize = 4;
/// Fits below this coefficient of determination are flagged.
pub const R_SQUARED_FLAG: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    /// What was fitted, e.g. `"w_norm ~ T"`.
    pub label: String,
    pub exponent: f64,
    pub prefactor: f64,
    /// Standard error of the exponent.
    pub stderr: f64,
    pub r_squared: f64,
    pub n_points: usize,
    /// `[min x, max x]` of the points used.
    pub window: [f64; 2],
    /// Set when `r_squared < 0.9`.
    pub flagged: bool,
}

impl PowerLawFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.prefactor * x.powf(self.exponent)
    }
}

fn check_positive(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("x and y have different lengths"));
    }
    if xs.len() < MIN_POINTS {
        return Err(Error::Detection(format!(
            "power-law fit needs at least {MIN_POINTS} points, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Detection("power-law fit needs finite positive data".into()));
    }
    Ok(())
}

/// Fit `y = A x^a`.
pub fn fit_power_law(label: &str, xs: &[f64], ys: &[f64]) -> Result<PowerLawFit> {
    check_positive(xs, ys)?;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Detection("power-law fit needs at least two distinct x".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let stderr = (sse / (n - 2.0) / sxx).sqrt();
    Ok(PowerLawFit {
        label: label.to_string(),
        exponent: slope,
        prefactor: intercept.exp(),
        stderr,
        r_squared,
        n_points: xs.len(),
        window: [
            xs.iter().cloned().fold(f64::INFINITY, f64::min),
            xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        ],
        flagged: r_squared < R_SQUARED_FLAG,
    })
}

/// Joint fit `y = A u^a v^b`; returns one [`PowerLawFit`] per variable,
/// sharing the prefactor and `r²` of the joint regression.
pub fn fit_power_law_2d(
    labels: [&str; 2],
    us: &[f64],
    vs: &[f64],
    ys: &[f64],
) -> Result<(PowerLawFit, PowerLawFit)> {
    check_positive(us, ys)?;
    check_positive(vs, ys)?;
    let n = ys.len();
    let lu: Vec<f64> = us.iter().map(|x| x.ln()).collect();
    let lv: Vec<f64> = vs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|x| x.ln()).collect();
    let nf = n as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / nf;
    let (mu, mv, my) = (mean(&lu), mean(&lv), mean(&ly));
    let mut suu = 0.0;
    let mut svv = 0.0;
    let mut suv = 0.0;
    let mut suy = 0.0;
    let mut svy = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let (u, v, y) = (lu[i] - mu, lv[i] - mv, ly[i] - my);
        suu += u * u;
        svv += v * v;
        suv += u * v;
        suy += u * y;
        svy += v * y;
        syy += y * y;
    }
    let det = suu * svv - suv * suv;
    if !(det > 1e-12 * suu * svv) {
        return Err(Error::Detection("joint fit is degenerate: variables are collinear".into()));
    }
    let a = (svv * suy - suv * svy) / det;
    let b = (suu * svy - suv * suy) / det;
    let intercept = my - a * mu - b * mv;
    let sse: f64 = (0..n).map(|i| (ly[i] - intercept - a * lu[i] - b * lv[i]).powi(2)).sum();
    let s2 = sse / (nf - 3.0).max(1.0);
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let window = |xs: &[f64]| {
        [
            xs.iter().cloned().fold(f64::INFINITY, f64::min),
            xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        ]
    };
    let make = |label: &str, exponent: f64, var: f64, xs: &[f64]| PowerLawFit {
        label: label.to_string(),
        exponent,
        prefactor: intercept.exp(),
        stderr: (s2 * var).sqrt(),
        r_squared,
        n_points: n,
        window: window(xs),
        flagged: r_squared < R_SQUARED_FLAG,
    };
    Ok((make(labels[0], a, svv / det, us), make(labels[1], b, suu / det, vs)))
}

/// Geometric mean of positive values; `None` if any value is not positive.
pub fn geometric_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() || values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return None;
    }
    Some((values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp())
}

pub fn arithmetic_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    Some(values.iter().sum::<f64>() / values.len() as f64)
}
