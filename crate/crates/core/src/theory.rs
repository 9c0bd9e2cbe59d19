//! Population averages of the hinge-loss gradient, its minibatch noise
//! covariance and the unfitted fraction, as one-dimensional integrals over
//! the informative coordinate.
//!
//! All averages depend on the weights only through the reduced coordinates
//! `λ = w₁/‖w⊥‖` and `r = κ√d/‖w⊥‖`. With `z = r - λx` they are built from
//!
//! ```text
//! E_k = ∫₀^∞ ρ(x) x^k [1 + erf(z/√2)] dx
//! G_k = ∫₀^∞ ρ(x) x^k e^{-z²/2} dx
//! L   = ∫₀^∞ ρ(x) z e^{-z²/2} dx
//! ```
//!
//! Integrals are evaluated in the stretched variable `u = s·x`,
//! `s = max(λ, 1)`, which pulls out the `λ^{-(χ+k+1)}` decay analytically so
//! the absolute tolerance stays meaningful at large `λ`.

use serde::{Deserialize, Serialize};

use crate::distribution::{DataDistribution, X_MAX};
use crate::error::{Error, Result};
use crate::quadrature::{self, Tolerance};
use crate::real::Real;

/// Variances in `[-NEGATIVE_VARIANCE_GUARD, 0)` are clipped to zero.
pub const NEGATIVE_VARIANCE_GUARD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedCoords<R> {
    pub lambda: R,
    pub r: R,
}

impl<R: Real> ReducedCoords<R> {
    pub fn new(lambda: R, r: R) -> Result<Self> {
        let c = ReducedCoords { lambda, r };
        c.validate()?;
        Ok(c)
    }

    /// From the summary statistics `(w₁, ‖w⊥‖)` and the margin.
    pub fn from_weights(w1: R, w_perp_norm: R, kappa: R, dim: usize) -> Result<Self> {
        if !(w_perp_norm > R::zero()) {
            return Err(Error::invalid("reduced coordinates need ||w_perp|| > 0"));
        }
        let sqrt_d = R::from_usize(dim).expect("dimension").sqrt();
        Self::new(w1 / w_perp_norm, kappa * sqrt_d / w_perp_norm)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= R::zero()) {
            return Err(Error::invalid(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.r.is_finite() && self.r >= R::zero()) {
            return Err(Error::invalid(format!("r must be finite and >= 0, got {}", self.r)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryEvaluation<R> {
    pub g1: R,
    pub g_perp: R,
    pub n: R,
    pub sigma11_tilde: R,
    pub sigma12_tilde: R,
    pub sigma22_tilde: R,
    pub sigma1: R,
    pub sigma2: R,
}

/// Leading coefficients of the `λ → ∞`, `r = 0` expansions and the
/// constants of the asymptotic online solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticConstants<R> {
    pub c1: R,
    pub c2: R,
    pub cn: R,
    pub c11: R,
    /// Published closed form `(2+χ) / (2√π Γ((3+χ)/2))`. It agrees with the
    /// quadrature only where `Γ(1+χ/2) = 1` (χ = 0, 2); see
    /// [`AsymptoticConstants::c22_from_integrals`].
    pub c22: R,
    pub k_perp: R,
    pub k1: R,
    pub b: R,
    pub gamma: R,
}

impl<R: Real> AsymptoticConstants<R> {
    /// Leading coefficient of `Σ̃₂₂ λ^{χ+1}` obtained by expanding the
    /// integrals directly: `(2+χ) c_n`.
    pub fn c22_from_integrals(&self) -> R {
        (R::lit(2.0) + R::lit(1.0) / self.gamma - R::one()) * self.cn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kernel {
    /// `1 + erf(z/√2)`
    Erfc,
    /// `e^{-z²/2}`
    Gauss,
    /// `z e^{-z²/2}`
    GaussLinear,
}

/// `∫₀^∞ ρ(x) x^k K(r - λx) dx`
fn half_line<R: Real>(dist: &DataDistribution<R>, coords: ReducedCoords<R>, k: i32, kernel: Kernel) -> Result<R> {
    let ReducedCoords { lambda, r } = coords;
    let one = R::one();
    let half = R::lit(0.5);
    let s = lambda.max(one);
    let slope = lambda / s;
    let p = dist.chi() + R::from_i32(k).expect("small integer");
    let inv_2s2 = half / (s * s);
    let sqrt_half = half.sqrt();

    let mut upper = R::lit(X_MAX) * s;
    if lambda > R::zero() {
        upper = upper.min((r + R::lit(X_MAX)) / slope);
    }
    let mut points = vec![R::zero(), upper];
    let mut push = |u: R| {
        if u > R::zero() && u < upper {
            points.push(u);
        }
    };
    push(s);
    push(R::lit(4.0) * s);
    if lambda > R::zero() {
        let centre = r / slope;
        let width = slope.recip();
        for off in [-8.0, -2.0, 0.0, 2.0, 8.0] {
            push(centre + R::lit(off) * width);
        }
    }
    points.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    points.dedup();

    let integrand = |u: R| {
        let z = r - slope * u;
        let weight = (-u * u * inv_2s2).exp();
        let kern = match kernel {
            Kernel::Erfc => (-z * sqrt_half).erfc(),
            Kernel::Gauss => (-z * z * half).exp(),
            Kernel::GaussLinear => z * (-z * z * half).exp(),
        };
        weight * kern
    };
    let est = quadrature::power_weighted(p, integrand, &points, Tolerance::default())?;
    Ok(est.value * s.powf(-(p + one)) / dist.norm())
}

#[inline]
fn two_over_sqrt_2pi<R: Real>() -> R {
    R::lit(2.0) / R::TAU().sqrt()
}

#[inline]
fn sqrt_dim<R: Real>(dist: &DataDistribution<R>) -> R {
    R::from_usize(dist.dim()).expect("dimension").sqrt()
}

/// Drift of `w₁`, including the `1/√d` prefactor.
pub fn g1<R: Real>(dist: &DataDistribution<R>, coords: ReducedCoords<R>) -> Result<R> {
    coords.validate()?;
    Ok(half_line(dist, coords, 1, Kernel::Erfc)? / sqrt_dim(dist))
}

/// Drift of `w⊥` along its own direction (non-positive).
pub fn g_perp<R: Real>(dist: &DataDistribution<R>, coords: ReducedCoords<R>) -> Result<R> {
    coords.validate()?;
    Ok(-two_over_sqrt_2pi::<R>() * half_line(dist, coords, 0, Kernel::Gauss)? / sqrt_dim(dist))
}

/// Population fraction of points violating the margin.
pub fn n_frac<R: Real>(dist: &DataDistribution<R>, coords: ReducedCoords<R>) -> Result<R> {
    coords.validate()?;
    let n = half_line(dist, coords, 0, Kernel::Erfc)?;
    Ok(n.max(R::zero()).min(R::one()))
}

fn clip_variance<R: Real>(name: &'static str, v: R) -> Result<R> {
    if v >= R::zero() {
        Ok(v)
    } else if v >= -R::lit(NEGATIVE_VARIANCE_GUARD) {
        Ok(R::zero())
    } else {
        Err(Error::NegativeVariance {
            name,
            value: v.as_f64(),
        })
    }
}

/// `(Σ̃₁₁, Σ̃₁₂, Σ̃₂₂)`: the noise covariance restricted to the plane
/// spanned by `e₁` and `e_{w⊥}`, without the `1/d` factor.
pub fn sigma_tilde<R: Real>(dist: &DataDistribution<R>, coords: ReducedCoords<R>) -> Result<(R, R, R)> {
    coords.validate()?;
    let n = half_line(dist, coords, 0, Kernel::Erfc)?;
    let e1 = half_line(dist, coords, 1, Kernel::Erfc)?;
    let e2 = half_line(dist, coords, 2, Kernel::Erfc)?;
    let g0 = half_line(dist, coords, 0, Kernel::Gauss)?;
    let g1 = half_line(dist, coords, 1, Kernel::Gauss)?;
    let lin = half_line(dist, coords, 0, Kernel::GaussLinear)?;
    let c = two_over_sqrt_2pi::<R>();
    let s11 = clip_variance("sigma11", e2 - e1 * e1)?;
    let s12 = -c * g1 + c * e1 * g0;
    let s22 = clip_variance("sigma22", n - c * lin - (c * g0) * (c * g0))?;
    Ok((s11, s12, s22))
}

pub fn evaluate<R: Real>(dist: &DataDistribution<R>, coords: ReducedCoords<R>) -> Result<TheoryEvaluation<R>> {
    coords.validate()?;
    let sqrt_d = sqrt_dim(dist);
    let g_perp_raw = half_line(dist, coords, 0, Kernel::Gauss)?;
    let e1 = half_line(dist, coords, 1, Kernel::Erfc)?;
    let n = n_frac(dist, coords)?;
    let (s11, s12, s22) = sigma_tilde(dist, coords)?;
    Ok(TheoryEvaluation {
        g1: e1 / sqrt_d,
        g_perp: -two_over_sqrt_2pi::<R>() * g_perp_raw / sqrt_d,
        n,
        sigma11_tilde: s11,
        sigma12_tilde: s12,
        sigma22_tilde: s22,
        sigma1: s11.sqrt(),
        sigma2: s22.sqrt(),
    })
}

/// Drift terms needed by the reduced ODE: `(g₁, g⊥, n)`.
pub fn drift_terms<R: Real>(dist: &DataDistribution<R>, coords: ReducedCoords<R>) -> Result<(R, R, R)> {
    coords.validate()?;
    let sqrt_d = sqrt_dim(dist);
    let e1 = half_line(dist, coords, 1, Kernel::Erfc)?;
    let g0 = half_line(dist, coords, 0, Kernel::Gauss)?;
    let n = half_line(dist, coords, 0, Kernel::Erfc)?;
    Ok((e1 / sqrt_d, -two_over_sqrt_2pi::<R>() * g0 / sqrt_d, n.max(R::zero()).min(R::one())))
}

/// Misclassification probability of a predictor at angle `atan(1/λ)` from
/// the teacher: the unfitted fraction at zero margin.
pub fn analytic_test_error<R: Real>(dist: &DataDistribution<R>, lambda: R) -> Result<R> {
    if lambda.is_nan() || lambda < R::zero() {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    if lambda.is_infinite() {
        return Ok(R::zero());
    }
    let n = n_frac(dist, ReducedCoords { lambda, r: R::zero() })?;
    Ok(n.min(R::lit(0.5)))
}

pub fn asymptotic_constants<R: Real>(chi: R) -> Result<AsymptoticConstants<R>> {
    if !(chi.is_finite() && chi > -R::one()) {
        return Err(Error::invalid(format!("chi must be > -1, got {chi}")));
    }
    let one = R::one();
    let two = R::lit(2.0);
    let three = R::lit(3.0);
    let half = R::lit(0.5);
    let sqrt_pi = R::PI().sqrt();
    let sqrt_2pi = R::TAU().sqrt();

    let c1 = (one + chi) / (sqrt_2pi * (two + chi));
    let c2 = one / sqrt_2pi;
    let cn = (one + chi * half).gamma() / (two * sqrt_pi * ((three + chi) * half).gamma());
    let c11 = two * (two + chi * half).gamma() / (sqrt_pi * (three + chi) * ((one + chi) * half).gamma());
    let c22 = (two + chi) / (two * sqrt_pi * ((three + chi) * half).gamma());
    let k_perp = cn * (R::PI() * half).sqrt();
    let k1 = k_perp * ((chi + three) * c1 / k_perp).powf(one / (chi + three));
    Ok(AsymptoticConstants {
        c1,
        c2,
        cn,
        c11,
        c22,
        k_perp,
        k1,
        b: one + two / (one + chi),
        gamma: one / (one + chi),
    })
}

/// Relative magnitude of the Ornstein–Uhlenbeck fluctuations around the
/// asymptotic deterministic solution, `(⟨z₁²⟩^{1/2}/ŵ₁, ⟨z⊥²⟩^{1/2}/ŵ⊥)`,
/// at the time where the deterministic `λ` equals `lambda_t`.
///
/// Both kernels are integrated from the time where `λ = 1`:
///
/// ```text
/// ⟨z₁²⟩ = c₁₁k⊥/((χ+3)c₁) T² (1 - λ_t^{-2(χ+2)}) / (2p),   p = (χ+2)/(χ+3)
/// ⟨z⊥²⟩ = c₂₂k⊥ √(2π)/2 T² (1 - exp(-(λ_t² - 1)/(√(2π) c₁)))
/// ```
///
/// and divided by `ŵ₁ = k⊥T√d λ_t` and `ŵ⊥ = k⊥T√d`.
pub fn fluctuation_magnitudes<R: Real>(chi: R, temperature: R, dim: usize, lambda_t: R) -> Result<(R, R)> {
    if !(temperature > R::zero() && temperature.is_finite()) {
        return Err(Error::invalid("temperature must be positive"));
    }
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    if !(lambda_t >= R::one()) {
        return Err(Error::invalid(format!("lambda_t must be >= 1, got {lambda_t}")));
    }
    let k = asymptotic_constants(chi)?;
    let one = R::one();
    let two = R::lit(2.0);
    let t2 = temperature * temperature;
    let sqrt_d = R::from_usize(dim).expect("dimension").sqrt();
    let p = (chi + two) / (chi + R::lit(3.0));

    let a1 = k.c11 * k.k_perp / ((chi + R::lit(3.0)) * k.c1);
    let decay1 = if lambda_t.is_infinite() { R::zero() } else { lambda_t.powf(-two * (chi + two)) };
    let z1_sq = a1 * t2 * (one - decay1) / (two * p);
    let w1_hat = k.k_perp * temperature * sqrt_d * lambda_t;

    let sqrt_2pi = R::TAU().sqrt();
    let decay2 = (-(lambda_t * lambda_t - one) / (sqrt_2pi * k.c1)).exp();
    // variance of the ‖w⊥‖ noise from the Σ̃₂₂ expansion itself, not the published c₂₂
    let zp_sq = k.c22_from_integrals() * k.k_perp * sqrt_2pi * R::lit(0.5) * t2 * (one - decay2);
    let wp_hat = k.k_perp * temperature * sqrt_d;

    let z1_rel = if lambda_t.is_infinite() { R::zero() } else { z1_sq.sqrt() / w1_hat };
    Ok((z1_rel, zp_sq.sqrt() / wp_hat))
}
