//! The anisotropic data distribution.
//!
//! The informative coordinate has density `ρ(x₁) = |x₁|^χ e^{-x₁²/2} / Z`
//! with `Z = 2^{(1+χ)/2} Γ((1+χ)/2)`; the remaining `d-1` coordinates are
//! i.i.d. standard normal and the label is `sign(x₁)`.
//!
//! Sampling uses the exact transform `|x₁| = √(2G)`, `G ~ Gamma((1+χ)/2, 1)`,
//! with an independent uniform sign.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::quadrature::{self, Tolerance};
use crate::real::Real;
use crate::rng::{self, Purpose, StreamRng};

/// Upper integration limit for the informative coordinate; `ρ` is below
/// 1e-300 beyond it for every χ the crate accepts.
pub const X_MAX: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataDistribution<R> {
    chi: R,
    dim: usize,
    norm: R,
    mean_abs_x1: R,
}

impl<R: Real> DataDistribution<R> {
    pub fn new(chi: R, dim: usize) -> Result<Self> {
        if !chi.is_finite() || chi <= -R::one() {
            return Err(Error::invalid(format!("chi must be finite and > -1, got {chi}")));
        }
        if dim < 2 {
            return Err(Error::invalid(format!("dimension must be >= 2, got {dim}")));
        }
        let half = R::lit(0.5);
        let a = (R::one() + chi) * half;
        let norm = R::lit(2.0).powf(a) * a.gamma();
        let mut dist = DataDistribution {
            chi,
            dim,
            norm,
            mean_abs_x1: R::zero(),
        };
        dist.mean_abs_x1 = dist.abs_moment(1)?;
        Ok(dist)
    }

    #[inline]
    pub fn chi(&self) -> R {
        self.chi
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The normalisation constant `Z`.
    #[inline]
    pub fn norm(&self) -> R {
        self.norm
    }

    /// `E|x₁|`, computed once by quadrature at construction.
    #[inline]
    pub fn mean_abs_x1(&self) -> R {
        self.mean_abs_x1
    }

    pub fn pdf(&self, x1: R) -> Result<R> {
        if !x1.is_finite() {
            return Err(Error::invalid("pdf evaluated at a non-finite point"));
        }
        if x1 == R::zero() {
            return match self.chi.partial_cmp(&R::zero()) {
                Some(std::cmp::Ordering::Greater) => Ok(R::zero()),
                Some(std::cmp::Ordering::Equal) => Ok(self.norm.recip()),
                _ => Err(Error::invalid("pdf diverges at x1 = 0 for chi < 0")),
            };
        }
        let a = x1.abs();
        Ok(a.powf(self.chi) * (-a * a * R::lit(0.5)).exp() / self.norm)
    }

    /// `E|x₁|^k` by quadrature over the half line (doubled).
    pub fn abs_moment(&self, k: i32) -> Result<R> {
        let p = self.chi + R::from_i32(k).expect("small integer");
        let est = quadrature::power_weighted(
            p,
            |u: R| (-u * u * R::lit(0.5)).exp(),
            &[R::zero(), R::one(), R::lit(4.0), R::lit(X_MAX)],
            Tolerance::default(),
        )?;
        Ok(R::lit(2.0) * est.value / self.norm)
    }

    pub fn sample_x1<G: Rng + ?Sized>(&self, rng: &mut G) -> R {
        let shape = 0.5 * (1.0 + self.chi.as_f64());
        let gamma = Gamma::new(shape, 1.0).expect("shape > 0 for chi > -1");
        loop {
            let g: f64 = gamma.sample(rng);
            let magnitude = (2.0 * g).sqrt();
            let x = if rng.random::<bool>() { magnitude } else { -magnitude };
            let x = R::lit(x);
            if x != R::zero() {
                return x;
            }
        }
    }

    pub fn sample_datum<G: Rng + ?Sized>(&self, rng: &mut G) -> Datum<R> {
        let x1 = self.sample_x1(rng);
        let x_perp = (1..self.dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                R::lit(z)
            })
            .collect();
        Datum {
            x1,
            x_perp,
            label: x1.signum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Datum<R> {
    pub x1: R,
    pub x_perp: Vec<R>,
    pub label: R,
}

/// A training set stored row-major: row `μ` is `[x₁, x⊥...]` of length `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<R> {
    dist: DataDistribution<R>,
    seed: u64,
    rows: Vec<R>,
    labels: Vec<R>,
}

impl<R: Real> Dataset<R> {
    /// Draw `p` points using the data stream derived from `seed`.
    pub fn generate(dist: DataDistribution<R>, p: usize, seed: u64) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("training set size must be >= 1"));
        }
        let mut rng: StreamRng = rng::stream(seed, Purpose::Data, &[]);
        let d = dist.dim();
        let mut rows = Vec::with_capacity(p * d);
        let mut labels = Vec::with_capacity(p);
        for _ in 0..p {
            let datum = dist.sample_datum(&mut rng);
            rows.push(datum.x1);
            rows.extend_from_slice(&datum.x_perp);
            labels.push(datum.label);
        }
        Ok(Dataset {
            dist,
            seed,
            rows,
            labels,
        })
    }

    /// Assemble a dataset from explicit rows (labels are recomputed from x₁).
    pub fn from_rows(dist: DataDistribution<R>, seed: u64, rows: Vec<R>) -> Result<Self> {
        let d = dist.dim();
        if rows.is_empty() || !rows.len().is_multiple_of(d) {
            return Err(Error::invalid(format!(
                "row buffer of length {} is not a non-empty multiple of d = {d}",
                rows.len()
            )));
        }
        let mut labels = Vec::with_capacity(rows.len() / d);
        for row in rows.chunks_exact(d) {
            if row[0] == R::zero() || !row[0].is_finite() {
                return Err(Error::invalid("x1 must be finite and non-zero"));
            }
            labels.push(row[0].signum());
        }
        Ok(Dataset {
            dist,
            seed,
            rows,
            labels,
        })
    }

    #[inline]
    pub fn distribution(&self) -> &DataDistribution<R> {
        &self.dist
    }

    #[inline]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dist.dim()
    }

    #[inline]
    pub fn row(&self, mu: usize) -> &[R] {
        let d = self.dim();
        &self.rows[mu * d..(mu + 1) * d]
    }

    #[inline]
    pub fn label(&self, mu: usize) -> R {
        self.labels[mu]
    }

    pub fn rows(&self) -> &[R] {
        &self.rows
    }

    pub fn datum(&self, mu: usize) -> Datum<R> {
        let row = self.row(mu);
        Datum {
            x1: row[0],
            x_perp: row[1..].to_vec(),
            label: self.labels[mu],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[R], R)> + '_ {
        self.rows.chunks_exact(self.dim()).zip(self.labels.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn dist(chi: f64, d: usize) -> DataDistribution<f64> {
        DataDistribution::new(chi, d).unwrap()
    }

    #[test]
    fn pdf_examples() {
        let g = dist(0.0, 2);
        assert!((g.pdf(0.0).unwrap() - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        let c1 = dist(1.0, 2);
        assert!((c1.norm() - 2.0).abs() < 1e-14);
        let v = c1.pdf(1.0).unwrap();
        assert!((v - (-0.5f64).exp() / 2.0).abs() < 1e-15);
        assert!((v - 0.303_265_329_856_316_7).abs() < 1e-12);
        assert_eq!(c1.pdf(-1.0).unwrap(), v);
        assert_eq!(c1.pdf(0.0).unwrap(), 0.0);
        assert!(dist(-0.5, 2).pdf(0.0).is_err());
        assert!(c1.pdf(f64::NAN).is_err());
        assert!(c1.pdf(f64::INFINITY).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(DataDistribution::<f64>::new(-1.0, 4).is_err());
        assert!(DataDistribution::<f64>::new(f64::NAN, 4).is_err());
        assert!(DataDistribution::<f64>::new(1.0, 1).is_err());
        assert!(Dataset::generate(dist(1.0, 4), 0, 1).is_err());
    }

    #[test]
    fn pdf_integrates_to_one() {
        for chi in [0.0, 0.5, 1.0, 2.0, 4.0, -0.5] {
            let dd = dist(chi, 2);
            let total = dd.abs_moment(0).unwrap();
            assert!((total - 1.0).abs() < 1e-10, "chi={chi} total={total}");
            // independent check of Z against the closed form for the integral
            let zq = quadrature::power_weighted(chi, |u: f64| (-u * u / 2.0).exp(), &[0.0, 1.0, 40.0], Tolerance::default())
                .unwrap()
                .value
                * 2.0;
            assert!((zq / dd.norm() - 1.0).abs() < 1e-11, "chi={chi}");
        }
    }

    #[test]
    fn mean_abs_matches_closed_form() {
        for chi in [-0.5, 0.0, 1.0, 3.0] {
            let dd = dist(chi, 2);
            let exact = 2f64.sqrt() * libm::tgamma(1.0 + chi / 2.0) / libm::tgamma((1.0 + chi) / 2.0);
            assert!((dd.mean_abs_x1() - exact).abs() < 1e-12, "chi={chi}");
        }
    }

    #[test]
    fn sampled_datum_shape_and_label() {
        let dd = dist(0.7, 2);
        let mut rng = stream(3, Purpose::MonteCarlo, &[]);
        for _ in 0..100 {
            let x = dd.sample_datum(&mut rng);
            assert_eq!(x.x_perp.len(), 1);
            assert!(x.label * x.x1 > 0.0);
            assert!(x.label == 1.0 || x.label == -1.0);
        }
    }

    #[test]
    fn dataset_is_deterministic() {
        let dd = dist(1.0, 5);
        let a = Dataset::generate(dd, 3, 7).unwrap();
        let b = Dataset::generate(dd, 3, 7).unwrap();
        let c = Dataset::generate(dd, 3, 8).unwrap();
        let bits = |ds: &Dataset<f64>| ds.rows().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&c));
        assert_eq!(a.len(), 3);
        assert_eq!(a.datum(2).x_perp.len(), 4);
    }

    #[test]
    fn from_rows_recomputes_labels() {
        let dd = dist(1.0, 2);
        let ds = Dataset::from_rows(dd, 0, vec![0.5, 1.0, -2.0, 0.0]).unwrap();
        assert_eq!(ds.label(0), 1.0);
        assert_eq!(ds.label(1), -1.0);
        assert!(Dataset::from_rows(dd, 0, vec![0.0, 1.0]).is_err());
        assert!(Dataset::from_rows(dd, 0, vec![1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn f32_distribution_agrees_with_f64() {
        let a = DataDistribution::<f32>::new(1.0, 8).unwrap();
        let b = dist(1.0, 8);
        assert!((a.norm() as f64 - b.norm()).abs() < 1e-6);
        assert!((a.mean_abs_x1() as f64 - b.mean_abs_x1()).abs() < 1e-5);
    }
}
