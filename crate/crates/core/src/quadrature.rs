//! Globally adaptive Gauss–Kronrod (10/21 point) integration on finite
//! intervals with user supplied breakpoints.
//!
//! The interval with the largest error estimate is bisected until the summed
//! estimate drops below `max(abs, rel * |I|)`. Error estimates follow the
//! QUADPACK `qk21` heuristics.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::real::Real;

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_600_525_478_166,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

// weights of the 10-point Gauss rule on XGK[1], XGK[3], ..., XGK[9]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            abs: 1e-12,
            rel: 1e-12,
            max_intervals: 4000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate<R> {
    pub value: R,
    pub error: R,
    pub intervals: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QuadratureError {
    #[error("quadrature did not converge: value {value:e}, error estimate {error:e} after {intervals} intervals")]
    NoConvergence {
        value: f64,
        error: f64,
        intervals: usize,
    },
    #[error("non-finite integrand value at x = {x:e}")]
    NonFinite { x: f64 },
    #[error("invalid integration range")]
    BadRange,
}

struct Segment<R> {
    a: R,
    b: R,
    value: R,
    error: R,
}

impl<R: Real> PartialEq for Segment<R> {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl<R: Real> Eq for Segment<R> {}
impl<R: Real> PartialOrd for Segment<R> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<R: Real> Ord for Segment<R> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .partial_cmp(&other.error)
            .unwrap_or(Ordering::Equal)
    }
}

/// One 21-point Kronrod evaluation with its embedded Gauss error estimate.
pub fn gauss_kronrod_21<R, F>(f: &F, a: R, b: R) -> Result<(R, R), QuadratureError>
where
    R: Real,
    F: Fn(R) -> R,
{
    let half = R::lit(0.5);
    let center = half * (a + b);
    let half_len = half * (b - a);
    let eval = |x: R| -> Result<R, QuadratureError> {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(QuadratureError::NonFinite { x: x.as_f64() })
        }
    };

    let f_center = eval(center)?;
    let mut res_k = f_center * R::lit(WGK[10]);
    let mut res_g = R::zero();
    let mut res_abs = res_k.abs();
    let mut fv1 = [R::zero(); 10];
    let mut fv2 = [R::zero(); 10];
    for j in 0..10 {
        let dx = half_len * R::lit(XGK[j]);
        let f1 = eval(center - dx)?;
        let f2 = eval(center + dx)?;
        fv1[j] = f1;
        fv2[j] = f2;
        let w = R::lit(WGK[j]);
        res_k = res_k + w * (f1 + f2);
        res_abs = res_abs + w * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g = res_g + R::lit(WG[j / 2]) * (f1 + f2);
        }
    }
    let mean = res_k * half;
    let mut res_asc = R::lit(WGK[10]) * (f_center - mean).abs();
    for j in 0..10 {
        res_asc = res_asc + R::lit(WGK[j]) * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }

    let abs_half = half_len.abs();
    let value = res_k * half_len;
    let res_abs = res_abs * abs_half;
    let res_asc = res_asc * abs_half;
    let mut err = ((res_k - res_g) * half_len).abs();
    if res_asc != R::zero() && err != R::zero() {
        let scale = (R::lit(200.0) * err / res_asc).powf(R::lit(1.5));
        err = if scale < R::one() { res_asc * scale } else { res_asc };
    }
    let eps = R::epsilon();
    if res_abs > R::min_positive_value() / (R::lit(50.0) * eps) {
        err = err.max(R::lit(50.0) * eps * res_abs);
    }
    Ok((value, err))
}

/// Integrate `f` over `[points[0], points[last]]`, starting from the
/// partition given by `points` (which must be non-decreasing).
pub fn integrate<R, F>(f: F, points: &[R], tol: Tolerance) -> Result<Estimate<R>, QuadratureError>
where
    R: Real,
    F: Fn(R) -> R,
{
    if points.len() < 2 || points.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(QuadratureError::BadRange);
    }
    let mut heap = BinaryHeap::new();
    let mut total = R::zero();
    let mut total_err = R::zero();
    for w in points.windows(2) {
        if w[0] == w[1] {
            continue;
        }
        let (value, error) = gauss_kronrod_21(&f, w[0], w[1])?;
        total = total + value;
        total_err = total_err + error;
        heap.push(Segment {
            a: w[0],
            b: w[1],
            value,
            error,
        });
    }
    // the requested relative accuracy is capped at what the precision can deliver
    let rel = R::lit(tol.rel).max(R::lit(100.0) * R::epsilon());
    let target = |v: R| R::lit(tol.abs).max(rel * v.abs());

    while total_err > target(total) {
        if heap.len() >= tol.max_intervals {
            return Err(QuadratureError::NoConvergence {
                value: total.as_f64(),
                error: total_err.as_f64(),
                intervals: heap.len(),
            });
        }
        let worst = heap.pop().expect("non-empty partition");
        let mid = R::lit(0.5) * (worst.a + worst.b);
        if !(worst.a < mid && mid < worst.b) {
            // interval cannot be split further in this precision
            heap.push(worst);
            return Err(QuadratureError::NoConvergence {
                value: total.as_f64(),
                error: total_err.as_f64(),
                intervals: heap.len(),
            });
        }
        let (v1, e1) = gauss_kronrod_21(&f, worst.a, mid)?;
        let (v2, e2) = gauss_kronrod_21(&f, mid, worst.b)?;
        total = total - worst.value + v1 + v2;
        total_err = total_err - worst.error + e1 + e2;
        heap.push(Segment {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Segment {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
        // re-sum occasionally so the running error does not drift below zero
        if heap.len() % 64 == 0 {
            total = heap.iter().map(|s| s.value).sum();
            total_err = heap.iter().map(|s| s.error).sum();
        }
    }
    Ok(Estimate {
        value: total,
        error: total_err,
        intervals: heap.len(),
    })
}

/// `∫_0^{end} u^p g(u) du` for `p > -1`, where `points` partitions
/// `[0, end]` and starts at 0.
///
/// For `p < 0` the first panel is mapped through `v = u^{p+1}`, which
/// absorbs the endpoint singularity; the other panels are integrated
/// directly.
pub fn power_weighted<R, G>(p: R, g: G, points: &[R], tol: Tolerance) -> Result<Estimate<R>, QuadratureError>
where
    R: Real,
    G: Fn(R) -> R,
{
    if points.len() < 2 || points[0] != R::zero() || !(p > -R::one()) {
        return Err(QuadratureError::BadRange);
    }
    if p >= R::zero() {
        return integrate(
            |u: R| if u == R::zero() && p > R::zero() { R::zero() } else { u.powf(p) * g(u) },
            points,
            tol,
        );
    }
    let q = p + R::one();
    let first_end = points[1].powf(q);
    let head = integrate(|v: R| g(v.powf(q.recip())), &[R::zero(), first_end], tol)?;
    let head_value = head.value / q;
    let head_error = head.error / q;
    if points.len() == 2 {
        return Ok(Estimate {
            value: head_value,
            error: head_error,
            intervals: head.intervals,
        });
    }
    let tail = integrate(|u: R| u.powf(p) * g(u), &points[1..], tol)?;
    Ok(Estimate {
        value: head_value + tail.value,
        error: head_error + tail.error,
        intervals: head.intervals + tail.intervals,
    })
}
