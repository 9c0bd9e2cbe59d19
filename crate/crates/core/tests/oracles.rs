//! Library routines against independent naive or Monte Carlo re-computations.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sgdreg::experiments::{run_cells, DataMode, RunOptions};
use sgdreg::ode::{self, IntegratorOptions};
use sgdreg::perceptron::{self, hinge_loss, sgd_step, unfitted_fraction};
use sgdreg::rng::{self, Purpose};
use sgdreg::{theory, DataDistribution, Dataset, ModelParams, OdeParams, PerceptronState, ReducedCoords, TestOracle};

fn random_instance(p: usize, d: usize, seed: u64) -> (Dataset, PerceptronState) {
    let data = Dataset::generate(DataDistribution::new(1.0, d).unwrap(), p, seed).unwrap();
    let mut rng = rng::stream(seed, Purpose::MonteCarlo, &[]);
    let mut state = PerceptronState::zeros(d, 1.0);
    for w in state.w.iter_mut() {
        *w = rng.random_range(-2.0..2.0);
    }
    (data, state)
}

fn margin(state: &PerceptronState, data: &Dataset, mu: usize) -> f64 {
    let x = data.row(mu);
    let mut s = 0.0;
    for i in 0..x.len() {
        s += state.w[i] * x[i];
    }
    data.label(mu) * s / (x.len() as f64).sqrt()
}

#[test]
fn loss_and_unfitted_match_naive_loops() {
    for seed in 0..20 {
        let (data, state) = random_instance(5 + seed as usize % 3, 3, seed);
        let kappa = 0.3;
        let mut loss = 0.0;
        let mut unfitted = 0;
        for mu in 0..data.len() {
            let m = margin(&state, &data, mu);
            if m < kappa {
                loss += kappa - m;
                unfitted += 1;
            }
        }
        let p = data.len() as f64;
        let got = hinge_loss(&state, &data, kappa).unwrap();
        assert!((got - loss / p).abs() <= 1e-14 * (1.0 + loss), "{got} vs {}", loss / p);
        assert_eq!(unfitted_fraction(&state, &data, kappa).unwrap(), unfitted as f64 / p);
    }
}

#[test]
fn full_batch_step_is_gradient_descent() {
    let (data, state) = random_instance(7, 3, 99);
    let params = ModelParams {
        d: 3,
        p: 7,
        kappa: 0.5,
        eta: 0.7,
        batch: 7,
        ..ModelParams::default()
    };
    let mut expected = state.w.clone();
    let scale = params.eta / params.p as f64 / 3f64.sqrt();
    for mu in 0..data.len() {
        if margin(&state, &data, mu) < params.kappa {
            for i in 0..3 {
                expected[i] += scale * data.label(mu) * data.row(mu)[i];
            }
        }
    }
    let mut stepped = state.clone();
    sgd_step(&mut stepped, &data, &params, &mut rng::stream(1, Purpose::Sgd, &[])).unwrap();
    for (a, b) in stepped.w.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
}

/// Misclassification rate of `(w₁, ‖w⊥‖)` over `n` fresh samples, with its
/// standard error.
fn monte_carlo_error(chi: f64, w1: f64, wp: f64, n: usize, seed: u64) -> (f64, f64) {
    let dist = DataDistribution::new(chi, 2).unwrap();
    let mut rng = rng::stream(seed, Purpose::MonteCarlo, &[7]);
    let mut wrong = 0usize;
    for _ in 0..n {
        let x1 = dist.sample_x1(&mut rng);
        let z: f64 = StandardNormal.sample(&mut rng);
        if (w1 * x1 + wp * z) * x1.signum() <= 0.0 {
            wrong += 1;
        }
    }
    let p = wrong as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

#[test]
fn analytic_test_error_matches_fresh_samples() {
    for (chi, lambda, n) in [(0.0, 1.0, 1_000_000), (1.0, 3.0, 10_000_000)] {
        let oracle = TestOracle::new(chi, 128).unwrap();
        let analytic = oracle.test_error(lambda * 0.7, 0.7).unwrap();
        let (mc, se) = monte_carlo_error(chi, lambda * 0.7, 0.7, n, chi as u64);
        assert!((analytic - mc).abs() < 3.0 * se, "chi={chi}: {analytic} vs {mc} +- {se}");
    }
}

#[test]
fn sigma12_matches_monte_carlo() {
    // Σ̃₁₂ = Cov(θ y x₁, θ y ξ) with θ the active indicator
    let n = 4_000_000;
    for (chi, lambda, r) in [(0.0, 1.0, 0.5), (1.0, 2.0, 0.0)] {
        let dist = DataDistribution::new(chi, 2).unwrap();
        let mut rng = rng::stream(5, Purpose::MonteCarlo, &[chi as u64]);
        let (mut sa, mut sb, mut sab, mut sab2) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let a = dist.sample_x1(&mut rng).abs();
            let b: f64 = StandardNormal.sample(&mut rng);
            if lambda * a + b < r {
                sa += a;
                sb += b;
                sab += a * b;
                sab2 += (a * b).powi(2);
            }
        }
        let nf = n as f64;
        let cov = sab / nf - (sa / nf) * (sb / nf);
        // the product term dominates the error of the covariance
        let se = ((sab2 / nf - (sab / nf).powi(2)) / nf).sqrt();
        let (_, s12, _) = theory::sigma_tilde(&dist, ReducedCoords::new(lambda, r).unwrap()).unwrap();
        assert!((s12 - cov).abs() < 4.0 * se, "chi={chi}: {s12} vs {cov} +- {se}");
    }
}

#[test]
fn asymptotic_solution_matches_integration_at_late_times() {
    let (chi, t_temp, d): (f64, f64, usize) = (1.0, 2.0, 128);
    let params = OdeParams::new(chi, d, 1.0 / 128.0, t_temp, 0.0).unwrap();
    let t = 1e6;
    let end = ode::integrate(&params, params.epsilon_init(), &[t], IntegratorOptions::default()).unwrap()[0];
    let asym = ode::asymptotic_solution(chi, t_temp, d, t).unwrap();
    assert!((asym.w1 / end.w1 - 1.0).abs() < 0.05, "w1 {} vs {}", asym.w1, end.w1);
    assert!((asym.wp / end.wp - 1.0).abs() < 0.05, "wp {} vs {}", asym.wp, end.wp);
}

#[test]
fn relative_fluctuations_match_an_ensemble_within_a_factor_three() {
    let (chi, d, temperature): (f64, usize, f64) = (1.0, 128, 2.0);
    let lambda_t = 4.0;
    let k = theory::asymptotic_constants(chi).unwrap();
    // time at which the asymptotic solution reaches λ = λ_t
    let t = temperature * d as f64 * (lambda_t * k.k_perp / k.k1).powf(chi + 3.0);
    let cell = ModelParams {
        chi,
        d,
        p: 32768,
        kappa: 1.0 / 128.0,
        eta: temperature * 8.0,
        batch: 8,
        max_steps: (t / (temperature * 8.0)).ceil() as u64,
        ..ModelParams::default()
    };
    let opts = RunOptions {
        seeds_per_cell: 60,
        master_seed: 17,
        data_mode: DataMode::Reseed,
        ..RunOptions::default()
    };
    let res = run_cells(&[cell], &opts).unwrap();
    let wp: Vec<f64> = res.records.iter().map(|r| r.last.w_perp_norm).collect();
    let mean = wp.iter().sum::<f64>() / wp.len() as f64;
    let var = wp.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (wp.len() - 1) as f64;
    let empirical = var.sqrt() / mean;
    let (_, predicted) = theory::fluctuation_magnitudes(chi, temperature, d, lambda_t).unwrap();
    let ratio = predicted / empirical;
    assert!((1.0 / 3.0..=3.0).contains(&ratio), "predicted {predicted}, ensemble {empirical}");
}

#[test]
fn first_step_matches_its_expectation_on_average() {
    let params = ModelParams {
        p: 4096,
        batch: 16,
        ..ModelParams::default()
    };
    let init = ode::first_step_init::<f64>(&params).unwrap();
    let mut w1 = 0.0;
    let mut wp2 = 0.0;
    let n = 200;
    for seed in 0..n {
        let p = ModelParams { seed, ..params.clone() };
        let data = p.dataset::<f64>().unwrap();
        let mut state = PerceptronState::zeros(p.d, p.eta);
        perceptron::sgd_step(&mut state, &data, &p, &mut p.sgd_stream()).unwrap();
        w1 += state.w1();
        wp2 += state.w_perp_norm().powi(2);
    }
    let (w1, wp) = (w1 / n as f64, (wp2 / n as f64).sqrt());
    assert!((w1 / init.w1 - 1.0).abs() < 0.05, "{w1} vs {}", init.w1);
    assert!((wp / init.wp - 1.0).abs() < 0.05, "{wp} vs {}", init.wp);
}
