//! Acceptance suite. Every test checks one criterion at its stated tolerance
//! and writes a single `criterion NN PASS|FAIL ...` line to stderr, outside
//! the test harness capture, so the full report shows up in a plain
//! `cargo test` log.

use std::path::Path;
use std::sync::OnceLock;

use rand_distr::{Distribution, StandardNormal};
use sgdreg::experiments::detect::{self, NoiseFilter};
use sgdreg::experiments::fit::{fit_power_law, geometric_mean};
use sgdreg::experiments::studies::{self, WeightDecayOptions};
use sgdreg::experiments::{run_cells, run_sweep, Axes, RunOptions, SweepResult, SweepSpec};
use sgdreg::ode::{self, IntegratorOptions};
use sgdreg::perceptron::{self, Stepper};
use sgdreg::rng::{self, Purpose};
use sgdreg::{theory, DataDistribution, ModelParams, OdeParams, PerceptronState, ReducedCoords, TestOracle};
use sgdreg_acceptance::{loglog_slope, report, within};

const D: usize = 128;
const KAPPA: f64 = 1.0 / 128.0;

fn base(p: usize) -> ModelParams {
    ModelParams {
        chi: 1.0,
        d: D,
        p,
        kappa: KAPPA,
        eta: 16.0,
        batch: 8,
        ..ModelParams::default()
    }
}

fn opts(seeds: usize, master: u64) -> RunOptions {
    RunOptions {
        seeds_per_cell: seeds,
        master_seed: master,
        ..RunOptions::default()
    }
}

// 1 ----------------------------------------------------------------------

/// Running sums of `Y, Y², Y³, Y⁴`.
#[derive(Default, Clone, Copy)]
struct Moments([f64; 4]);

impl Moments {
    fn push(&mut self, y: f64) {
        let y2 = y * y;
        self.0[0] += y;
        self.0[1] += y2;
        self.0[2] += y2 * y;
        self.0[3] += y2 * y2;
    }

    fn raw(&self, n: f64) -> [f64; 4] {
        self.0.map(|s| s / n)
    }

    /// Mean and its standard error.
    fn mean(&self, n: f64) -> (f64, f64) {
        let [m1, m2, ..] = self.raw(n);
        (m1, ((m2 - m1 * m1) / n).sqrt())
    }

    /// Variance and its standard error from the fourth central moment.
    fn variance(&self, n: f64) -> (f64, f64) {
        let [m1, m2, m3, m4] = self.raw(n);
        let var = m2 - m1 * m1;
        let mu4 = m4 - 4.0 * m3 * m1 + 6.0 * m2 * m1 * m1 - 3.0 * m1.powi(4);
        (var, ((mu4 - var * var) / n).sqrt())
    }
}

#[test]
fn c01_quadrature_matches_monte_carlo() {
    const N: usize = 10_000_000;
    let lambdas = [0.0, 0.5, 1.0, 2.0, 5.0, 10.0];
    let rs = [0.0, 0.5, 2.0];
    let sqrt_d = (D as f64).sqrt();
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    for (ci, chi) in [0.0, 1.0].into_iter().enumerate() {
        let dist = DataDistribution::new(chi, D).unwrap();
        let mut rng = rng::stream(2024, Purpose::MonteCarlo, &[ci as u64]);
        // a = y x₁ = |x₁|, b = y ξ with ξ the projection of x on the unit
        // vector along w⊥; y ξ is again standard normal
        let mut a = Vec::with_capacity(N);
        let mut b = Vec::with_capacity(N);
        for _ in 0..N {
            a.push(dist.sample_x1(&mut rng).abs());
            let xi: f64 = StandardNormal.sample(&mut rng);
            b.push(xi);
        }
        for &lambda in &lambdas {
            for &r in &rs {
                let (mut ma, mut mb) = (Moments::default(), Moments::default());
                let mut active = 0u64;
                for (&ai, &bi) in a.iter().zip(&b) {
                    if lambda * ai + bi < r {
                        active += 1;
                        ma.push(ai);
                        mb.push(bi);
                    } else {
                        ma.push(0.0);
                        mb.push(0.0);
                    }
                }
                let nf = N as f64;
                let pn = active as f64 / nf;
                let mc = [
                    ("g1", ma.mean(nf)),
                    ("g_perp", mb.mean(nf)),
                    ("n", (pn, (pn * (1.0 - pn) / nf).sqrt())),
                    ("sigma11", ma.variance(nf)),
                    ("sigma22", mb.variance(nf)),
                ];
                let e = theory::evaluate(&dist, ReducedCoords::new(lambda, r).unwrap()).unwrap();
                let quad = [e.g1 * sqrt_d, e.g_perp * sqrt_d, e.n, e.sigma11_tilde, e.sigma22_tilde];
                for ((name, (est, se)), q) in mc.iter().zip(quad) {
                    let z = (q - est).abs() / se;
                    if z > worst {
                        worst = z;
                        worst_at = format!("{name} at chi={chi} lambda={lambda} r={r}: quad={q:.6e} mc={est:.6e}");
                    }
                }
            }
        }
    }
    report(
        1,
        "quadrature vs 1e7-sample Monte Carlo",
        worst <= 4.0,
        &format!("36 points x 5 quantities, worst |z| = {worst:.2} ({worst_at})"),
    );
}

// 2 ----------------------------------------------------------------------

#[test]
fn c02_asymptotic_constants() {
    let lambda: f64 = 1e3;
    let sqrt_d = (D as f64).sqrt();
    let mut pass = true;
    let mut detail = Vec::new();
    for chi in [0.0, 0.5, 1.0, 2.0] {
        let dist = DataDistribution::new(chi, D).unwrap();
        let e = theory::evaluate(&dist, ReducedCoords::new(lambda, 0.0).unwrap()).unwrap();
        let k = theory::asymptotic_constants(chi).unwrap();
        let ratios = [
            ("c1", e.g1 * sqrt_d * lambda.powf(chi + 2.0) / k.c1),
            ("c2", -e.g_perp * sqrt_d * lambda.powf(chi + 1.0) / k.c2),
            ("cn", e.n * lambda.powf(chi + 1.0) / k.cn),
            ("c11", e.sigma11_tilde * lambda.powf(chi + 3.0) / k.c11),
            ("c22", e.sigma22_tilde * lambda.powf(chi + 1.0) / k.c22),
        ];
        let parts: Vec<String> = ratios
            .iter()
            .map(|(name, v)| {
                if !within(*v, 1.0, 0.02) {
                    pass = false;
                }
                format!("{name}={v:.4}")
            })
            .collect();
        detail.push(format!("chi={chi}: {}", parts.join(" ")));
    }
    report(2, "asymptotic ratios at lambda=1e3, r=0", pass, &detail.join("; "));
}

// 3 ----------------------------------------------------------------------

#[test]
fn c03_steady_state_w_perp() {
    let temps = [0.5, 1.0, 2.0, 4.0, 8.0];
    let mut spec = SweepSpec::new(base(8192));
    spec.axes = Axes {
        temperature: Some(temps.to_vec()),
        ..Axes::default()
    };
    spec.seeds_per_cell = 5;
    spec.master_seed = 3;
    let res = run_sweep(&spec, None).unwrap();
    let k_perp = theory::asymptotic_constants(1.0).unwrap().k_perp;
    let wp: Vec<f64> = res.summaries.iter().map(|s| s.w_perp_norm.unwrap()).collect();
    let fit = fit_power_law("w_perp ~ T", &temps, &wp).unwrap();
    let ratios: Vec<f64> = temps
        .iter()
        .zip(&wp)
        .map(|(t, w)| w / (k_perp * t * (D as f64).sqrt()))
        .collect();
    let pass = within(fit.exponent, 1.0, 0.1) && ratios.iter().all(|r| within(*r, 1.0, 0.25));
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.3}")).collect();
    report(
        3,
        "steady-state |w_perp| linear in T",
        pass,
        &format!(
            "slope {:.3} +- {:.3}; |w_perp|/(k_perp T sqrt d) = [{}]",
            fit.exponent,
            fit.stderr,
            shown.join(", ")
        ),
    );
}

// 4 ----------------------------------------------------------------------

#[test]
fn c04_critical_temperature_tracks_kappa() {
    let kappas = [2f64.powi(-9), 2f64.powi(-7), 2f64.powi(-5)];
    let mut tcs = Vec::new();
    let mut plateaus = Vec::new();
    for (i, &kappa) in kappas.iter().enumerate() {
        let mut spec = SweepSpec::new(ModelParams { kappa, ..base(8192) });
        spec.axes = Axes {
            temperature: Some((-3..=4).map(|k| kappa * 2f64.powi(k)).collect()),
            ..Axes::default()
        };
        spec.seeds_per_cell = 3;
        spec.master_seed = 40 + i as u64;
        let res = run_sweep(&spec, None).unwrap();
        let tc = detect::detect_tc(&res.summaries, 2.0).unwrap();
        tcs.push(tc.t_c);
        plateaus.push(tc.plateau);
    }
    let tc_slope = loglog_slope(&kappas, &tcs);
    let plateau_slope = loglog_slope(&kappas, &plateaus);
    let pass = within(tc_slope, 1.0, 0.2) && within(plateau_slope, 1.0, 0.2);
    report(
        4,
        "T_c and low-T |w_perp| proportional to kappa",
        pass,
        &format!(
            "T_c/kappa = [{}], slope {tc_slope:.3}; plateau/kappa = [{}], slope {plateau_slope:.3}",
            tcs.iter().zip(&kappas).map(|(t, k)| format!("{:.2}", t / k)).collect::<Vec<_>>().join(", "),
            plateaus.iter().zip(&kappas).map(|(w, k)| format!("{:.2}", w / k)).collect::<Vec<_>>().join(", "),
        ),
    );
}

// 5, 6 -------------------------------------------------------------------

const SEPARATION: f64 = 0.5;
const PS: [usize; 4] = [4096, 8192, 16384, 32768];

/// `(T, P)` sweeps shared by the weight and breakdown-time criteria.
fn scaling_sweeps() -> &'static [(f64, SweepResult)] {
    static SWEEPS: OnceLock<Vec<(f64, SweepResult)>> = OnceLock::new();
    SWEEPS.get_or_init(|| {
        // χ = 1 runs to zero loss. χ = 0 is far more expensive, so its runs
        // stop once train and test errors separate and the fit uses the
        // weights there.
        let plans: [(f64, &[f64], usize, Option<f64>); 2] = [
            (1.0, &[0.5, 1.0, 2.0, 4.0], 3, None),
            (0.0, &[0.5, 2.0], 2, Some(SEPARATION)),
        ];
        plans
            .iter()
            .map(|&(chi, temps, seeds, stop)| {
                let mut spec = SweepSpec::new(ModelParams {
                    chi,
                    max_steps: 1_000_000_000,
                    ..base(4096)
                });
                spec.axes = Axes {
                    p: Some(PS.to_vec()),
                    temperature: Some(temps.to_vec()),
                    ..Axes::default()
                };
                spec.seeds_per_cell = seeds;
                spec.master_seed = 50 + chi as u64;
                spec.keep_records = true;
                spec.stop_at_separation = stop;
                (chi, run_sweep(&spec, None).unwrap())
            })
            .collect()
    })
}

#[test]
fn c05_weight_scaling() {
    let mut pass = true;
    let mut detail = Vec::new();
    for (chi, res) in scaling_sweeps() {
        let gamma = 1.0 / (1.0 + chi);
        let (a_t, a_p) = detect::fit_weight_scaling(&res.summaries, &NoiseFilter::default()).unwrap();
        pass &= within(a_t.exponent, 1.0, 0.1) && within(a_p.exponent, gamma, 0.1);
        detail.push(format!(
            "chi={chi}: a_T={:.3}+-{:.3} a_P={:.3}+-{:.3} (target {gamma}) r2={:.4}",
            a_t.exponent, a_t.stderr, a_p.exponent, a_p.stderr, a_t.r_squared
        ));
    }
    report(5, "|w| ~ T^a_T P^a_P", pass, &detail.join("; "));
}

#[test]
fn c06_breakdown_time() {
    let mut pass = true;
    let mut detail = Vec::new();
    for (chi, res) in scaling_sweeps() {
        let b_target = 1.0 + 2.0 / (1.0 + chi);
        let (a_t, b) = detect::fit_that_scaling(&res.summaries, &NoiseFilter::default()).unwrap();
        // n at the separation point, from the population integral at the
        // recorded reduced coordinates
        let mut scaled = Vec::new();
        for run in &res.runs {
            let sep = detect::detect_empirical_that(run, SEPARATION).expect("run separates");
            let dist = DataDistribution::new(*chi, D).unwrap();
            let n = theory::n_frac(&dist, ReducedCoords::new(sep.lambda, sep.r).unwrap()).unwrap();
            scaled.push(n * run.params.p as f64 / D as f64);
        }
        let lo = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = scaled.iter().cloned().fold(0.0, f64::max);
        pass &= within(b.exponent, b_target, 0.2) && within(a_t.exponent, 1.0, 0.2) && lo >= 0.1 && hi <= 10.0;
        detail.push(format!(
            "chi={chi}: b={:.3}+-{:.3} (target {b_target}) a_T={:.3} n P/d in [{lo:.3}, {hi:.3}]",
            b.exponent, b.stderr, a_t.exponent
        ));
    }
    report(6, "t_hat ~ T P^b and n(t_hat) P/d = O(1)", pass, &detail.join("; "));
}

// 7 ----------------------------------------------------------------------

#[test]
fn c07_online_decay_of_n() {
    let cell = ModelParams {
        eta: 16.0,
        batch: 8,
        ..base(32768)
    };
    let o = RunOptions {
        keep_records: true,
        stop_at_separation: Some(SEPARATION),
        ..opts(5, 70)
    };
    let res = run_cells(&[cell.clone()], &o).unwrap();
    let dist = DataDistribution::new(1.0, D).unwrap();
    let td = cell.temperature() * D as f64;
    let t_hat = res
        .runs
        .iter()
        .map(|r| detect::detect_empirical_that(r, SEPARATION).unwrap().t)
        .fold(f64::INFINITY, f64::min);
    let (lo, hi) = (100.0 * td, t_hat / 3.0);
    // all seeds share η and the record schedule, hence the record times
    let mut ts = Vec::new();
    let mut ns = Vec::new();
    for (i, pt) in res.runs[0].points.iter().enumerate() {
        if pt.t < lo || pt.t > hi {
            continue;
        }
        let per_seed: Vec<f64> = res
            .runs
            .iter()
            .map(|r| {
                let q = &r.points[i];
                theory::n_frac(&dist, ReducedCoords::new(q.obs.lambda, q.obs.r).unwrap()).unwrap()
            })
            .collect();
        ts.push(pt.t);
        ns.push(geometric_mean(&per_seed).unwrap());
    }
    let fit = fit_power_law("n ~ t", &ts, &ns).unwrap();
    let target = -2.0 / 4.0;
    report(
        7,
        "n(t) ~ t^-(chi+1)/(chi+3) for chi=1",
        within(fit.exponent, target, 0.05),
        &format!(
            "slope {:.4} +- {:.4} (target {target}) over t in [{lo:.3e}, {hi:.3e}], {} points",
            fit.exponent, fit.stderr, fit.n_points
        ),
    );
}

// 8 ----------------------------------------------------------------------

#[test]
fn c08_ode_tracks_sgd() {
    let p = 16384;
    let temperature = 2.0;
    let kappa = 0.01;
    let td = temperature * D as f64;
    let ode_params = OdeParams::new(1.0, D, kappa, temperature, 0.0).unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for (i, batch) in [2usize, 8, 32].into_iter().enumerate() {
        let cell = ModelParams {
            kappa,
            batch,
            eta: temperature * batch as f64,
            ..base(p)
        };
        let o = RunOptions {
            keep_records: true,
            stop_at_separation: Some(SEPARATION),
            ..opts(5, 80 + i as u64)
        };
        let res = run_cells(&[cell], &o).unwrap();
        let t_hat = res
            .runs
            .iter()
            .map(|r| detect::detect_empirical_that(r, SEPARATION).unwrap().t)
            .fold(f64::INFINITY, f64::min);
        let (lo, hi) = (10.0 * td, t_hat / 3.0);
        let idx: Vec<usize> = (0..res.runs[0].points.len())
            .filter(|&k| {
                let t = res.runs[0].points[k].t;
                t >= lo && t <= hi
            })
            .collect();
        let grid: Vec<f64> = idx.iter().map(|&k| res.runs[0].points[k].t).collect();
        let curve = ode::integrate(&ode_params, ode_params.epsilon_init(), &grid, IntegratorOptions::default()).unwrap();
        let mut dev: f64 = 0.0;
        for (&k, s) in idx.iter().zip(&curve) {
            let w1 = geometric_mean(&res.runs.iter().map(|r| r.points[k].obs.w1).collect::<Vec<_>>()).unwrap();
            let wp = geometric_mean(&res.runs.iter().map(|r| r.points[k].obs.w_perp_norm).collect::<Vec<_>>()).unwrap();
            dev = dev.max((w1 / s.w1 - 1.0).abs()).max((wp / s.wp - 1.0).abs());
        }
        pass &= dev <= 0.15 && idx.len() >= 5;
        detail.push(format!("B={batch}: max deviation {dev:.3} over {} times", idx.len()));
    }

    // full batch: gradient descent at η = T P
    let gd = ModelParams {
        kappa,
        batch: p,
        eta: temperature * p as f64,
        ..base(p)
    };
    let data = gd.dataset::<f64>().unwrap();
    let run = perceptron::train(&gd, &data, &TestOracle::new(1.0, D).unwrap()).unwrap();
    let end = run.last();
    let s = ode::integrate(&ode_params, ode_params.epsilon_init(), &[end.t], IntegratorOptions::default()).unwrap()[0];
    let gd_dev = (end.obs.w1 / s.w1 - 1.0).abs().max((end.obs.w_perp_norm / s.wp - 1.0).abs());
    // the first step fits nearly all points; the stragglers take a handful
    // of small corrective steps
    let after_first = run.points[1].obs.n_train;
    let fast = run.stop_reason == sgdreg::StopReason::Converged && after_first <= 0.01 && run.steps <= 100;
    pass &= fast && gd_dev > 0.15;
    detail.push(format!(
        "B=P: n_train {after_first:.2e} after one step, {:?} after {} steps, deviation from ODE {gd_dev:.2e}",
        run.stop_reason, run.steps
    ));
    report(8, "seed-averaged SGD vs ODE over the online window", pass, &detail.join("; "));
}

// 9 ----------------------------------------------------------------------

#[test]
fn c09_critical_batch_size() {
    let eta = 512.0;
    let mut cells = Vec::new();
    for p in PS {
        for k in 2..=13 {
            let batch = 1usize << k;
            if batch <= p {
                cells.push(ModelParams { eta, batch, ..base(p) });
            }
        }
    }
    let res = run_cells(&cells, &opts(3, 90)).unwrap();
    let b = detect::detect_bstar(&res.summaries).unwrap();
    let target = 0.5;
    let pass = within(b.fit.exponent, target, 0.15) && b.collapse_scatter < 0.25;
    let shown: Vec<String> = b.points.iter().map(|x| format!("P={}:{:.0}", x.p, x.bstar)).collect();
    report(
        9,
        "B* ~ P^(1/(1+chi)) and collapse",
        pass,
        &format!(
            "exponent {:.3} +- {:.3} (target {target}); B* [{}]; collapse scatter {:.3}",
            b.fit.exponent,
            b.fit.stderr,
            shown.join(", "),
            b.collapse_scatter
        ),
    );
}

// 10 ---------------------------------------------------------------------

#[test]
fn c10_first_step() {
    let mut worst_rel: f64 = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for seed in 0..100u64 {
        let params = ModelParams {
            seed,
            max_steps: 1,
            ..base(8192)
        };
        let data = params.dataset::<f64>().unwrap();
        let mut state = PerceptronState::zeros(D, params.eta);
        let mut stepper = Stepper::new(&params).unwrap();
        stepper.step(&mut state, &data, &mut params.sgd_stream());

        let mut batch = Vec::new();
        perceptron::draw_batch(&mut params.sgd_stream(), params.p, params.batch, &mut batch);
        let mut sum = 0.0;
        for &mu in &batch {
            sum += data.row(mu)[0].abs();
        }
        let expected = params.eta / params.batch as f64 * sum / (D as f64).sqrt();
        worst_rel = worst_rel.max((state.w1() - expected).abs() / expected);
        let ratio = state.w_perp_norm() / (params.eta / (params.batch as f64).sqrt());
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    let pass = worst_rel <= 4.0 * f64::EPSILON && lo >= 0.5 && hi <= 2.0;
    report(
        10,
        "first step from w=0",
        pass,
        &format!("max relative w1 error {worst_rel:.2e}; |w_perp|/(eta/sqrt B) in [{lo:.3}, {hi:.3}] over 100 seeds"),
    );
}

// 11 ---------------------------------------------------------------------

#[test]
fn c11_momentum_rescales_temperature() {
    let cell = ModelParams {
        eta: 4.0,
        batch: 8,
        ..base(8192)
    };
    let study = studies::momentum_equivalence_study(&cell, &[0.9], &opts(5, 110)).unwrap();
    let row = study.rows[0];
    report(
        11,
        "momentum 0.9 equals 10x temperature",
        within(row.ratio, 1.0, 0.2),
        &format!(
            "|w_perp| m=0.9: {:.4}, m=0 at 10x eta: {:.4}, ratio {:.3}",
            row.w_perp_momentum, row.w_perp_reference, row.ratio
        ),
    );
}

// 12 ---------------------------------------------------------------------

#[test]
fn c12_weight_decay() {
    let temperature = 2.0;
    let small = ModelParams {
        eta: temperature * 8.0,
        batch: 8,
        ..base(32768)
    };
    let decays = [1e-5, 2e-5, 5e-5, 1e-4, 2e-4];
    let wd = WeightDecayOptions::default();
    let study = studies::weight_decay_study(&small, &decays, &wd, &opts(3, 120)).unwrap();
    let w1_fit = study.w1_fit.clone().expect("w1 fit");
    let err_fit = study.error_fit.clone().expect("error fit");
    let mut pass = within(w1_fit.exponent, -0.25, 0.1) && within(err_fit.exponent, 0.5, 0.1);
    let mut detail = vec![format!(
        "w1 slope {:.3} (target -0.25), error slope {:.3} (target 0.5), Lambda* theory {:.2e}",
        w1_fit.exponent, err_fit.exponent, study.lambda_star_theory
    )];

    // large against small batch at the same temperature
    let (p_large, batch) = (16384, 1024);
    let mut cells = Vec::new();
    for l in [2.5e-6, 5e-6] {
        for b in [8, batch] {
            let eta = temperature * b as f64;
            cells.push(ModelParams {
                batch: b,
                eta,
                weight_decay: l,
                max_steps: (wd.horizon / (l * eta)).ceil() as u64,
                ..base(p_large)
            });
        }
    }
    let res = run_cells(&cells, &RunOptions { keep_records: true, ..opts(3, 121) }).unwrap();
    for pair in res.summaries.chunks(2) {
        let (reference, s) = (&pair[0], &pair[1]);
        let (w1_ref, wp_ref) = (reference.w1.unwrap(), reference.w_perp_norm.unwrap());
        let d1 = s.w1.unwrap() / w1_ref - 1.0;
        let dp = s.w_perp_norm.unwrap() / wp_ref - 1.0;
        // from when on every large-batch seed keeps w1 within 20% of the
        // small-batch value, in units of 1/Λ
        let runs: Vec<_> = res.runs.iter().zip(&res.records).filter(|(_, rec)| rec.cell == s.cell).map(|x| x.0).collect();
        let settle = (0..runs[0].points.len())
            .find(|&k| runs.iter().all(|r| r.points[k..].iter().all(|q| (q.obs.w1 / w1_ref - 1.0).abs() <= 0.2)))
            .map(|k| runs[0].points[k].t * s.params.weight_decay);
        let first = runs[0].points[1].obs.w1 / w1_ref;
        pass &= d1.abs() <= 0.2 && dp.abs() <= 0.2;
        detail.push(format!(
            "P={p_large} B={batch} Lambda={:.1e}: w1 after one step {first:.1}x, final w1 {d1:+.3}, |w_perp| {dp:+.3} vs B=8; within 20% from t*Lambda = {}",
            s.params.weight_decay,
            settle.map_or("never".to_string(), |v| format!("{v:.2}"))
        ));
    }
    report(12, "weight-decay stationary state", pass, &detail.join("; "));
}

// 13 ---------------------------------------------------------------------

/// Runs the command-line entry point in process and asserts success.
fn cli(args: &[&str]) {
    let code = sgdreg::cli::run(std::iter::once("sgdreg").chain(args.iter().copied()));
    assert_eq!(code, 0, "sgdreg {}", args.join(" "));
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    std::fs::read(a).unwrap() == std::fs::read(b).unwrap()
}

#[test]
fn c13_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut checks = Vec::new();

    let train_args = [
        "train", "--chi", "1", "--d", "32", "--p", "512", "--kappa", "0.05", "--temperature", "1", "--batch", "4",
        "--seed", "5", "--max-steps", "20000",
    ];
    let first = root.join("train1");
    cli(&[&train_args[..], &["--out", first.to_str().unwrap()]].concat());
    let second = root.join("train2");
    let manifest = first.join("manifest.json");
    cli(&["train", "--config", manifest.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    checks.push(("train rerun from manifest", same_bytes(&first.join("record.csv"), &second.join("record.csv"))));

    let spec = serde_json::json!({
        "base": {"chi": 1.0, "d": 32, "p": 512, "kappa": 0.05, "eta": 1.0, "batch": 4, "max_steps": 20000},
        "axes": {"temperature": [0.25, 1.0], "batch": [2, 8]},
        "seeds_per_cell": 3,
        "master_seed": 13
    });
    let spec_path = root.join("spec.json");
    std::fs::write(&spec_path, serde_json::to_string_pretty(&spec).unwrap()).unwrap();
    let mut sweep_dirs = Vec::new();
    for workers in ["1", "3"] {
        let out_dir = root.join(format!("sweep_w{workers}"));
        cli(&[
            "sweep",
            "--spec",
            spec_path.to_str().unwrap(),
            "--workers",
            workers,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        sweep_dirs.push(out_dir);
    }
    for name in ["cells.csv", "phase.csv"] {
        checks.push((name, same_bytes(&sweep_dirs[0].join(name), &sweep_dirs[1].join(name))));
    }

    // rerun of the sweep from its own manifest
    let rerun = root.join("sweep_rerun");
    cli(&[
        "sweep",
        "--spec",
        sweep_dirs[0].join("manifest.json").to_str().unwrap(),
        "--out",
        rerun.to_str().unwrap(),
    ]);
    checks.push(("sweep rerun from manifest", same_bytes(&sweep_dirs[0].join("cells.csv"), &rerun.join("cells.csv"))));

    let ode_args = ["ode", "--chi", "1", "--d", "128", "--p", "8192", "--temperature", "2", "--batch", "8"];
    let mut ode_dirs = Vec::new();
    for k in 0..2 {
        let out_dir = root.join(format!("ode{k}"));
        cli(&[&ode_args[..], &["--out", out_dir.to_str().unwrap()]].concat());
        ode_dirs.push(out_dir);
    }
    checks.push(("ode rerun", same_bytes(&ode_dirs[0].join("ode.csv"), &ode_dirs[1].join("ode.csv"))));

    let pass = checks.iter().all(|c| c.1);
    let shown: Vec<String> = checks
        .iter()
        .map(|(name, ok)| format!("{name}={}", if *ok { "identical" } else { "differs" }))
        .collect();
    report(13, "byte-identical reruns", pass, &shown.join(", "));
}

// module example ------------------------------------------------------------

/// Kept here rather than with the core tests: with the prefactor fixed at
/// `n(t̂) = d/P` the prediction lands well below the measured separation,
/// and a red test in the core package would stop cargo before this suite.
#[test]
fn predicted_t_hat_within_factor_two_at_low_temperature() {
    let temperature = 0.125;
    let cell = ModelParams {
        eta: temperature * 8.0,
        max_steps: 1_000_000_000,
        ..base(8192)
    };
    let run_opts = RunOptions {
        stop_at_separation: Some(0.5),
        ..opts(2, 31)
    };
    let res = run_cells(&[cell], &run_opts).unwrap();
    let ts: Vec<f64> = res.records.iter().filter_map(|r| r.t_hat).collect();
    assert_eq!(ts.len(), 2, "separation not reached");
    let measured = geometric_mean(&ts).unwrap();
    let predicted = ode::predict_crossover(1.0, temperature, D, 8192).unwrap().t_hat;
    let ratio = measured / predicted;
    assert!(
        (0.5..=2.0).contains(&ratio),
        "measured t_hat {measured:.4e}, predicted {predicted:.4e}, ratio {ratio:.2}"
    );
}
