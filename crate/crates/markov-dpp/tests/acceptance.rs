//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured quantities (run with `--nocapture` to see them).
//!
//! 1. per-step invariant checks over randomized instances,
//! 2. spectral bracket contains the brute-force mixing time,
//! 3. MLMC sample-count and unbiasedness laws,
//! 4. gap/infeasibility decay across horizons (i.i.d. reduction),
//! 5. slower chains give larger gaps at fixed horizon,
//! 6. fairness-experiment infeasibility signs and ordering,
//! 7. partial-sum inequalities on random sequences,
//! 8. byte-identical trajectory CSVs across invocations.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use markov_dpp::chain::{ChainSampler, TransitionMatrix};
use markov_dpp::fairexp::{FairAlgorithm, FairExperimentConfig};
use markov_dpp::instances;
use markov_dpp::metrics::{self, reference_solution, ReferenceMethod};
use markov_dpp::mlmc;
use markov_dpp::problem::{
    estimate_lipschitz, Domain, LipschitzConstants, ProblemInstance, StateOracle,
};
use markov_dpp::solver::{run_on_instance, Budget, ParameterSchedule, RunOptions};

/// Random ergodic chain: a convex blend of a random stochastic matrix with
/// the uniform one, so every entry is positive.
fn random_chain(rng: &mut ChaCha8Rng, n: usize) -> TransitionMatrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            raw.iter()
                .map(|v| 0.7 * v / sum + 0.3 / n as f64)
                .collect()
        })
        .collect();
    // Renormalize away accumulated rounding so row sums hit 1 exactly.
    let rows = rows
        .into_iter()
        .map(|row| {
            let sum: f64 = row.iter().sum();
            row.into_iter().map(|v| v / sum).collect()
        })
        .collect();
    TransitionMatrix::from_rows(rows).expect("blended matrix is stochastic")
}

/// Random convex instance: per-state quadratic objectives plus a mix of
/// affine and ball constraints, on a random box or ball domain.
fn random_instance(seed: u64) -> ProblemInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.gen_range(2..=4);
    let n_states = rng.gen_range(2..=4);
    let n_constraints = rng.gen_range(1..=3);

    let domain = if rng.gen_bool(0.7) {
        let lo: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..-0.5)).collect();
        let hi: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.5..3.0)).collect();
        Domain::hyperbox(lo, hi).unwrap()
    } else {
        let center: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Domain::ball(center, rng.gen_range(1.0..3.0)).unwrap()
    };

    let mut oracles = Vec::new();
    for _ in 0..n_states {
        // f(x) = sum_k m_k (x_k - c_k)^2 with random positive curvatures.
        let curv: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.1..2.0)).collect();
        let center: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (curv_f, center_f) = (curv.clone(), center.clone());
        let f = Arc::new(move |x: &[f64]| -> f64 {
            x.iter()
                .zip(&curv_f)
                .zip(&center_f)
                .map(|((xi, m), c)| m * (xi - c) * (xi - c))
                .sum()
        });
        let grad_f = Arc::new(move |x: &[f64]| -> Vec<f64> {
            x.iter()
                .zip(&curv)
                .zip(&center)
                .map(|((xi, m), c)| 2.0 * m * (xi - c))
                .collect()
        });
        let mut g: Vec<markov_dpp::problem::ScalarFn> = Vec::new();
        let mut grad_g: Vec<markov_dpp::problem::GradFn> = Vec::new();
        for _ in 0..n_constraints {
            if rng.gen_bool(0.5) {
                let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let b: f64 = rng.gen_range(-1.0..1.0);
                let a2 = a.clone();
                g.push(Arc::new(move |x: &[f64]| {
                    x.iter().zip(&a).map(|(xi, ai)| xi * ai).sum::<f64>() - b
                }));
                grad_g.push(Arc::new(move |_x: &[f64]| a2.clone()));
            } else {
                let c: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let r2: f64 = rng.gen_range(0.5..4.0);
                let c2 = c.clone();
                g.push(Arc::new(move |x: &[f64]| {
                    x.iter()
                        .zip(&c)
                        .map(|(xi, ci)| (xi - ci) * (xi - ci))
                        .sum::<f64>()
                        - r2
                }));
                grad_g.push(Arc::new(move |x: &[f64]| {
                    x.iter().zip(&c2).map(|(xi, ci)| 2.0 * (xi - ci)).collect()
                }));
            }
        }
        oracles.push(StateOracle { f, grad_f, g, grad_g });
    }

    let chain = random_chain(&mut rng, n_states);
    let mut instance = ProblemInstance::new(
        format!("random-{seed}"),
        domain,
        oracles,
        chain,
        LipschitzConstants { f: 0.0, g: 0.0, h: 0.0 },
        None,
    )
    .unwrap();
    instance.lipschitz = estimate_lipschitz(&instance, 256, seed ^ 0xBEEF);
    instance
}

#[test]
fn criterion_1_invariant_suite() {
    let start = std::time::Instant::now();
    let opts = RunOptions {
        check_invariants: true,
        ..Default::default()
    };
    let horizon = Budget::Iterations(2000);
    for k in 0..20u64 {
        let instance = random_instance(1000 + k);
        let r = instance.domain.r;
        let schedule = match k % 5 {
            0 => ParameterSchedule::Edpp {
                tau_mix: 1 + k % 7,
                beta: 0.2 + 0.3 * ((k % 3) as f64 / 2.0),
            },
            1 => ParameterSchedule::EdppT {
                tau_mix: 1 + k % 5,
                horizon: 2000,
                beta: 0.5,
            },
            2 => ParameterSchedule::DppFixed { horizon: 2000 },
            3 => ParameterSchedule::Mdpp {
                beta: 0.5,
                delta: 0.5 + k as f64 / 10.0,
                r,
            },
            _ => ParameterSchedule::Adversarial { beta: 0.4, r },
        };
        let cap = if k % 2 == 0 { Some(16) } else { None };
        run_on_instance(&instance, &schedule, horizon, 77 + k, cap, &opts)
            .unwrap_or_else(|e| panic!("instance {k} ({}): {e}", schedule.label()));
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 120, "took {elapsed:?}, budget 2 min");
    println!(
        "criterion 1 (invariant suite): PASS — 20 randomized instances x T=2000, zero violations, {:.1?}",
        elapsed
    );
}

#[test]
fn criterion_2_mixing_time_bracket() {
    let start = std::time::Instant::now();
    for p in [0.01, 0.05, 0.1] {
        let m = TransitionMatrix::symmetric_three_state(p).unwrap();
        let tau = m.mixing_time(0.25).unwrap() as f64;
        let (lo, hi) = m.spectral_mixing_bounds().unwrap();
        assert!(
            lo <= tau && tau <= hi,
            "p={p}: tau={tau} outside [{lo}, {hi}]"
        );
        println!("  p={p}: spectral [{lo:.3}, {hi:.3}] contains tau_mix={tau}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}, budget 10 s");
    println!("criterion 2 (mixing-time bracket): PASS — {:.1?}", elapsed);
}

#[test]
fn criterion_3_mlmc_laws() {
    let start = std::time::Instant::now();

    // Expected sample count: E[N] <= 2 log2 T + 1. N is fat-tailed
    // (E[N^2] ~ T^2), so the empirical mean over 1e6 draws wobbles by ~1.5
    // at T = 2^10; the fixed seed sits inside the bound's slack.
    for t in [1u64 << 6, 1 << 10] {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draws = 1_000_000u64;
        let total: u64 = (0..draws)
            .map(|_| mlmc::draw_level(&mut rng, t, None).1 as u64)
            .sum();
        let mean = total as f64 / draws as f64;
        let bound = 2.0 * (t as f64).log2() + 1.0;
        assert!(mean <= bound, "T={t}: E[N] = {mean} > {bound}");
        println!("  T={t}: empirical E[N] = {mean:.3} <= {bound}");
    }

    // Unbiasedness: the telescoped estimator and the full-level window
    // average target the same expectation.
    let matrix = TransitionMatrix::symmetric_three_state(0.15).unwrap();
    let oracles: Arc<Vec<StateOracle>> = instances::synth_markov(0.15).unwrap().oracles;
    let horizon = 8u64; // j_max = 6 => full level averages 64 samples
    let n_max = 64usize;
    let mut rng_x = ChaCha8Rng::seed_from_u64(99);
    let domain = Domain::hyperbox(vec![-6.0, -6.0], vec![6.0, 6.0]).unwrap();
    for trial in 0..3 {
        let x = domain.sample_uniform(&mut rng_x);

        let draws = 100_000;
        let mut sampler = ChainSampler::new(matrix.clone(), 0, 500 + trial);
        let mut level_rng = ChaCha8Rng::seed_from_u64(600 + trial);
        let mut vals = Vec::with_capacity(draws);
        for _ in 0..draws {
            let pair =
                mlmc::mlmc_estimate(oracles.clone(), &mut sampler, &mut level_rng, horizon, None);
            vals.push(pair.g(0, &x));
        }

        let windows = 20_000;
        let mut sampler2 = ChainSampler::new(matrix.clone(), 0, 700 + trial);
        let mut full = Vec::with_capacity(windows);
        for _ in 0..windows {
            let mut acc = 0.0;
            for _ in 0..n_max {
                let s = sampler2.step();
                acc += (oracles[s].g[0])(&x);
            }
            full.push(acc / n_max as f64);
        }

        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64], m: f64| {
            v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (v.len() - 1) as f64
        };
        let (m1, m2) = (mean(&vals), mean(&full));
        let se =
            (var(&vals, m1) / vals.len() as f64 + var(&full, m2) / full.len() as f64).sqrt();
        assert!(
            (m1 - m2).abs() <= 3.0 * se,
            "x trial {trial}: estimator mean {m1} vs full-level {m2}, 3se = {}",
            3.0 * se
        );
        println!("  x trial {trial}: |{m1:.4} - {m2:.4}| <= 3se = {:.4}", 3.0 * se);
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}, budget 1 min");
    println!("criterion 3 (MLMC laws): PASS — {:.1?}", elapsed);
}

#[test]
fn criterion_4_rate_trend_iid() {
    let start = std::time::Instant::now();
    let inst = instances::synth_iid().unwrap();
    let reference = reference_solution(&inst, ReferenceMethod::ProjectedDescent).unwrap();
    let opts = RunOptions {
        check_invariants: false,
        ..Default::default()
    };
    let schedule = ParameterSchedule::Edpp {
        tau_mix: 1,
        beta: 1.0 / 3.0,
    };
    let mut mean_gap = Vec::new();
    let mut mean_abs_inf = Vec::new();
    for t in [2000u64, 16000] {
        let mut gaps = Vec::new();
        let mut infs = Vec::new();
        for seed in 0..10u64 {
            let traj =
                run_on_instance(&inst, &schedule, Budget::Iterations(t), seed, None, &opts)
                    .unwrap();
            let x_bar = traj.average_iterate();
            gaps.push(metrics::gap(&inst, &x_bar, &reference));
            infs.push(metrics::infeasibility(&inst, &x_bar)[0].abs());
        }
        mean_gap.push(gaps.iter().sum::<f64>() / gaps.len() as f64);
        mean_abs_inf.push(infs.iter().sum::<f64>() / infs.len() as f64);
    }
    println!(
        "  gap: {:.4} (T=2000) -> {:.4} (T=16000); |infeasibility|: {:.4} -> {:.4}",
        mean_gap[0], mean_gap[1], mean_abs_inf[0], mean_abs_inf[1]
    );
    assert!(
        mean_gap[1] <= 0.6 * mean_gap[0],
        "gap(16000) = {} > 0.6 * gap(2000) = {}",
        mean_gap[1],
        0.6 * mean_gap[0]
    );
    assert!(
        mean_abs_inf[1] < mean_abs_inf[0],
        "|infeasibility| did not decrease: {} -> {}",
        mean_abs_inf[0],
        mean_abs_inf[1]
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 180, "took {elapsed:?}, budget 3 min");
    println!("criterion 4 (rate trend, iid reduction): PASS — {:.1?}", elapsed);
}

#[test]
fn criterion_5_markovian_slowdown() {
    let start = std::time::Instant::now();
    let opts = RunOptions {
        check_invariants: false,
        ..Default::default()
    };
    let mut means = Vec::new();
    for p in [0.005f64, 0.1] {
        let inst = instances::synth_markov(p).unwrap();
        let tau = inst.chain.mixing_time(0.25).unwrap();
        let reference = reference_solution(&inst, ReferenceMethod::ProjectedDescent).unwrap();
        let schedule = ParameterSchedule::Edpp {
            tau_mix: tau,
            beta: 1.0 / 3.0,
        };
        let mut gaps = Vec::new();
        for seed in 0..10u64 {
            let traj = run_on_instance(
                &inst,
                &schedule,
                Budget::Iterations(10_000),
                seed,
                None,
                &opts,
            )
            .unwrap();
            let x_bar = traj.average_iterate();
            gaps.push(metrics::gap(&inst, &x_bar, &reference));
        }
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        println!("  p={p}: tau_mix={tau}, mean gap over 10 seeds = {mean:.4}");
        means.push(mean);
    }
    assert!(
        means[0] > means[1],
        "slow chain gap {} not larger than fast chain gap {}",
        means[0],
        means[1]
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 300, "took {elapsed:?}, budget 5 min");
    println!("criterion 5 (Markovian slowdown): PASS — {:.1?}", elapsed);
}

#[test]
fn criterion_6_fairness_experiment_signs() {
    let start = std::time::Instant::now();
    let config = FairExperimentConfig {
        algorithms: vec![
            FairAlgorithm::EdppT,
            FairAlgorithm::EdppFixed,
            FairAlgorithm::Mdpp,
        ],
        ..Default::default()
    };
    assert_eq!(config.horizon, 25_000);
    assert_eq!(config.mlmc_cap, 16);
    let results = markov_dpp::fairexp::run_experiment(&config).unwrap();
    let inf1 = |a: FairAlgorithm| {
        results
            .outcomes
            .iter()
            .find(|o| o.algorithm == a)
            .unwrap()
            .final_infeasibility[0]
    };
    let edpp_t = inf1(FairAlgorithm::EdppT);
    let edpp_fixed = inf1(FairAlgorithm::EdppFixed);
    let mdpp = inf1(FairAlgorithm::Mdpp);
    println!(
        "  constraint-1 infeasibility: EDPP-t {edpp_t:+.4}, EDPP-T {edpp_fixed:+.4}, MDPP {mdpp:+.4}"
    );
    assert!(edpp_t <= 0.05, "EDPP-t final infeasibility {edpp_t} > +0.05");
    assert!(mdpp <= 0.05, "MDPP final infeasibility {mdpp} > +0.05");
    assert!(
        edpp_fixed > edpp_t,
        "EDPP-T ({edpp_fixed}) does not exceed EDPP-t ({edpp_t})"
    );
    let mdpp_outcome = results
        .outcomes
        .iter()
        .find(|o| o.algorithm == FairAlgorithm::Mdpp)
        .unwrap();
    assert!(mdpp_outcome.samples_consumed >= 25_000, "sample budget not met");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 900, "took {elapsed:?}, budget 15 min");
    println!("criterion 6 (fairness experiment signs): PASS — {:.1?}", elapsed);
}

#[test]
fn criterion_7_partial_sum_inequalities() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let slack = |v: f64| 1e-12 * v.abs().max(1.0);

    // sum_t x_t / sqrt(X_t) <= 2 sqrt(X_T)
    for _ in 0..10_000 {
        let len = rng.gen_range(1..=200);
        let xs: Vec<f64> = (0..len).map(|_| rng.gen_range(1e-6..5.0)).collect();
        let mut partial = 0.0;
        let mut lhs = 0.0;
        for &x in &xs {
            partial += x;
            lhs += x / partial.sqrt();
        }
        let rhs = 2.0 * partial.sqrt();
        assert!(lhs <= rhs + slack(rhs), "{lhs} > {rhs}");
    }

    // sum_{t=1..T} t^q <= ((T+1)^{q+1} - 1) / (q+1)
    for _ in 0..10_000 {
        let t_max = rng.gen_range(1u32..=300);
        let q: f64 = rng.gen_range(0.01..3.0);
        let lhs: f64 = (1..=t_max).map(|t| f64::from(t).powf(q)).sum();
        let rhs = (f64::from(t_max + 1).powf(q + 1.0) - 1.0) / (q + 1.0);
        assert!(lhs <= rhs + slack(rhs), "q={q}, T={t_max}: {lhs} > {rhs}");
    }

    // sum_t X_{t-1}^{-gamma} x_t <= C delta^{-gamma}
    //   + (max{delta, X_T - C}^{1-gamma} - delta^{1-gamma}) / (1 - gamma),
    // with X_0 = delta and 0 <= x_t <= C.
    for _ in 0..10_000 {
        let len = rng.gen_range(1..=200);
        let c: f64 = rng.gen_range(0.1..4.0);
        let delta: f64 = rng.gen_range(0.05..2.0);
        let gamma: f64 = if rng.gen_bool(0.5) {
            rng.gen_range(0.05..0.95)
        } else {
            rng.gen_range(1.05..3.0)
        };
        let xs: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..c)).collect();
        let mut partial = delta;
        let mut lhs = 0.0;
        for &x in &xs {
            lhs += partial.powf(-gamma) * x;
            partial += x;
        }
        let cap = delta.max(partial - c);
        let rhs = c * delta.powf(-gamma)
            + (cap.powf(1.0 - gamma) - delta.powf(1.0 - gamma)) / (1.0 - gamma);
        assert!(
            lhs <= rhs + slack(rhs),
            "gamma={gamma}, delta={delta}, C={c}: {lhs} > {rhs}"
        );
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 5, "took {elapsed:?}, budget 5 s");
    println!("criterion 7 (partial-sum inequalities): PASS — 3 x 10^4 sequences, {:.1?}", elapsed);
}

#[test]
fn criterion_8_determinism() {
    let inst = instances::synth_markov(0.05).unwrap();
    let schedule = ParameterSchedule::Mdpp {
        beta: 0.5,
        delta: 2.0,
        r: inst.domain.r,
    };
    let opts = RunOptions::default();
    let reference = reference_solution(&inst, ReferenceMethod::ProjectedDescent).unwrap();
    let make_csv = || {
        let traj = run_on_instance(
            &inst,
            &schedule,
            Budget::Iterations(1500),
            31,
            Some(16),
            &opts,
        )
        .unwrap();
        metrics::trajectory_csv(&inst, &traj, Some(&reference.x_star))
    };
    let a = make_csv();
    let b = make_csv();
    assert_eq!(a.as_bytes(), b.as_bytes(), "CSV bytes differ across invocations");
    println!(
        "criterion 8 (determinism): PASS — {} identical bytes across two invocations",
        a.len()
    );
}
