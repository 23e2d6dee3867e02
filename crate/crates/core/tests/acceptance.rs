//! Acceptance suite. Runs as a plain binary so every criterion prints its
//! verdict line whether it passes or not; exits non-zero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use metastorm::diagnostics::{momentum_identity_from_trace, verify_ema_closed_form, verify_momentum_identity, verify_recursion};
use metastorm::harness::{adagrad_equivalence, sweep_convergence, trace_csv, verify_hyper, RunConfig};
use metastorm::numeric::{ParamVector, SampleKey};
use metastorm::optimizers::{run_with, Fault, HeuristicVariant, RunOptions, RunResult};
use metastorm::problems::{estimate_constants, gradient_check, Problem, ProblemSpec};
use metastorm::schedules::{meta_storm_p_min, na_a0_min, oracle_tuned_constants, Algorithm, HyperParams};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::Rng;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

const STORM_FOUR: [Algorithm; 4] = [
    Algorithm::MetaStormSg,
    Algorithm::MetaStorm,
    Algorithm::MetaStormNa,
    Algorithm::StormPlus,
];

fn quadratic(dim: usize, noise: f64) -> Problem {
    ProblemSpec::NoisyQuadratic {
        dim,
        noise,
        spectrum: None,
        min_eig: 1.0,
        max_eig: 1.0,
    }
    .build()
    .unwrap()
}

fn spread_quadratic(dim: usize, noise: f64) -> Problem {
    ProblemSpec::NoisyQuadratic {
        dim,
        noise,
        spectrum: None,
        min_eig: 0.5,
        max_eig: 4.0,
    }
    .build()
    .unwrap()
}

fn least_squares() -> Problem {
    Problem::least_squares_synthetic(6, 80, 0.1, 3).unwrap()
}

fn logistic() -> Problem {
    Problem::logistic_synthetic(5, 100, 0.1, 0.1, 4).unwrap()
}

fn ones(dim: usize) -> ParamVector {
    ParamVector::filled(dim, 1.0)
}

fn logged_run(problem: &Problem, alg: Algorithm, hp: HyperParams, seed: u64, big_t: u64, fault: Fault) -> RunResult {
    let opts = RunOptions::new(big_t).trace_every(1).log_states(true).fault(fault);
    let r = run_with(problem, alg, hp, ones(problem.dim()), seed, opts).unwrap();
    assert!(!r.diverged(), "{alg} diverged on {}", problem.family_name());
    r
}

fn noise_free_degeneracy() -> Verdict {
    let p = quadratic(10, 0.0);
    let hp = HyperParams::preset(Algorithm::MetaStorm, 10);
    let r = run_with(&p, Algorithm::MetaStorm, hp, ones(10), 7, RunOptions::new(1000).trace_every(1)).unwrap();
    let a_ones = r.trace.iter().filter_map(|row| row.a).all(|a| a.to_bits() == 1.0f64.to_bits());
    let eps_zero = r.trace.iter().all(|row| row.eps_norm.map(f64::to_bits) == Some(0.0f64.to_bits()));
    verdict(
        a_ones && eps_zero && r.trace.len() == 1000 && !r.diverged(),
        format!("a_t == 1: {a_ones}, eps_norm == 0: {eps_zero}, rows {}", r.trace.len()),
    )
}

fn adagrad_equivalence_check() -> Verdict {
    let p = spread_quadratic(10, 0.0);
    let x1: ParamVector = (0..10).map(|i| 1.0 - 0.15 * i as f64).collect();
    let mut worst_ulps = 0;
    let mut worst_rel: f64 = 0.0;
    for (eta, b0) in [(1.0, 1e-8), (0.3, 0.5), (2.0, 1.0)] {
        let eq = adagrad_equivalence(&p, &x1, eta, b0, 1000).unwrap();
        worst_ulps = worst_ulps.max(eq.max_ulps);
        worst_rel = worst_rel.max(eq.max_rel);
    }
    verdict(
        worst_ulps <= 1 && worst_rel < 1e-12,
        format!("max ulps per coordinate {worst_ulps}, max relative deviation {worst_rel:.2e}"),
    )
}

fn momentum_identity_suite() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut weakest_control = f64::INFINITY;
    for p in [spread_quadratic(5, 1.0), least_squares()] {
        for alg in STORM_FOUR {
            let hp = verify_hyper(alg, p.dim());
            let r = logged_run(&p, alg, hp, 11, 500, Fault::None);
            worst = worst.max(momentum_identity_from_trace(&r.trace, hp.a0).unwrap());
            let a: Vec<f64> = r.trace.iter().filter_map(|row| row.a).collect();
            let s: Vec<f64> = r.trace.iter().filter_map(|row| row.momentum_term).collect();
            let mut shifted = vec![1.0];
            shifted.extend_from_slice(&a[..a.len() - 1]);
            weakest_control = weakest_control.min(verify_momentum_identity(&shifted, &s, hp.a0));
        }
    }
    verdict(
        worst < 1e-10 && weakest_control > 1e-3,
        format!("max residual {worst:.2e}, weakest shifted control {weakest_control:.2e}"),
    )
}

fn recursion_reexecution() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut weakest_control = f64::INFINITY;
    for p in [spread_quadratic(5, 1.0), logistic()] {
        for alg in STORM_FOUR {
            let hp = verify_hyper(alg, p.dim());
            for seed in [1, 2, 3] {
                let r = logged_run(&p, alg, hp, seed, 200, Fault::None);
                worst = worst.max(verify_recursion(&r.states, &p).unwrap());
            }
            let faulty = logged_run(&p, alg, hp, 1, 200, Fault::MisindexedMomentum);
            weakest_control = weakest_control.min(verify_recursion(&faulty.states, &p).unwrap());
        }
    }
    verdict(
        worst < 1e-14 && weakest_control > 1e-6,
        format!("max residual {worst:.2e}, weakest misindexed control {weakest_control:.2e}"),
    )
}

fn scalar_monotonicity() -> Verdict {
    let mut runner = TestRunner::new(PropConfig {
        cases: 100,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let algs = prop::sample::select(vec![
        Algorithm::MetaStorm,
        Algorithm::MetaStormSg,
        Algorithm::MetaStormNa,
        Algorithm::StormPlus,
        Algorithm::AdaGradNorm,
    ]);
    let families = [spread_quadratic(4, 1.0), least_squares(), logistic()];
    let strategy = (algs, 0.0f64..1.0, -1.0f64..2.0, -3.0f64..1.0, -3.0f64..0.0, 0usize..3, any::<u64>());
    let outcome = runner.run(&strategy, |(alg, p_unit, log_a0, log_b0, log_eta, family, seed)| {
        let (lo, hi) = alg.p_range().map(|(lo, hi, _)| (lo, hi)).unwrap_or((0.25, 0.5));
        let p = hi - p_unit * (hi - lo);
        let a0 = if alg == Algorithm::MetaStormNa {
            na_a0_min() + 10f64.powf(log_a0)
        } else {
            10f64.powf(log_a0)
        };
        let hp = HyperParams::new(alg, a0, 10f64.powf(log_b0), 10f64.powf(log_eta), p, 0.0).unwrap();
        prop_assert_eq!(hp.p + 2.0 * hp.q(), 1.0);
        let problem = &families[family];
        let r = run_with(problem, alg, hp, ones(problem.dim()), seed, RunOptions::new(100).trace_every(1)).unwrap();
        let a: Vec<f64> = r.trace.iter().filter_map(|row| row.a).collect();
        let b: Vec<f64> = r.trace.iter().filter_map(|row| row.b).collect();
        prop_assert!(a.iter().all(|&v| v > 0.0 && v <= 1.0));
        prop_assert!(a.windows(2).all(|w| w[1] <= w[0]), "a increased for {}", alg);
        prop_assert!(b.iter().all(|&v| v > 0.0 && v.is_finite()));
        prop_assert!(b.windows(2).all(|w| w[1] >= w[0]), "b decreased for {}", alg);
        Ok(())
    });
    let accepted = outcome.is_ok();

    let mut rejected = 0;
    let mut invalid = 0;
    let mut rng = SampleKey::auxiliary(5, 5);
    for _ in 0..100 {
        invalid += 1;
        let case = rng.random_range(0..4);
        let err = match case {
            0 => HyperParams::new(Algorithm::MetaStormSg, 1.0, 1.0, 1.0, rng.random_range(0.0..0.2499), 0.0),
            1 => HyperParams::new(Algorithm::MetaStorm, 1.0, 1.0, 1.0, rng.random_range(0.50001..1.0), 0.0),
            2 => HyperParams::new(Algorithm::MetaStorm, 1.0, 1.0, 1.0, meta_storm_p_min() * rng.random_range(0.0..0.999), 0.0),
            _ => HyperParams::new(Algorithm::MetaStormNa, rng.random_range(0.0..=na_a0_min()), 1.0, 1.0, 0.25, 0.0),
        };
        if err.is_err() {
            rejected += 1;
        }
    }
    verdict(
        accepted && rejected == invalid,
        format!(
            "100 random configs: {}; invalid configs rejected {rejected}/{invalid}",
            match &outcome {
                Ok(()) => "all sequences monotone".to_string(),
                Err(e) => format!("violated: {e}"),
            }
        ),
    )
}

fn brute_ema(terms: &[ParamVector], alpha: f64, j: usize) -> f64 {
    let t = terms.len();
    terms
        .iter()
        .enumerate()
        .map(|(i, v)| (1.0 - alpha) * alpha.powi((t - 1 - i) as i32) * v[j])
        .sum()
}

fn ema_closed_form() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut verifier_worst: f64 = 0.0;
    for p in [spread_quadratic(4, 1.0), logistic()] {
        for (alg, variant) in [
            (Algorithm::MetaStormH, HeuristicVariant::MetaStorm),
            (Algorithm::MetaStormSgH, HeuristicVariant::MetaStormSg),
        ] {
            for alpha in [0.0, 0.5, 0.99] {
                let preset = HyperParams::preset(alg, p.dim());
                let hp = HyperParams::new(alg, preset.a0, preset.b0, 0.1, preset.p, alpha).unwrap();
                let r = logged_run(&p, alg, hp, 21, 301, Fault::None);
                assert_eq!(r.states.len(), 300);
                let mut d_terms = Vec::new();
                let mut g_terms = Vec::new();
                for log in &r.states {
                    d_terms.push(log.d.iter().map(|v| v * v).collect::<ParamVector>());
                    let g = p.grad_stochastic(&log.x, log.key_current).unwrap();
                    let term: ParamVector = match variant {
                        HeuristicVariant::MetaStormSg => g.iter().map(|v| v * v).collect(),
                        HeuristicVariant::MetaStorm => {
                            let other = p.grad_stochastic(&log.x, log.key_next).unwrap();
                            g.iter().zip(other.iter()).map(|(u, v)| (u - v) * (u - v)).collect()
                        }
                    };
                    g_terms.push(term);
                    let ema_d = log.ema_d.as_ref().unwrap();
                    let ema_g = log.ema_g.as_ref().unwrap();
                    for j in 0..p.dim() {
                        for (got, want) in [(ema_d[j], brute_ema(&d_terms, alpha, j)), (ema_g[j], brute_ema(&g_terms, alpha, j))] {
                            if got != want {
                                worst = worst.max((got - want).abs() / want.abs());
                            }
                        }
                    }
                }
                verifier_worst = verifier_worst.max(verify_ema_closed_form(&r.states, &p, variant, alpha).unwrap());
            }
        }
    }
    verdict(
        worst < 1e-12 && verifier_worst < 1e-12,
        format!("max relative error {worst:.2e} (verifier {verifier_worst:.2e})"),
    )
}

fn gradient_oracles() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;
    let families = [spread_quadratic(5, 1.0), least_squares(), logistic()];
    for p in &families {
        let fd = gradient_check(p, 20, 99).unwrap();
        ok &= fd < 1e-5;

        let n = 100_000u64;
        let mut rng = SampleKey::auxiliary(8, 8);
        let x: ParamVector = (0..p.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut mean = ParamVector::zeros(p.dim());
        for k in 0..n {
            mean = mean.add(&p.grad_stochastic(&x, SampleKey::new(4242, k)).unwrap());
        }
        let bias = mean.scale(1.0 / n as f64).sub(&p.grad_true(&x).unwrap()).norm();
        let band = 5.0 * p.sigma / (n as f64).sqrt();
        ok &= bias < band;

        let (beta_hat, sigma_hat) = estimate_constants(p, 2000, 31).unwrap();
        ok &= beta_hat <= 1.05 * p.beta && sigma_hat <= 1.05 * p.sigma;

        if p.per_sample_smooth() {
            let mut rng = SampleKey::auxiliary(9, 9);
            for _ in 0..1000 {
                let x: ParamVector = (0..p.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
                let y: ParamVector = (0..p.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
                let key = SampleKey::new(rng.random(), rng.random());
                let lhs = p.grad_stochastic(&x, key).unwrap().sub(&p.grad_stochastic(&y, key).unwrap()).norm();
                ok &= lhs <= p.beta * x.sub(&y).norm() * (1.0 + 1e-9);
            }
        }
        notes.push(format!(
            "{}: fd {fd:.1e}, bias {bias:.1e}/{band:.1e}, beta_hat/beta {:.3}, sigma_hat/sigma {:.3}",
            p.family_name(),
            beta_hat / p.beta,
            sigma_hat / p.sigma
        ));
    }

    let dim = 4;
    let unit = quadratic(dim, 1.0);
    let (_, sigma_hat) = estimate_constants(&unit, 10_000, 1).unwrap();
    let normalized = sigma_hat / (dim as f64).sqrt();
    ok &= (0.95..=1.05).contains(&normalized);
    let mut spectrum = vec![1.0; dim - 1];
    spectrum.push(10.0);
    let stiff = Problem::noisy_quadratic(spectrum, 1.0).unwrap();
    let (beta_hat, _) = estimate_constants(&stiff, 10_000, 2).unwrap();
    ok &= (9.5..=10.0).contains(&beta_hat);
    let (_, quiet) = estimate_constants(&quadratic(dim, 0.0), 1000, 3).unwrap();
    ok &= quiet < 1e-12;
    notes.push(format!(
        "unit-noise sigma_hat/sqrt(dim) {normalized:.4}, stiff beta_hat {beta_hat:.3}, noise-free sigma_hat {quiet:.1e}"
    ));
    verdict(ok, notes.join("; "))
}

fn convergence_trend() -> Verdict {
    let mut config = RunConfig::new(
        ProblemSpec::NoisyQuadratic {
            dim: 20,
            noise: 1.0,
            spectrum: None,
            min_eig: 1.0,
            max_eig: 1.0,
        },
        Algorithm::MetaStorm,
    );
    config.etas = vec![1.0];
    config.seeds = (0..20).collect();
    let report = sweep_convergence(&config, &[1_000, 10_000, 100_000], 0).unwrap();
    let curve = &report.curves[0];
    let means: Vec<f64> = curve.points.iter().map(|p| p.grad_norm_out.mean).collect();
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    let Some(fit) = curve.fit else {
        return verdict(false, format!("no fit for means {means:?}"));
    };
    let in_band = (-0.55..=-0.22).contains(&fit.slope) && fit.r2 >= 0.9;
    verdict(
        decreasing && in_band,
        format!(
            "means {:.4} {:.4} {:.4}, decreasing {decreasing}, slope {:.4} (band [-0.55, -0.22]), r2 {:.4}",
            means[0], means[1], means[2], fit.slope, fit.r2
        ),
    )
}

fn oracle_tuned_baseline() -> Verdict {
    let p = quadratic(20, 1.0);
    let big_t = 10_000;
    let x1 = ones(20);
    let mean_out = |alg: Algorithm| -> f64 {
        let hp = HyperParams::preset(alg, 20);
        let outs: Vec<f64> = (0..20)
            .map(|seed| {
                let r = run_with(&p, alg, hp, x1.clone(), 500 + seed, RunOptions::new(big_t).trace_every(big_t)).unwrap();
                assert!(!r.diverged());
                r.grad_norm_out
            })
            .collect();
        outs.iter().sum::<f64>() / outs.len() as f64
    };
    let oracle = mean_out(Algorithm::OracleStorm);
    let meta = mean_out(Algorithm::MetaStorm);
    let ratio = oracle / meta;
    let within = (0.1..=10.0).contains(&ratio);

    let delta_f = p.value_true(&x1).unwrap() - p.f_star.unwrap();
    let (beta, sigma) = (p.beta, p.sigma);
    let b = 2.0 * 2f64.sqrt() * beta + beta.powf(2.0 / 3.0) * delta_f.powf(-1.0 / 3.0) * (sigma * sigma * big_t as f64).cbrt();
    let a = (8.0 * beta * beta / (b * b)).min(1.0);
    let c = oracle_tuned_constants(beta, sigma, big_t, delta_f).unwrap();
    let matches = ((c.b - b) / b).abs() < 1e-14 && ((c.a - a) / a).abs() < 1e-14;
    let identity = ((c.a * c.b * c.b) / (8.0 * beta * beta) - 1.0).abs();
    let exact = c.a < 1.0 && identity <= 4.0 * f64::EPSILON;
    verdict(
        within && matches && exact,
        format!(
            "oracle {oracle:.4} vs meta-storm {meta:.4} (ratio {ratio:.3}); a {:.5} b {:.4}, |a b^2 / 8 beta^2 - 1| {identity:.1e}",
            c.a, c.b
        ),
    )
}

fn determinism_and_accounting() -> Verdict {
    let p = spread_quadratic(6, 1.0);
    let mut identical = true;
    let mut counts = true;
    for alg in Algorithm::ALL {
        let hp = HyperParams::preset(alg, 6).with_eta(0.1);
        let go = || run_with(&p, alg, hp, ones(6), 77, RunOptions::new(300).trace_every(1)).unwrap();
        let (r1, r2) = (go(), go());
        identical &= trace_csv(&r1.trace).unwrap() == trace_csv(&r2.trace).unwrap();
        let expected = match alg {
            Algorithm::Sgd | Algorithm::AdaGradNorm => 300,
            _ => 2 * 300 - 1,
        };
        counts &= r1.queries == expected && r1.trace.last().unwrap().queries_cum == expected;
    }
    verdict(identical && counts, format!("byte-identical traces {identical}, query counts 2T-1 / T {counts}"))
}

type Criterion = (u32, &'static str, Duration, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (1, "noise-free degeneracy", Duration::from_secs(1), noise_free_degeneracy),
        (2, "adagrad equivalence", Duration::from_secs(1), adagrad_equivalence_check),
        (3, "momentum identity suite", Duration::from_secs(5), momentum_identity_suite),
        (4, "recursion re-execution", Duration::from_secs(5), recursion_reexecution),
        (5, "monotonicity properties", Duration::from_secs(10), scalar_monotonicity),
        (6, "heuristic ema closed form", Duration::from_secs(2), ema_closed_form),
        (7, "gradient-oracle validity", Duration::from_secs(30), gradient_oracles),
        (8, "convergence trend", Duration::from_secs(600), convergence_trend),
        (9, "oracle-tuned baseline", Duration::from_secs(120), oracle_tuned_baseline),
        (10, "determinism and accounting", Duration::from_secs(1), determinism_and_accounting),
    ];
    let mut failed = Vec::new();
    for (id, name, budget, check) in criteria {
        let started = Instant::now();
        let v = check();
        let elapsed = started.elapsed();
        let on_time = elapsed <= budget;
        let passed = v.passed && on_time;
        println!(
            "criterion {id:>2} {name:<27} {} [{:.2}s / {}s] {}",
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs(),
            v.detail
        );
        if !passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 10 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
