//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! (run with `cargo test --test acceptance -- --nocapture` to see them all).
//!
//! The tests share a lock so timing and peak-allocation measurements are not
//! polluted by parallel execution.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::DMatrix;
use ubmaud::estimator::{fit, ols_fit, FitOptions, ScoringOptions};
use ubmaud::inference::{beta_tests, bh_adjust, DfMode, Norm};
use ubmaud::likelihood::{score, BlockSummaries};
use ubmaud::params::param_pair;
use ubmaud::simgen::{run_study, sample_dataset, BetaSpec, ScenarioConfig};
use ubmaud::validate;
use ubmaud::PartitionVector;

struct CountingAllocator;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for CountingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            let new = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(new, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
        System.dealloc(ptr, layout)
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc_zeroed(layout);
        if !p.is_null() {
            let new = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(new, Ordering::Relaxed);
        }
        p
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            if new_size >= layout.size() {
                let new = CURRENT.fetch_add(new_size - layout.size(), Ordering::Relaxed)
                    + (new_size - layout.size());
                PEAK.fetch_max(new, Ordering::Relaxed);
            } else {
                CURRENT.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

#[global_allocator]
static ALLOC: CountingAllocator = CountingAllocator;

static GATE: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

fn reference_gamma() -> Vec<f64> {
    vec![0.40, 0.01, -0.51, 0.19, -0.91, -0.64]
}

fn reference_scenario(n: usize, replicates: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        n,
        sizes: vec![30, 40, 60],
        p: 2,
        gamma: reference_gamma(),
        beta: BetaSpec::default(),
        noise_level: 0.0,
        replicates,
        seed,
    }
}

#[test]
fn criterion_01_ub_algebra_oracles() {
    let _g = serial();
    let started = Instant::now();
    let reports = validate::ub_algebra_suite(20260810, 500);
    let elapsed = started.elapsed().as_secs_f64();
    let mut worst: f64 = 0.0;
    for r in &reports {
        assert!(r.passed(), "{}: max err {:.3e} vs {:.1e}", r.name, r.max_err, r.threshold);
        worst = worst.max(r.max_err / r.threshold);
    }
    assert!(elapsed < 60.0, "runtime {elapsed:.1}s exceeds 1 min");
    println!(
        "acceptance 1 (ub algebra, 500 random matrices x {} ops): PASS - worst err at {:.1}% of threshold, {elapsed:.1}s",
        reports.len(),
        100.0 * worst
    );
}

#[test]
fn criterion_02_likelihood_equivalence() {
    let _g = serial();
    let r = validate::likelihood_equivalence_suite(20260810, 100);
    assert!(r.passed(), "max abs err {:.3e} vs 1e-8", r.max_err);
    println!(
        "acceptance 2 (block-summary vs dense likelihood, {} points): PASS - max abs err {:.3e}",
        r.cases, r.max_err
    );
}

#[test]
fn criterion_03_score_correctness() {
    let _g = serial();
    let r = validate::score_fd_suite(20260810, 50);
    assert!(r.passed(), "normalized fd err {:.3e} vs 1e-5", r.max_err);
    // converged score at the estimate
    let cfg = reference_scenario(300, 1, 77001);
    let data = sample_dataset(&cfg, 0).unwrap();
    let f = fit(&data, &FitOptions::default()).unwrap();
    let part = PartitionVector::new(cfg.sizes.clone()).unwrap();
    let s = BlockSummaries::from_residuals(&ols_fit(&data).unwrap().residuals, &part).unwrap();
    let norm = score(&f.gamma, &s).unwrap().amax();
    assert!(norm < 1e-8, "score norm at the estimate: {norm:.3e}");
    println!(
        "acceptance 3 (analytic score): PASS - fd err {:.3e}, score norm at estimate {norm:.3e}",
        r.max_err
    );
}

#[test]
fn criterion_04_least_squares_equals_dense_fgls() {
    let _g = serial();
    let r = validate::theorem1_suite(20260810, 20);
    assert!(r.passed(), "max abs diff {:.3e} vs 1e-8", r.max_err);
    println!(
        "acceptance 4 (dense FGLS equals least squares, {} instances): PASS - max abs diff {:.3e}",
        r.cases, r.max_err
    );
}

#[test]
fn criterion_05_dependence_table_reproduction() {
    let _g = serial();
    let started = Instant::now();
    let cfg = reference_scenario(300, 200, 20260810);
    let report = run_study(&cfg).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    assert_eq!(report.failures.len(), 0, "replicate failures: {:?}", report.failures);
    for p in &report.params {
        assert!(p.bias.abs() < 0.01, "{}: |bias| {:.5} >= 0.01", p.parameter, p.bias.abs());
        let gap = (p.ase - p.mcsd).abs() / p.mcsd;
        assert!(gap < 0.20, "{}: |ase-mcsd|/mcsd {:.3} >= 0.20", p.parameter, gap);
        assert!(
            (0.90..=0.98).contains(&p.coverage),
            "{}: coverage {:.3} outside [0.90, 0.98]",
            p.parameter,
            p.coverage
        );
    }
    assert!(elapsed < 600.0, "runtime {elapsed:.1}s exceeds 10 min");
    let summary: Vec<String> = report
        .params
        .iter()
        .map(|p| format!("{} bias {:+.4} cp {:.3}", p.parameter, p.bias, p.coverage))
        .collect();
    println!(
        "acceptance 5 (estimation study, n=300, 200 replicates): PASS - {} ({elapsed:.1}s)",
        summary.join("; ")
    );
}

#[test]
fn criterion_06_covariance_loss_beats_diagonal_baseline() {
    let _g = serial();
    let cfg = ScenarioConfig {
        n: 50,
        sizes: vec![30, 30, 40],
        p: 2,
        gamma: reference_gamma(),
        beta: BetaSpec::default(),
        noise_level: 0.0,
        replicates: 200,
        seed: 20260811,
    };
    let report = run_study(&cfg).unwrap();
    assert_eq!(report.failures.len(), 0, "replicate failures: {:?}", report.failures);
    let fitted = report.median_loss(Norm::Frobenius, false);
    let baseline = report.median_loss(Norm::Frobenius, true);
    assert!(
        fitted < baseline,
        "median frobenius loss: fitted {fitted:.4} not below baseline {baseline:.4}"
    );
    println!(
        "acceptance 6 (covariance accuracy, n=50): PASS - median loss fitted {fitted:.4} < diagonal baseline {baseline:.4}"
    );
}

#[test]
fn criterion_07_loss_grows_with_misspecification() {
    let _g = serial();
    let mut medians = Vec::new();
    for (k, noise) in [0.0, 0.03, 0.06, 0.09].into_iter().enumerate() {
        let cfg = ScenarioConfig {
            n: 50,
            sizes: vec![30, 30, 40],
            p: 2,
            gamma: reference_gamma(),
            beta: BetaSpec::default(),
            noise_level: noise,
            replicates: 200,
            seed: 20260812 + k as u64,
        };
        let report = run_study(&cfg).unwrap();
        assert_eq!(report.failures.len(), 0, "noise {noise}: failures {:?}", report.failures);
        medians.push(report.median_loss(Norm::Frobenius, false));
    }
    for w in medians.windows(2) {
        assert!(w[1] >= w[0], "medians not non-decreasing: {medians:?}");
    }
    println!(
        "acceptance 7 (perturbation sweep): PASS - median losses {:?} non-decreasing",
        medians.iter().map(|m| (m * 1e4).round() / 1e4).collect::<Vec<_>>()
    );
}

#[test]
fn criterion_08_transform_round_trips_and_plugin_chain() {
    let _g = serial();
    let r = validate::transform_round_trip_suite(20260810, 200);
    assert!(r.passed(), "round-trip err {:.3e} vs 1e-10", r.max_err);
    // plug-in chain at a fitted estimate, formula by formula
    let cfg = reference_scenario(300, 1, 88001);
    let data = sample_dataset(&cfg, 0).unwrap();
    let f = fit(&data, &FitOptions::default()).unwrap();
    let gamma = &f.gamma;
    let part = gamma.part();
    let g = part.num_blocks();
    let l = DMatrix::from_diagonal(&part.sizes_f64());
    // Upsilon: A = diag(-gamma_gg), B = (gamma_gg')
    let mut a_ups = DMatrix::zeros(g, g);
    let mut b_ups = DMatrix::zeros(g, g);
    for j in 0..part.num_params() {
        let (gi, gj) = param_pair(g, j);
        if gi == gj {
            a_ups[(gi, gi)] = -gamma.values()[j];
            b_ups[(gi, gi)] = gamma.values()[j];
        } else {
            b_ups[(gi, gj)] = gamma.values()[j];
            b_ups[(gj, gi)] = gamma.values()[j];
        }
    }
    let ups = gamma.upsilon();
    assert_eq!(DMatrix::from_diagonal(ups.a()), a_ups);
    assert_eq!(ups.b(), &b_ups);
    // Omega: A = (I - A_ups)^2, B = -2B + A B + B A + B L B
    let i_minus = DMatrix::identity(g, g) - &a_ups;
    let a_om = &i_minus * &i_minus;
    let b_om = -2.0 * &b_ups + &a_ups * &b_ups + &b_ups * &a_ups + &b_ups * &l * &b_ups;
    let omega = gamma.omega();
    assert!((DMatrix::from_diagonal(omega.a()) - &a_om).amax() < 1e-14);
    assert!((omega.b() - &b_om).amax() < 1e-14);
    // Sigma: A = A_om^-1, B = -Delta_om^-1 B_om A_om^-1
    let delta_om = &a_om + &b_om * &l;
    let a_si = a_om.clone().try_inverse().unwrap();
    let b_si = -(delta_om.try_inverse().unwrap() * &b_om * &a_si);
    let sigma = f.beta_cov.sigma();
    assert!((DMatrix::from_diagonal(sigma.a()) - &a_si).amax() < 1e-12);
    assert!((sigma.b() - &b_si).amax() < 1e-12);
    println!(
        "acceptance 8 (transforms): PASS - 200 round trips max err {:.3e}; plug-in chain matches at the estimate",
        r.max_err
    );
}

#[test]
fn criterion_09_test_calibration_and_fdr() {
    let _g = serial();
    // per-test type-1 rate under the global null
    let mut tests_total = 0usize;
    let mut rejections = 0usize;
    let reps = 60usize;
    for rep in 0..reps {
        let cfg = ScenarioConfig {
            n: 100,
            sizes: vec![10, 10],
            p: 2,
            gamma: vec![0.0, 0.0, 0.0],
            beta: BetaSpec::Explicit { values: vec![vec![0.0, 0.0]; 20] },
            noise_level: 0.0,
            replicates: 1,
            seed: 30_000 + rep as u64,
        };
        let data = sample_dataset(&cfg, 0).unwrap();
        let f = fit(&data, &FitOptions::default()).unwrap();
        for t in beta_tests(&f, DfMode::StudentT) {
            tests_total += 1;
            if t.p_value <= 0.05 {
                rejections += 1;
            }
        }
    }
    let rate = rejections as f64 / tests_total as f64;
    assert!(tests_total >= 1000, "need at least 1000 tests, got {tests_total}");
    assert!((0.03..=0.07).contains(&rate), "type-1 rate {rate:.4} outside [0.03, 0.07]");
    // empirical FDR of the step-up procedure on mixed null/signal fixtures
    let mut fdp_sum = 0.0;
    let fdr_reps = 60usize;
    for rep in 0..fdr_reps {
        let cfg = ScenarioConfig {
            n: 120,
            sizes: vec![10, 10],
            p: 2,
            gamma: vec![0.2, 0.05, 0.15],
            beta: BetaSpec::Sparse { fraction_nonzero: 0.3, min_abs: 1.0, max_abs: 1.5 },
            noise_level: 0.0,
            replicates: 1,
            seed: 40_000 + rep as u64,
        };
        let part = PartitionVector::new(cfg.sizes.clone()).unwrap();
        let truth = ubmaud::simgen::scenario_beta(&cfg, &part);
        let data = sample_dataset(&cfg, 0).unwrap();
        let f = fit(&data, &FitOptions::default()).unwrap();
        let table = beta_tests(&f, DfMode::StudentT);
        let pvals: Vec<f64> = table.iter().map(|t| t.p_value).collect();
        let out = bh_adjust(&pvals, 0.05).unwrap();
        let mut false_pos = 0usize;
        let mut total_pos = 0usize;
        for (t, rej) in table.iter().zip(&out.rejected) {
            if *rej {
                total_pos += 1;
                if let ubmaud::inference::TestLabel::Beta { feature, covariate } = t.label {
                    if truth[(feature, covariate)] == 0.0 {
                        false_pos += 1;
                    }
                }
            }
        }
        fdp_sum += false_pos as f64 / total_pos.max(1) as f64;
    }
    let fdr = fdp_sum / fdr_reps as f64;
    assert!(fdr <= 0.07, "empirical FDR {fdr:.4} exceeds 0.07");
    println!(
        "acceptance 9 (calibration): PASS - type-1 rate {rate:.4} over {tests_total} tests; empirical FDR {fdr:.4}"
    );
}

#[test]
fn criterion_10_large_problem_time_and_memory() {
    let _g = serial();
    let cfg = ScenarioConfig {
        n: 500,
        sizes: vec![500, 500, 500, 500],
        p: 3,
        gamma: vec![0.3, 0.05, -0.1, 0.08, 0.2, 0.04, -0.12, 0.25, 0.06, 0.15],
        beta: BetaSpec::default(),
        noise_level: 0.0,
        replicates: 1,
        seed: 20260813,
    };
    let data = sample_dataset(&cfg, 0).unwrap();
    let r = 2000usize;
    let rxr_bytes = r * r * std::mem::size_of::<f64>();
    // settle and measure only the fit
    PEAK.store(CURRENT.load(Ordering::Relaxed), Ordering::Relaxed);
    let baseline = CURRENT.load(Ordering::Relaxed);
    let started = Instant::now();
    let opts = FitOptions {
        scoring: ScoringOptions { tol: 1e-6, ..Default::default() },
        ..Default::default()
    };
    let f = fit(&data, &opts).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    let peak_delta = PEAK.load(Ordering::Relaxed).saturating_sub(baseline);
    assert!(elapsed < 10.0, "fit took {elapsed:.2}s, limit 10s");
    assert!(
        peak_delta < 3 * rxr_bytes / 4,
        "peak allocation {:.1} MiB reaches the {:.1} MiB dense-matrix scale",
        peak_delta as f64 / (1 << 20) as f64,
        rxr_bytes as f64 / (1 << 20) as f64
    );
    // sanity: the estimate is usable
    assert!(f.gamma.values().amax() < 2.0);
    println!(
        "acceptance 10 (R=2000 fit): PASS - {elapsed:.2}s, peak allocation {:.1} MiB (one dense R x R alone would be {:.1} MiB)",
        peak_delta as f64 / (1 << 20) as f64,
        rxr_bytes as f64 / (1 << 20) as f64
    );
}
