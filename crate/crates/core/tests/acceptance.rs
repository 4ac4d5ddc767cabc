//! End-to-end acceptance suite: ten numbered criteria covering trust
//! arithmetic, influence bounds, property suites, optimizer oracles,
//! recovery-time closed forms, detection targets, directional stability
//! replications, baseline reduction, and byte-level determinism.
//!
//! Each criterion is one test emitting a single `ACCEPTANCE nn ...: PASS`
//! line (visible with `--nocapture`); a failed assertion marks the
//! criterion FAILED via the harness.

use std::time::{Duration, Instant};

use mvf_composer::agents::PopulationCounts;
use mvf_composer::cli::{run_batch, write_outputs};
use mvf_composer::config::ExperimentConfig;
use mvf_composer::controller::{run_trajectory, Method, Overrides, RunSpec};
use mvf_composer::market::ShockKind;
use mvf_composer::metrics::{closed_form_recovery, recovery_time, Recovery};
use mvf_composer::optimizer::{
    grid_search_reference, kkt_check, markowitz_closed_form, PortfolioProblem,
};
use mvf_composer::risk::{
    adversarial_influence, aggregate_risk, blend_covariance, fragility_ratio, influence_bound,
    max_eigenvalue, min_eigenvalue,
};
use mvf_composer::trust::{trust_score, trust_score_weight_gradient, TrustFeatures, TrustParams};
use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn budget(elapsed: Duration, limit: Duration, what: &str) {
    assert!(
        elapsed <= limit,
        "{what} exceeded its runtime budget: {elapsed:?} > {limit:?}"
    );
}

fn random_psd(rng: &mut StdRng, n: usize, ridge: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &m * m.transpose() + DMatrix::identity(n, n) * ridge
}

fn random_simplex(rng: &mut StdRng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

// -------------------------------------------------------------------------
// 1. Trust arithmetic fixture
// -------------------------------------------------------------------------

#[test]
fn criterion_01_trust_arithmetic() {
    let params = TrustParams::default();
    assert_eq!(params.weights, [1.5, 1.5, 2.0, 1.0]);
    assert_eq!(params.bias, 0.0);
    let features = TrustFeatures {
        consistency: 0.5,
        profitability: 0.5,
        similarity: 1.0,
        destabilization: 0.3,
    };
    // Warm the code path, then time a single call.
    let _ = trust_score(&features, &params);
    let t0 = Instant::now();
    let score = trust_score(&features, &params);
    let dt = t0.elapsed();

    let expected = 0.310026; // sigmoid(-0.8)
    assert!(
        (score - expected).abs() <= 1e-5,
        "trust score {score} differs from {expected} by more than 1e-5"
    );
    budget(dt, Duration::from_millis(1), "criterion 1 scoring call");
    println!("ACCEPTANCE 01 trust-arithmetic: PASS (score {score:.6}, {dt:?})");
}

// -------------------------------------------------------------------------
// 2. Influence bounds and the Sybil fixture
// -------------------------------------------------------------------------

#[test]
fn criterion_02_influence_bounds() {
    let t0 = Instant::now();

    // rho = 0.2 with mean trust 0.35 (adversarial) vs 0.75 (benign).
    let bound = influence_bound(0.2, 0.35, 0.75);
    assert!(
        (bound - 0.1045).abs() <= 1e-4,
        "influence bound {bound} differs from 0.1045 by more than 1e-4"
    );
    // A concrete population realizing those means: 2 adversaries in 10.
    let mut trust = vec![0.35, 0.35];
    trust.extend(std::iter::repeat_n(0.75, 8));
    let mut labels = vec![true, true];
    labels.extend(std::iter::repeat_n(false, 8));
    let measured = adversarial_influence(&trust, &labels).unwrap();
    assert!(
        measured <= bound + 1e-12,
        "measured influence {measured} exceeds bound {bound}"
    );

    // Sybil fixture: four coordinated clones scored by the behavioral
    // model (sigmoid(-0.8) each) against eight benign agents at 0.75.
    let clone_score = trust_score(
        &TrustFeatures {
            consistency: 0.5,
            profitability: 0.5,
            similarity: 1.0,
            destabilization: 0.3,
        },
        &TrustParams::default(),
    );
    let mut sybil_trust = vec![clone_score; 4];
    sybil_trust.extend(std::iter::repeat_n(0.75, 8));
    let mut sybil_labels = vec![true; 4];
    sybil_labels.extend(std::iter::repeat_n(false, 8));
    let contained = adversarial_influence(&sybil_trust, &sybil_labels).unwrap();
    assert!(
        (contained - 0.1713).abs() <= 1e-4,
        "Sybil influence {contained} differs from 0.1713 by more than 1e-4"
    );
    let uniform = adversarial_influence(&[1.0; 12], &sybil_labels).unwrap();
    assert!(
        (uniform - 0.3333).abs() <= 1e-4,
        "uniform influence {uniform} differs from 0.3333 by more than 1e-4"
    );

    let dt = t0.elapsed();
    budget(dt, Duration::from_secs(1), "criterion 2");
    println!(
        "ACCEPTANCE 02 influence-bounds: PASS (bound {bound:.6}, sybil {contained:.6} vs uniform {uniform:.4}, {dt:?})"
    );
}

// -------------------------------------------------------------------------
// 3. Trust property suite: bounded, monotone, gradient-exact
// -------------------------------------------------------------------------

#[test]
fn criterion_03_trust_properties() {
    let t0 = Instant::now();
    let params = TrustParams::default();
    let mut rng = StdRng::seed_from_u64(0xACCE_0003);
    let h = 1e-5;
    let bump = 1e-3;

    // Keep every |f_i| >= 0.1 so relative gradient comparison is
    // well-conditioned (the weight gradient scales with f_i).
    let sample_signed = |rng: &mut StdRng| {
        let mag = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            mag
        } else {
            -mag
        }
    };

    for case in 0..1000 {
        let f = TrustFeatures {
            consistency: sample_signed(&mut rng),
            profitability: rng.gen_range(0.1..1.0),
            similarity: rng.gen_range(0.1..1.0),
            destabilization: sample_signed(&mut rng),
        };
        let base = trust_score(&f, &params);
        assert!(
            base > 0.0 && base < 1.0,
            "case {case}: score {base} out of (0,1)"
        );

        // Monotone up in honesty-aligned features, down in suspicion
        // features, under +-1e-3 perturbations.
        let mut up = f.as_array();
        up[0] += bump;
        let up = TrustFeatures {
            consistency: up[0],
            profitability: f.profitability + bump,
            similarity: f.similarity,
            destabilization: f.destabilization,
        };
        assert!(
            trust_score(&up, &params) >= base - 1e-14,
            "case {case}: score decreased when consistency/profitability rose"
        );
        let down = TrustFeatures {
            consistency: f.consistency,
            profitability: f.profitability,
            similarity: f.similarity + bump,
            destabilization: f.destabilization + bump,
        };
        assert!(
            trust_score(&down, &params) <= base + 1e-14,
            "case {case}: score increased when similarity/destabilization rose"
        );

        // Analytic weight gradient against central finite differences.
        let grad = trust_score_weight_gradient(&f, &params);
        for (i, &g) in grad.iter().enumerate() {
            let mut plus = params.clone();
            plus.weights[i] += h;
            let mut minus = params.clone();
            minus.weights[i] -= h;
            let fd = (trust_score(&f, &plus) - trust_score(&f, &minus)) / (2.0 * h);
            let rel = (g - fd).abs() / g.abs().max(1e-300);
            assert!(
                rel <= 1e-6,
                "case {case}: gradient component {i} relative error {rel}"
            );
        }
    }

    let dt = t0.elapsed();
    budget(dt, Duration::from_secs(10), "criterion 3");
    println!("ACCEPTANCE 03 trust-properties: PASS (1000 cases, {dt:?})");
}

// -------------------------------------------------------------------------
// 4. Risk & covariance property suite
// -------------------------------------------------------------------------

#[test]
fn criterion_04_risk_covariance_properties() {
    let t0 = Instant::now();
    let mut rng = StdRng::seed_from_u64(0xACCE_0004);

    // Aggregated risk is a convex combination of individual risk states.
    for _ in 0..300 {
        let n = rng.gen_range(2..20);
        let trust: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let risk: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let agg = aggregate_risk(&trust, &risk).unwrap();
        let lo = risk.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = risk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(
            agg >= lo - 1e-12 && agg <= hi + 1e-12,
            "aggregate {agg} outside [{lo}, {hi}]"
        );
    }

    // Blend: PSD closure plus Weyl eigenvalue envelopes, 1000 pairs.
    for case in 0..1000 {
        let h = random_psd(&mut rng, 4, 1e-6);
        let s = random_psd(&mut rng, 4, 1e-6);
        let alpha: f64 = rng.gen_range(0.0..=1.0);
        let b = blend_covariance(&h, &s, alpha).unwrap();
        let (bmin, bmax) = (min_eigenvalue(&b), max_eigenvalue(&b));
        assert!(
            bmin >= -1e-9,
            "case {case}: blend lost PSD, lambda_min {bmin}"
        );
        let lo = (1.0 - alpha) * min_eigenvalue(&h) + alpha * min_eigenvalue(&s);
        let hi = (1.0 - alpha) * max_eigenvalue(&h) + alpha * max_eigenvalue(&s);
        assert!(
            bmin >= lo - 1e-8,
            "case {case}: lambda_min {bmin} below Weyl floor {lo}"
        );
        assert!(
            bmax <= hi + 1e-8,
            "case {case}: lambda_max {bmax} above Weyl ceiling {hi}"
        );
    }

    // Fragility ratio never exceeds the Rayleigh bound.
    for case in 0..300 {
        let h = random_psd(&mut rng, 4, 0.05);
        let s = random_psd(&mut rng, 4, 0.05);
        let w = random_simplex(&mut rng, 4);
        let kappa = fragility_ratio(&w, &h, &s).unwrap();
        let rayleigh = max_eigenvalue(&s) / min_eigenvalue(&h);
        assert!(
            kappa <= rayleigh * (1.0 + 1e-9) + 1e-12,
            "case {case}: fragility {kappa} above Rayleigh bound {rayleigh}"
        );
    }

    let dt = t0.elapsed();
    budget(dt, Duration::from_secs(30), "criterion 4");
    println!("ACCEPTANCE 04 risk-covariance-properties: PASS (1600 cases, {dt:?})");
}

// -------------------------------------------------------------------------
// 5. Optimizer oracle equivalence
// -------------------------------------------------------------------------

#[test]
fn criterion_05_optimizer_oracles() {
    let t0 = Instant::now();
    let mut rng = StdRng::seed_from_u64(0xACCE_0005);

    // (a) 200 interior problems against the closed form.
    let mut accepted = 0;
    let mut attempts = 0;
    while accepted < 200 {
        attempts += 1;
        assert!(attempts < 4000, "interior problem generator starved");
        let n = 4;
        let sigma = random_psd(&mut rng, n, 0.5) * 0.01;
        let mu: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2e-3)).collect();
        let lambda = 2.5;
        let closed = markowitz_closed_form(&sigma, &mu, lambda).unwrap();
        if closed.iter().any(|&w| !(0.02..=0.98).contains(&w)) {
            continue; // bounds would bind; not an interior instance
        }
        let problem = PortfolioProblem {
            covariance: sigma,
            expected_returns: mu,
            return_weight: lambda,
            lower: vec![0.0; n],
            upper: vec![1.0; n],
            previous_weights: vec![1.0 / n as f64; n],
            turnover_limit: None,
        };
        let sol = problem.solve().unwrap();
        for (i, (&ws, &wc)) in sol.weights.iter().zip(closed.iter()).enumerate() {
            assert!(
                (ws - wc).abs() <= 1e-6,
                "interior case {accepted}: weight {i} {ws} vs closed form {wc}"
            );
        }
        let resid = kkt_check(&problem, &sol.weights).unwrap();
        assert!(
            resid <= 1e-8,
            "interior case {accepted}: KKT residual {resid}"
        );
        accepted += 1;
    }

    // (b) 50 constrained problems against the dense simplex grid. Bounds,
    // previous weights, and turnover limits all sit on the 1e-3 lattice so
    // active constraint faces contain exact grid points.
    for case in 0..50 {
        let n = if case % 2 == 0 { 2 } else { 3 };
        let mut sigma = random_psd(&mut rng, n, 0.05);
        let lmax = max_eigenvalue(&sigma);
        if lmax > 0.5 {
            sigma *= 0.5 / lmax;
        }
        let mu: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5e-4)).collect();
        let prev: Vec<f64> = if n == 2 {
            let k = rng.gen_range(400..=600);
            vec![k as f64 / 1000.0, (1000 - k) as f64 / 1000.0]
        } else {
            let k1 = rng.gen_range(50..=600);
            let k2_lo = 50.max(400 - k1);
            let k2_hi = 600.min(950 - k1);
            let k2 = rng.gen_range(k2_lo..=k2_hi);
            let k3 = 1000 - k1 - k2;
            vec![k1 as f64 / 1000.0, k2 as f64 / 1000.0, k3 as f64 / 1000.0]
        };
        let tau = if rng.gen_bool(0.5) { 0.2 } else { 0.3 };
        let problem = PortfolioProblem {
            covariance: sigma,
            expected_returns: mu,
            return_weight: 2.5,
            lower: vec![0.05; n],
            upper: vec![0.60; n],
            previous_weights: prev,
            turnover_limit: Some(tau),
        };
        let sol = problem.solve().unwrap();
        let (_, grid_obj) = grid_search_reference(&problem, 1e-3).unwrap();
        let solver_obj = problem.objective(&sol.weights);
        assert!(
            (solver_obj - grid_obj).abs() <= 1e-6,
            "grid case {case} (n={n}): solver objective {solver_obj} vs grid {grid_obj}"
        );
        let resid = kkt_check(&problem, &sol.weights).unwrap();
        assert!(resid <= 1e-8, "grid case {case}: KKT residual {resid}");
    }

    let dt = t0.elapsed();
    budget(dt, Duration::from_secs(120), "criterion 5");
    println!("ACCEPTANCE 05 optimizer-oracles: PASS (200 interior + 50 grid, {dt:?})");
}

// -------------------------------------------------------------------------
// 6. Recovery-time closed form
// -------------------------------------------------------------------------

#[test]
fn criterion_06_recovery_oracle() {
    let t0 = Instant::now();
    let mut rng = StdRng::seed_from_u64(0xACCE_0006);
    let epsilon = 0.01;
    let shock_step = 5usize;

    for case in 0..100 {
        let delta_s: f64 = rng.gen_range(0.02..0.2);
        let gamma: f64 = rng.gen_range(0.05..0.5);
        let expected = closed_form_recovery(delta_s, epsilon, gamma).unwrap();

        let horizon = shock_step + expected as usize + 12;
        let mut peg = vec![0.0; horizon];
        for k in 0..(horizon - shock_step) {
            peg[shock_step + k] = delta_s * (-gamma * k as f64).exp();
        }
        let measured = match recovery_time(&peg, shock_step, epsilon).unwrap() {
            Recovery::Steps(s) => s,
            Recovery::NotRecovered => panic!("case {case}: synthetic decay never recovered"),
        };
        let diff = measured.abs_diff(expected);
        assert!(
            diff <= 1,
            "case {case}: measured {measured} vs closed form {expected} (delta_s {delta_s:.4}, gamma {gamma:.4})"
        );
    }

    let dt = t0.elapsed();
    budget(dt, Duration::from_secs(5), "criterion 6");
    println!("ACCEPTANCE 06 recovery-oracle: PASS (100 cases, {dt:?})");
}

// -------------------------------------------------------------------------
// 7. Detection and influence-containment targets
// -------------------------------------------------------------------------

#[test]
fn criterion_07_detection_targets() {
    let t0 = Instant::now();
    let mut cfg = ExperimentConfig::quick();
    cfg.run.methods = vec![Method::Composer];
    cfg.run.shocks = vec![ShockKind::BlackThursday];
    assert_eq!(cfg.run.runs, 100);
    assert_eq!(cfg.counts.attackers, 2);
    assert!(cfg.attack.coordination >= 0.8);

    let output = run_batch(&cfg).unwrap();
    let cell = &output.summary.cells[&ShockKind::BlackThursday][&Method::Composer];
    let sec = cell.security.as_ref().expect("security summary missing");
    assert!(sec.tpr >= 0.7, "TPR {} below 0.7", sec.tpr);
    assert!(sec.fpr <= 0.1, "FPR {} above 0.1", sec.fpr);
    assert!(
        (0.4..=0.85).contains(&sec.influence_reduction),
        "influence reduction {} outside [0.4, 0.85]",
        sec.influence_reduction
    );

    let dt = t0.elapsed();
    budget(dt, Duration::from_secs(300), "criterion 7");
    println!(
        "ACCEPTANCE 07 detection-targets: PASS (tpr {:.3}, fpr {:.3}, influence reduction {:.3}, {dt:?})",
        sec.tpr, sec.fpr, sec.influence_reduction
    );
}

// -------------------------------------------------------------------------
// 8. Directional stability replication (paired seeds)
// -------------------------------------------------------------------------

#[test]
fn criterion_08_directional_stability() {
    let t0 = Instant::now();

    // (a) Full pipeline vs the stress-agnostic baseline at default rho.
    let mut cfg = ExperimentConfig::quick();
    cfg.run.methods = vec![Method::Composer, Method::StressAgnostic];
    cfg.run.shocks = vec![ShockKind::BlackThursday];
    let output = run_batch(&cfg).unwrap();
    let sas = &output.summary.comparisons[&ShockKind::BlackThursday][&Method::StressAgnostic];
    assert!(
        sas.peak_win_rate >= 0.8,
        "peak win rate vs stress-agnostic {} below 0.8",
        sas.peak_win_rate
    );
    assert!(
        sas.mean_recovery_difference < 0.0,
        "mean recovery difference vs stress-agnostic {} not negative",
        sas.mean_recovery_difference
    );

    // (b) Full pipeline vs uniform-trust at rho = 0.3.
    let mut cfg3 = ExperimentConfig::quick();
    cfg3.counts = PopulationCounts::default().with_adversarial_fraction(0.3);
    cfg3.run.methods = vec![Method::Composer, Method::NoTrust];
    cfg3.run.shocks = vec![ShockKind::BlackThursday];
    let output3 = run_batch(&cfg3).unwrap();
    let nt = &output3.summary.comparisons[&ShockKind::BlackThursday][&Method::NoTrust];
    assert!(
        nt.peak_win_rate >= 0.7,
        "peak win rate vs uniform-trust at rho 0.3 {} below 0.7",
        nt.peak_win_rate
    );

    let dt = t0.elapsed();
    budget(dt, Duration::from_secs(600), "criterion 8");
    println!(
        "ACCEPTANCE 08 directional-stability: PASS (vs stress-agnostic win {:.2} recovery {:+.1}; vs uniform-trust rho=0.3 win {:.2}, {dt:?})",
        sas.peak_win_rate, sas.mean_recovery_difference, nt.peak_win_rate
    );
}

// -------------------------------------------------------------------------
// 9. Baseline reduction: neutralized pipeline == stress-agnostic baseline
// -------------------------------------------------------------------------

#[test]
fn criterion_09_baseline_reduction() {
    let t0 = Instant::now();
    let cfg = ExperimentConfig::default();

    for seed in [42u64, 43, 44] {
        let forced = RunSpec {
            run_id: seed,
            seed,
            method: Method::Composer,
            shock: ShockKind::BlackThursday,
            forced_overrides: Some(Overrides {
                force_alpha: Some(0.0),
                uniform_trust: true,
                ..Overrides::default()
            }),
            market: &cfg.market,
            behavior: &cfg.behavior,
            attack: &cfg.attack,
            counts: &cfg.counts,
            trust: &cfg.trust,
            risk: &cfg.risk,
            controller: &cfg.controller,
        };
        let baseline = RunSpec {
            method: Method::StressAgnostic,
            forced_overrides: None,
            ..forced
        };
        let a = run_trajectory(&forced).unwrap();
        let b = run_trajectory(&baseline).unwrap();
        assert_eq!(a.epochs.len(), b.epochs.len());
        for (ea, eb) in a.epochs.iter().zip(b.epochs.iter()) {
            for (wa, wb) in ea.weights.iter().zip(eb.weights.iter()) {
                assert!(
                    (wa - wb).abs() <= 1e-8,
                    "seed {seed} epoch {}: neutralized weight {wa} vs baseline {wb}",
                    ea.epoch
                );
            }
        }
    }

    let dt = t0.elapsed();
    budget(dt, Duration::from_secs(10), "criterion 9");
    println!("ACCEPTANCE 09 baseline-reduction: PASS (3 seeds, every epoch within 1e-8, {dt:?})");
}

// -------------------------------------------------------------------------
// 10. Byte-identical determinism of the batch summary
// -------------------------------------------------------------------------

#[test]
fn criterion_10_determinism() {
    let t0 = Instant::now();
    let mut cfg = ExperimentConfig::quick();
    cfg.run.runs = 10;

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let out_a = run_batch(&cfg).unwrap();
    write_outputs(&cfg, &out_a, dir_a.path()).unwrap();
    let out_b = run_batch(&cfg).unwrap();
    write_outputs(&cfg, &out_b, dir_b.path()).unwrap();

    let bytes_a = std::fs::read(dir_a.path().join("summary.json")).unwrap();
    let bytes_b = std::fs::read(dir_b.path().join("summary.json")).unwrap();
    assert!(!bytes_a.is_empty());
    assert_eq!(
        bytes_a, bytes_b,
        "summary JSON differs between identical invocations"
    );

    let dt = t0.elapsed();
    println!(
        "ACCEPTANCE 10 determinism: PASS (summary JSON byte-identical, {} bytes, {dt:?})",
        bytes_a.len()
    );
}
