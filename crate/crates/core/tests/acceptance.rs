//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Failures are reported, not hidden; the process exits non-zero on a failed
//! criterion only when `ACCEPTANCE_STRICT=1`, so the suite can run as part of
//! `cargo test` while still surfacing every outcome.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use psweight::analysis::{analyze, AnalysisOptions};
use psweight::data::{Flavor, NuisanceSpec, Thresholds, WeightScheme};
use psweight::estimators::{estimate, hajek_wate, population_wate, EstimationInput};
use psweight::glm::{fit_logistic, LogisticFit, EPS_PS};
use psweight::report::sim_report_csv;
use psweight::simulation::dgp::{gen_main, gen_toy, DgpOptions, MAIN_FULL_COLUMNS};
use psweight::simulation::truth::truth_for_config;
use psweight::simulation::{
    run_replications, true_estimands, DgpConfig, Effect, Family, Scenario, SimReport, SimRng,
};
use psweight::variance::StackedProblem;
use psweight::weights::{compute_weights_raw, effective_sample_size};
use psweight::Dataset;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

const SEED: u64 = 20_240_601;

fn s_trim(a: f64) -> WeightScheme {
    WeightScheme::TrimmedAte(Thresholds::symmetric(a).unwrap())
}

// ---------------------------------------------------------------------------
// 1. Superpopulation truths, heterogeneous effect.

/// Published truths in the order ATE, ATE(.05), ATE(.1), ATE(.15), ATO, ATM, ATEN, ATC, ATT.
const TRUTHS: [[f64; 9]; 6] = [
    [17.22, 16.61, 22.79, 30.46, 20.53, 22.28, 19.26, 16.62, 22.59],
    [17.22, 17.15, 16.90, 17.08, 17.72, 18.33, 17.55, 16.81, 18.76],
    [17.22, 17.20, 17.12, 16.91, 16.69, 16.30, 16.81, 16.61, 17.83],
    [17.22, 15.28, 13.48, 13.87, 15.39, 15.81, 15.55, 18.58, 16.86],
    [17.22, 13.67, 16.59, 22.78, 17.36, 18.84, 16.78, 20.79, 16.78],
    [17.22, 16.75, 15.78, 15.77, 16.56, 16.63, 16.63, 16.70, 17.35],
];

fn truth_order() -> Vec<WeightScheme> {
    vec![
        WeightScheme::Ate,
        s_trim(0.05),
        s_trim(0.1),
        s_trim(0.15),
        WeightScheme::Overlap,
        WeightScheme::Matching,
        WeightScheme::Entropy,
        WeightScheme::Atc,
        WeightScheme::Att,
    ]
}

fn criterion_truths(decomp: &mut Vec<(u8, f64, f64)>) -> Outcome {
    let mut worst = (0.0f64, String::new());
    let mut lines = Vec::new();
    for model in 1..=6u8 {
        let cfg = DgpConfig {
            model_id: model,
            effect: Effect::Heterogeneous,
            seed: SEED + model as u64,
            ..Default::default()
        };
        let t = truth_for_config(&cfg).expect("truth");
        decomp.push((model, t.decomposition_gap, t.decomposition_mc_se));
        let mut row = Vec::new();
        for (s, want) in truth_order().iter().zip(TRUTHS[model as usize - 1]) {
            let got = t.get(s).unwrap();
            let dev = (got - want).abs();
            if dev > worst.0 {
                worst = (dev, format!("model {model} {}: {got:.3} vs {want}", s.label()));
            }
            row.push(format!("{got:.2}"));
        }
        lines.push(format!(
            "    model {model}: p={:.4} r={:.2} [{}]",
            t.p,
            t.r,
            row.join(", ")
        ));
    }
    for l in &lines {
        println!("{l}");
    }
    check(worst.0 <= 0.15, format!("max |dev| {:.3} ({}) tol 0.15", worst.0, worst.1))
}

// ---------------------------------------------------------------------------
// 2. Two-covariate illustration at N = 10⁴.

fn toy_row(beta0: f64) -> (f64, Vec<f64>) {
    let mut rng = SimRng::new(SEED, 0);
    let s = gen_toy(beta0, 10_000, &mut rng, &DgpOptions::default()).unwrap();
    let d = &s.data;
    let fit = fit_logistic(d, &NuisanceSpec::full(d)).unwrap();
    let tau = s.tau();
    // ATE from the potential outcomes; the rest from the estimated propensity scores.
    let ate = tau.iter().sum::<f64>() / tau.len() as f64;
    let mut v = vec![ate];
    for scheme in [
        WeightScheme::Att,
        WeightScheme::Atc,
        WeightScheme::Overlap,
        WeightScheme::Matching,
        WeightScheme::Entropy,
    ] {
        v.push(population_wate(&tau, &fit.fitted, d.z(), &scheme).unwrap());
    }
    (d.n_treated() as f64 / d.n() as f64, v)
}

fn criterion_toy() -> Outcome {
    // ATE, ATT, ATC, ATO, ATM, ATEN.
    let published = [
        (-3.5, [54.75, 76.54, 49.62, 69.87, 75.88, 66.08]),
        (0.0, [54.75, 58.01, 35.22, 38.79, 35.33, 42.05]),
    ];
    let mut worst = 0.0f64;
    let mut pattern = true;
    let mut notes = Vec::new();
    for (beta0, want) in published {
        let (p, got) = toy_row(beta0);
        for (g, w) in got.iter().zip(want) {
            worst = worst.max((g - w).abs());
        }
        let (ate, att, atc, ato) = (got[0], got[1], got[2], got[3]);
        let small = p < 0.5;
        let ok = if small {
            (ato - att).abs() < (ato - atc).abs() && (ate - atc).abs() < (ate - att).abs()
        } else {
            (ato - atc).abs() < (ato - att).abs() && (ate - att).abs() < (ate - atc).abs()
        };
        pattern &= ok;
        notes.push(format!(
            "beta0={beta0}: p={p:.4} [{}]",
            got.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(", ")
        ));
    }
    check(
        worst <= 3.0 && pattern,
        format!("max |dev| {worst:.2} tol 3; pattern {}; {}", if pattern { "holds" } else { "broken" }, notes.join("; ")),
    )
}

// ---------------------------------------------------------------------------
// 3–5. Replication studies.

fn study(model: u8, effect: Effect, scenario: Scenario, reps: usize) -> SimReport {
    let cfg = DgpConfig {
        family: Family::Main,
        model_id: model,
        effect,
        scenario,
        reps,
        n: 1000,
        seed: SEED,
        ..Default::default()
    };
    let truth = truth_for_config(&cfg).unwrap();
    run_replications(&cfg, &truth).unwrap()
}

fn criterion_headline(r: &SimReport) -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    // Scenario B is the augmented estimator with both nuisance models correct;
    // the weighting-only rows of the same run are printed for reference.
    for s in [WeightScheme::Overlap, WeightScheme::Matching, WeightScheme::Entropy] {
        for f in [Flavor::Augmented, Flavor::Hajek] {
            let row = r.row(&s, f).unwrap();
            let m = row.metrics.as_ref().unwrap();
            let (cp, re) = (m.cp.unwrap_or(f64::NAN), m.re.unwrap_or(f64::NAN));
            let ok = m.arbias_pct <= 0.5 && (0.93..=0.97).contains(&cp) && (0.9..=1.1).contains(&re);
            if f == Flavor::Augmented {
                pass &= ok;
            }
            notes.push(format!(
                "{}/{}: ARBias {:.3}% CP {cp:.3} RE {re:.3} failed {}",
                s.method(),
                f.name(),
                m.arbias_pct,
                row.n_failed
            ));
        }
    }
    check(pass, notes.join("; "))
}

fn criterion_instability(r: &SimReport) -> Outcome {
    let ipw = r.row(&WeightScheme::Ate, Flavor::Hajek).unwrap().metrics.clone().unwrap();
    let ow = r.row(&WeightScheme::Overlap, Flavor::Hajek).unwrap().metrics.clone().unwrap();
    let ratio = ipw.arbias_pct / ow.arbias_pct;
    let (cp_ipw, cp_ow) = (ipw.cp.unwrap_or(f64::NAN), ow.cp.unwrap_or(f64::NAN));
    check(
        ratio >= 10.0 && cp_ipw <= 0.80 && cp_ow >= 0.92,
        format!(
            "IPW ARBias {:.3}% vs OW {:.3}% (ratio {ratio:.1}); CP IPW {cp_ipw:.3}, OW {cp_ow:.3}",
            ipw.arbias_pct, ow.arbias_pct
        ),
    )
}

fn criterion_ess(r: &SimReport) -> Outcome {
    let ow = r.row(&WeightScheme::Overlap, Flavor::Hajek).unwrap().mean_ess_treated.unwrap();
    let ipw = r.row(&WeightScheme::Ate, Flavor::Hajek).unwrap().mean_ess_treated.unwrap();
    check(
        (96.0..=103.0).contains(&ow) && (45.0..=60.0).contains(&ipw),
        format!("treated ESS: OW {ow:.2}, IPW {ipw:.2}"),
    )
}

// ---------------------------------------------------------------------------
// 6. Sandwich against the bootstrap, analytic Jacobian against finite differences.

fn bootstrap_se(d: &Dataset, spec: &NuisanceSpec, scheme: WeightScheme, b: usize, seed: u64) -> (f64, usize) {
    let n = d.n();
    let draws: Vec<Option<f64>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut rng = SimRng::new(seed, i as u64);
            let rows: Vec<usize> = (0..n).map(|_| ((rng.uniform() * n as f64) as usize).min(n - 1)).collect();
            let sub = d.subset(&rows).ok()?;
            let fit = fit_logistic(&sub, spec).ok()?;
            hajek_wate(&EstimationInput::hajek(&sub, &fit, scheme)).ok()
        })
        .collect();
    let ok: Vec<f64> = draws.into_iter().flatten().collect();
    let m = ok.iter().sum::<f64>() / ok.len() as f64;
    let var = ok.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (ok.len() - 1) as f64;
    (var.sqrt(), ok.len())
}

fn fixtures() -> Vec<(String, Dataset)> {
    [(2u8, 101u64), (3, 102), (6, 103)]
        .iter()
        .map(|&(model, seed)| {
            let mut rng = SimRng::new(seed, 0);
            let s = gen_main(model, Effect::Heterogeneous, 200, &mut rng, &DgpOptions::default()).unwrap();
            (format!("model {model} seed {seed}"), s.data)
        })
        .collect()
}

fn combos() -> Vec<(WeightScheme, Flavor)> {
    let trunc = WeightScheme::TruncatedAte(Thresholds::symmetric(0.1).unwrap());
    let mut v = Vec::new();
    for s in [
        WeightScheme::Ate,
        WeightScheme::Att,
        WeightScheme::Atc,
        s_trim(0.1),
        trunc,
        WeightScheme::Overlap,
        WeightScheme::Matching,
        WeightScheme::Entropy,
    ] {
        v.push((s, Flavor::Hajek));
    }
    for s in [WeightScheme::Ate, WeightScheme::Att, WeightScheme::Atc, s_trim(0.1)] {
        v.push((s, Flavor::DoublyRobust));
    }
    for s in [WeightScheme::Overlap, WeightScheme::Matching, WeightScheme::Entropy] {
        v.push((s, Flavor::Augmented));
    }
    v
}

fn fd_jacobian(p: &StackedProblem, theta: &DVector<f64>) -> DMatrix<f64> {
    let dim = theta.len();
    let mut j = DMatrix::zeros(dim, dim);
    for c in 0..dim {
        let h = 1e-5 * theta[c].abs().max(1.0);
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        tp[c] += h;
        tm[c] -= h;
        let sp: DVector<f64> = p.psi(&tp).unwrap().row_sum().transpose();
        let sm: DVector<f64> = p.psi(&tm).unwrap().row_sum().transpose();
        j.set_column(c, &((sp - sm) / (2.0 * h)));
    }
    j
}

fn criterion_sandwich() -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    let mut worst_boot = 0.0f64;
    let mut worst_jac = 0.0f64;
    for (k, (name, d)) in fixtures().into_iter().enumerate() {
        let spec = NuisanceSpec::full(&d);
        let schemes = vec![
            WeightScheme::Ate,
            WeightScheme::Overlap,
            WeightScheme::Matching,
            WeightScheme::Entropy,
        ];
        let opts = AnalysisOptions {
            schemes: schemes.clone(),
            flavors: vec![Flavor::Hajek],
            ..Default::default()
        };
        let a = analyze(&d, &spec, &opts).unwrap();
        for (row, s) in a.rows.iter().zip(&schemes) {
            let se = row.result.as_ref().and_then(|r| r.se).unwrap_or(f64::NAN);
            let (boot, ok) = bootstrap_se(&d, &spec, *s, 2000, SEED + k as u64);
            let rel = (se / boot - 1.0).abs();
            worst_boot = worst_boot.max(if rel.is_nan() { f64::INFINITY } else { rel });
            if !(rel <= 0.15) || ok < 1900 {
                pass = false;
                notes.push(format!("{name} {}: sandwich {se:.4} bootstrap {boot:.4} ({ok} ok)", s.method()));
            }
        }

        let ps = fit_logistic(&d, &spec).unwrap();
        let or0 = psweight::glm::fit_linear(&d, &spec, false).unwrap();
        let or1 = psweight::glm::fit_linear(&d, &spec, true).unwrap();
        let near_half = ps.fitted.iter().any(|e| (e - 0.5).abs() < 1e-6);
        for (s, f) in combos() {
            if near_half && s == WeightScheme::Matching {
                notes.push(format!("{name}: MW skipped, fitted score within 1e-6 of 0.5"));
                continue;
            }
            let input = EstimationInput {
                d: &d,
                ps: &ps,
                or0: Some(&or0),
                or1: Some(&or1),
                scheme: s,
                flavor: f,
            };
            let p = StackedProblem::from_input(&input).unwrap();
            let theta = p.theta_hat().clone();
            let analytic = p.a_n(&theta).unwrap() * (-(p.n() as f64));
            let fd = fd_jacobian(&p, &theta);
            for c in 0..p.dim() {
                let scale = analytic.column(c).amax().max(1.0);
                let err = (fd.column(c) - analytic.column(c)).amax() / scale;
                worst_jac = worst_jac.max(err);
                if err > 1e-4 {
                    pass = false;
                    notes.push(format!("{name} {}/{}: column {c} rel err {err:.2e}", s.label(), f.name()));
                }
            }
        }
    }
    notes.insert(
        0,
        format!("max |SE/bootstrap − 1| {worst_boot:.3} (tol 0.15); max Jacobian rel err {worst_jac:.2e} (tol 1e-4)"),
    );
    check(pass, notes.join("; "))
}

// ---------------------------------------------------------------------------
// 7. Double robustness.

fn t_stat(r: &SimReport, s: WeightScheme, f: Flavor) -> (f64, f64) {
    let m = r.row(&s, f).unwrap().metrics.clone().unwrap();
    (m.bias, m.bias / (m.sd / (m.n_estimates as f64).sqrt()))
}

fn criterion_double_robustness() -> Outcome {
    // Constant effect: with the full covariate set the outcome models of both
    // arms are then exactly linear, so scenario D's outcome side is truly correct.
    let c = study(2, Effect::Constant, Scenario::C, 300);
    let d = study(2, Effect::Constant, Scenario::D, 300);
    let (bc, tc) = t_stat(&c, WeightScheme::Ate, Flavor::DoublyRobust);
    let (bd, td) = t_stat(&d, WeightScheme::Ate, Flavor::DoublyRobust);
    let (bo, to) = t_stat(&c, WeightScheme::Overlap, Flavor::Augmented);
    let (bod, tod) = t_stat(&d, WeightScheme::Overlap, Flavor::Augmented);
    check(
        tc.abs() < 3.0 && td.abs() < 3.0 && to.abs() < 3.0,
        format!(
            "DR-ATE C bias {bc:.4} t {tc:.2}; DR-ATE D bias {bd:.4} t {td:.2}; Aug-OW C bias {bo:.4} t {to:.2}; \
             (Aug-OW D bias {bod:.4} t {tod:.2}, not required)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. Invariants.

fn fake_ps(e: Vec<f64>) -> LogisticFit {
    LogisticFit {
        columns: vec![0],
        beta: vec![0.0],
        fitted: e,
        converged: true,
        iterations: 0,
        log_likelihood: 0.0,
        log_likelihood_trace: vec![],
        score_norm: 0.0,
        separation_warning: false,
        eps_ps: EPS_PS,
    }
}

fn criterion_invariants(decomp: &[(u8, f64, f64)]) -> Outcome {
    let mut failures = Vec::new();
    let mut rng = SimRng::new(SEED, 7);
    let s = gen_main(3, Effect::Heterogeneous, 500, &mut rng, &DgpOptions::default()).unwrap();
    let d = &s.data;
    let fit = fit_logistic(d, &NuisanceSpec::full(d)).unwrap();
    let all = [
        WeightScheme::Ate,
        WeightScheme::Att,
        WeightScheme::Atc,
        s_trim(0.1),
        WeightScheme::Overlap,
        WeightScheme::Matching,
        WeightScheme::Entropy,
    ];

    // Location/scale equivariance of the weighting estimator.
    let (a, b) = (3.5, -2.0);
    let shifted = d.with_outcome(d.y().iter().map(|y| a + b * y).collect()).unwrap();
    for scheme in all {
        let t = hajek_wate(&EstimationInput::hajek(d, &fit, scheme)).unwrap();
        let t2 = hajek_wate(&EstimationInput::hajek(&shifted, &fit, scheme)).unwrap();
        if (t2 - b * t).abs() > 1e-9 * t.abs().max(1.0) {
            failures.push(format!("equivariance {}", scheme.label()));
        }
        // Weight-scale invariance: multiplying g by a constant leaves the ratio unchanged.
        let ws = compute_weights_raw(d.z(), &fit.fitted, &scheme).unwrap();
        let mut scaled = ws.clone();
        scaled.w.iter_mut().for_each(|w| *w *= 7.25);
        let t3 = psweight::estimators::hajek_from_weights(&scaled, d.z(), d.y()).unwrap();
        if (t3 - t).abs() > 1e-10 * t.abs().max(1.0) {
            failures.push(format!("weight scale {}", scheme.label()));
        }
        // ESS bounded by the arm size.
        for arm in [true, false] {
            let ess = effective_sample_size(&ws, d.z(), arm).unwrap();
            let n_arm = (0..d.n()).filter(|&i| d.z()[i] == arm && ws.included[i]).count() as f64;
            if ess > n_arm * (1.0 + 1e-12) {
                failures.push(format!("ESS bound {}", scheme.label()));
            }
        }
    }

    // ê ≡ 0.5: every estimand coincides, and ESS equals the arm size.
    let half = fake_ps(vec![0.5; d.n()]);
    let reference = hajek_wate(&EstimationInput::hajek(d, &half, WeightScheme::Ate)).unwrap();
    for scheme in all {
        let t = hajek_wate(&EstimationInput::hajek(d, &half, scheme)).unwrap();
        if (t - reference).abs() > 1e-10 * reference.abs().max(1.0) {
            failures.push(format!("e=0.5 coincidence {}", scheme.label()));
        }
        let ws = compute_weights_raw(d.z(), &half.fitted, &scheme).unwrap();
        let ess = effective_sample_size(&ws, d.z(), true).unwrap();
        if (ess - d.n_treated() as f64).abs() > 1e-9 {
            failures.push(format!("constant-weight ESS {}", scheme.label()));
        }
    }

    // Trimming monotonicity: more aggressive thresholds keep no more rows.
    let mut last = usize::MAX;
    for a in [0.01, 0.05, 0.1, 0.15, 0.2, 0.3, 0.45] {
        let ws = compute_weights_raw(d.z(), &fit.fitted, &s_trim(a)).unwrap();
        if ws.n_used() > last {
            failures.push(format!("trimming monotonicity at {a}"));
        }
        last = ws.n_used();
    }

    // Decomposition identity on every superpopulation.
    for (model, gap, se) in decomp {
        if *gap > 3.0 * se {
            failures.push(format!("decomposition model {model}: gap {gap:.3e} > 3·{se:.3e}"));
        }
    }
    let t = true_estimands(&s, &[WeightScheme::Ate]).unwrap();
    if t.decomposition_gap > 3.0 * t.decomposition_mc_se {
        failures.push("decomposition on replicate sample".into());
    }

    // Seed determinism: identical configuration, identical bytes.
    let cfg = DgpConfig {
        model_id: 1,
        n: 300,
        reps: 6,
        superpop_n: 20_000,
        seed: 5,
        ..Default::default()
    };
    let truth = truth_for_config(&cfg).unwrap();
    let r1 = sim_report_csv(&run_replications(&cfg, &truth).unwrap()).unwrap();
    let r2 = sim_report_csv(&run_replications(&cfg, &truth).unwrap()).unwrap();
    if r1 != r2 {
        failures.push("seed determinism".into());
    }

    // The DR fit with full columns reproduces the replicate's estimate deterministically.
    let spec = NuisanceSpec::new(&MAIN_FULL_COLUMNS, &MAIN_FULL_COLUMNS, d.ncols()).unwrap();
    let or0 = psweight::glm::fit_linear(d, &spec, false).unwrap();
    let or1 = psweight::glm::fit_linear(d, &spec, true).unwrap();
    let input = EstimationInput {
        d,
        ps: &fit,
        or0: Some(&or0),
        or1: Some(&or1),
        scheme: WeightScheme::Ate,
        flavor: Flavor::DoublyRobust,
    };
    if estimate(&input).unwrap().to_bits() != estimate(&input).unwrap().to_bits() {
        failures.push("estimator determinism".into());
    }

    check(
        failures.is_empty(),
        if failures.is_empty() {
            "equivariance, weight scale, ESS bound, e=0.5 coincidence, trimming monotonicity, decomposition, determinism".into()
        } else {
            failures.join("; ")
        },
    )
}

fn main() {
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        println!(
            "{} [{id}] {name} ({secs:.1}s): {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((id, name, o, secs));
    };

    let mut decomp = Vec::new();
    run(1, "truth table", &mut || criterion_truths(&mut decomp));
    run(2, "toy table", &mut criterion_toy);
    let m3 = study(3, Effect::Constant, Scenario::B, 500);
    run(3, "model 3 headline", &mut || criterion_headline(&m3));
    let m1 = study(1, Effect::Constant, Scenario::A, 500);
    run(4, "instability contrast", &mut || criterion_instability(&m1));
    run(5, "effective sample size", &mut || criterion_ess(&m1));
    run(6, "sandwich correctness", &mut criterion_sandwich);
    run(7, "double robustness", &mut criterion_double_robustness);
    run(8, "invariants", &mut || criterion_invariants(&decomp));

    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
