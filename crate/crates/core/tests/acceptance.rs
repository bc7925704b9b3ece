//! Acceptance suite: one line per criterion, tolerances pinned below.
//!
//! Runs as a plain binary (`harness = false`). Criteria listed in
//! `EXPECTED_FAILURES` are reported as `FAIL (expected)`; the process exits
//! nonzero when any other criterion fails or an expected failure passes.
//! Trend steps in criterion 9 must exceed 2 combined standard errors.
//! `FLUCTLAB_ACCEPT_REPLICAS` overrides the replica count of criterion 9.

use std::time::Instant;

use fluctlab::harness::{
    check_lemma1, check_remark6iii, corollary24_suite, fit_loglog_slope, mc_time_avg_square, oracle_time_avg_square,
    replacement_point, rhs_lemma1, rhs_symmetric, rhs_time_independent, ring_size_for, scan_key_result,
    significantly_greater, ExperimentConfig, GridPoint, LhsSource, ObservableChoice, ScanConfig, DEFAULT_L_MACRO,
};
use fluctlab::io::{rerun, run_command, Command, Suite};
use fluctlab::lattice::{eval_observable, sample_bernoulli_half, WalshIndex};
use fluctlab::mollifier::{
    build_v_g, evaluate_f_n, riemann_defect, riemann_defect_bound, FluctuationBuilder, MollifierSpec, TestFamily,
    TestFunctionSpec,
};
use fluctlab::resolvent::kv_divergence_scan;
use fluctlab::stats::replica_rng;
use fluctlab::walsh::{a_plus, a_plus_star, config_generator_matrix, generator_walsh_matrix, walsh_transform_matrix};
use fluctlab::{DynamicsParams, ObservableSpec, TimeProfile, WalshVector};
use num_rational::Rational64;

const EXPECTED_FAILURES: &[&str] = &["5b"];

const OPERATOR_TOL: f64 = 1e-12;
const RESOLVENT_TOL: f64 = 1e-10;
const MC_SE_FACTOR: f64 = 3.0;
const MC_REL_SE: f64 = 0.02;
const KV_RATIO: f64 = 1.3;
const GRADIENT_SPREAD: f64 = 1.2;
const SPLIT_TOL: f64 = 1e-7;
const SLOPE_I1: f64 = -0.9;
const SLOPE_I2: f64 = 0.9;

struct Line {
    id: &'static str,
    pass: bool,
    detail: String,
    secs: f64,
}

fn timed(id: &'static str, budget: f64, f: impl FnOnce() -> (bool, String)) -> Line {
    let t = Instant::now();
    let (pass, detail) = f();
    let secs = t.elapsed().as_secs_f64();
    let within = secs <= budget;
    Line {
        id,
        pass: pass && within,
        detail: if within {
            detail
        } else {
            format!("{detail}; runtime {secs:.1}s over budget {budget:.0}s")
        },
        secs,
    }
}

fn config(m: usize, eps: f64, gt: f64, replicas: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        eps,
        gamma_tilde: gt,
        horizon: 1.0,
        beta: 1.0,
        m: Some(m),
        n: None,
        replicas,
        seed,
        observable: ObservableChoice::default(),
        profile: TimeProfile::Constant,
        test_function: TestFamily::default(),
        l_macro: DEFAULT_L_MACRO,
        scan: ScanConfig::default(),
    }
}

fn max_abs_diff(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

fn criterion_1() -> (bool, String) {
    let mut worst: f64 = 0.0;
    for m in [4, 6] {
        let w = walsh_transform_matrix(m).unwrap();
        for (eps, gt) in [(0.25, 1.0), (1.0, 1.0), (0.5, 0.3)] {
            let p = DynamicsParams::new(eps, gt).unwrap();
            let q = config_generator_matrix(m, &p).unwrap();
            let l = w.transpose() * &q * &w;
            let ls = w.transpose() * q.transpose() * &w;
            worst = worst
                .max(max_abs_diff(&l, &generator_walsh_matrix(m, &p, false).unwrap()))
                .max(max_abs_diff(&ls, &generator_walsh_matrix(m, &p, true).unwrap()));
        }
    }
    let mut pairs = 0usize;
    let mut adjoint_ok = true;
    for m in [4usize, 6, 8] {
        let basis: Vec<WalshIndex> = (0..1u64 << m)
            .map(|s| WalshIndex::from_mask(s, m))
            .filter(|i| i.degree() <= 3)
            .collect();
        let vecs: Vec<WalshVector<Rational64>> = basis
            .iter()
            .map(|i| WalshVector::basis(i.clone(), m).unwrap())
            .collect();
        let ups: Vec<WalshVector<Rational64>> = vecs.iter().map(a_plus).collect();
        let downs: Vec<WalshVector<Rational64>> = vecs.iter().map(a_plus_star).collect();
        for (u, au) in ups.iter().enumerate() {
            for (v, bv) in downs.iter().enumerate() {
                adjoint_ok &= au.inner(&vecs[v]) == vecs[u].inner(bv);
                pairs += 1;
            }
        }
    }
    (
        worst <= OPERATOR_TOL && adjoint_ok,
        format!("max conjugation error {worst:.2e} (tol {OPERATOR_TOL:.0e}); adjointness exact on {pairs} basis pairs: {adjoint_ok}"),
    )
}

fn criterion_2() -> (bool, String) {
    let rows = corollary24_suite(6, &[0.5, 1.0], &[0.25, 0.0625], &[0.1, 1.0, 10.0], 100, 2024).unwrap();
    let cases: usize = rows.iter().map(|r| r.vectors).sum();
    let bad: usize = rows.iter().map(|r| r.violations).sum();
    let excess = rows.iter().map(|r| r.max_excess).fold(f64::NEG_INFINITY, f64::max);
    (
        bad == 0 && cases == 1200 && excess <= RESOLVENT_TOL,
        format!("{bad} violations in {cases} cases; largest uᵀ(α-L)⁻¹u - uᵀ(α-S)⁻¹u = {excess:.3e}"),
    )
}

fn criterion_3() -> (bool, String) {
    let cfg = config(8, 0.5, 1.0, 100_000, 31);
    let v = cfg.observable().unwrap();
    let exact = oracle_time_avg_square(&v, &cfg.params().unwrap(), 1.0, &TimeProfile::Constant).unwrap();
    let est = mc_time_avg_square(&v, &cfg, 1).unwrap().estimate(0);
    let rel = est.se / est.mean;
    (
        est.within(exact, MC_SE_FACTOR) && rel < MC_REL_SE,
        format!(
            "MC {:.6e} ± {:.2e} vs oracle {exact:.6e}: {:.2} s.e. apart, s.e./mean {:.3}%",
            est.mean,
            est.se,
            (est.mean - exact).abs() / est.se,
            100.0 * rel
        ),
    )
}

fn criterion_4() -> (bool, String) {
    let mut ok = true;
    let mut notes = Vec::new();
    let mut note = |label: String, pass: bool| {
        ok &= pass;
        notes.push(format!("{label}:{}", if pass { "ok" } else { "FAIL" }));
    };
    let small: [(usize, ObservableChoice); 3] = [
        (4, ObservableChoice::PairGradient { scale: 1.0 }),
        (6, ObservableChoice::VSharp { scale: 1.0 }),
        (8, ObservableChoice::VSharp { scale: 1.0 }),
    ];
    for (m, obs) in small {
        for profile in [TimeProfile::Constant, TimeProfile::Exponential { lambda: 1.0 }] {
            let mut cfg = config(m, 0.5, 1.0, 10_000, 40 + m as u64);
            cfg.observable = obs.clone();
            cfg.profile = profile;
            let mc = check_lemma1(&cfg, LhsSource::MonteCarlo, 1).unwrap();
            let or = check_lemma1(&cfg, LhsSource::Oracle, 1).unwrap();
            note(
                format!("space-time M={m} λ={} ratio={:.3}", profile.lambda(), mc.lhs / mc.rhs),
                mc.pass && or.pass,
            );
        }
        let mut cfg = config(m, 0.5, 1.0, 10_000, 50 + m as u64);
        cfg.observable = obs.clone();
        let v = cfg.observable().unwrap();
        let p = cfg.params().unwrap();
        let a = rhs_time_independent(&v, &p, 1.0, 1.0).unwrap();
        let b = rhs_lemma1(&v, &p, 1.0, 1.0, &TimeProfile::Constant).unwrap();
        let lhs = oracle_time_avg_square(&v, &p, 1.0, &TimeProfile::Constant).unwrap();
        note(format!("time-independent M={m}"), (a - b).abs() <= 1e-10 * b && lhs <= a);
        let r6 = check_remark6iii(&cfg, 1).unwrap();
        let sym = rhs_symmetric(&v, 0.5, 1.0, 1.0).unwrap();
        note(
            format!("symmetric M={m} ratio={:.3}", r6.lhs / r6.rhs),
            r6.pass && a <= sym * (1.0 + 1e-10),
        );
    }
    let mut prod = config(512, 1.0 / 16.0, 1.0, 2000, 77);
    prod.observable = ObservableChoice::VG;
    let r = check_remark6iii(&prod, 1).unwrap();
    note(
        format!("symmetric production lhs={:.4e}±{:.1e} rhs={:.4e}", r.lhs, r.lhs_se, r.rhs),
        r.pass,
    );
    (ok, notes.join("; "))
}

fn criterion_5() -> (Line, Line) {
    let t = Instant::now();
    let ms = [32, 64, 128, 256];
    let sharp = kv_divergence_scan(ObservableSpec::v_sharp, &ms).unwrap();
    let grad = kv_divergence_scan(ObservableSpec::pair_gradient, &ms).unwrap();
    let sv: Vec<f64> = sharp.iter().map(|r| r.value).collect();
    let gv: Vec<f64> = grad.iter().map(|r| r.value).collect();
    let ratios: Vec<f64> = sv.windows(2).map(|w| w[1] / w[0]).collect();
    let increasing = ratios.iter().all(|&r| r > 1.0);
    let spread = gv.iter().cloned().fold(f64::MIN, f64::max) / gv.iter().cloned().fold(f64::MAX, f64::min);
    let secs = t.elapsed().as_secs_f64();
    let fmt = |xs: &[f64]| xs.iter().map(|x| format!("{x:.5}")).collect::<Vec<_>>().join(", ");
    (
        Line {
            id: "5a",
            pass: increasing && spread <= GRADIENT_SPREAD && secs <= 300.0,
            detail: format!(
                "V_# form over M=32..256: [{}] strictly increasing: {increasing}; gradient form [{}] spread {spread:.4} (≤ {GRADIENT_SPREAD})",
                fmt(&sv),
                fmt(&gv)
            ),
            secs,
        },
        Line {
            id: "5b",
            pass: ratios.iter().all(|&r| r >= KV_RATIO),
            detail: format!("per-doubling ratios [{}], required ≥ {KV_RATIO}", fmt(&ratios)),
            secs: 0.0,
        },
    )
}

fn criterion_6() -> (bool, String) {
    let g = TestFunctionSpec::new(TestFamily::default()).unwrap();
    let mut worst: f64 = 0.0;
    for (k, (eps, n)) in [(1.0 / 32.0, 4u32), (1.0 / 64.0, 8), (1.0 / 64.0, 16)]
        .into_iter()
        .enumerate()
    {
        let m = ring_size_for(eps, DEFAULT_L_MACRO);
        let d = MollifierSpec::new(n).unwrap();
        let b = FluctuationBuilder::new(&g, eps, &d, m).unwrap();
        let vs: Vec<ObservableSpec> = (1..=4).map(|i| b.build(i).unwrap()).collect();
        let vg = build_v_g(&g, eps, m).unwrap();
        let mut rng = replica_rng(606, k as u64);
        for _ in 0..100 {
            let s = sample_bernoulli_half(m, &mut rng).unwrap();
            let lhs = evaluate_f_n(&s, eps, &d, &g).unwrap() - eval_observable(&s, &vg).unwrap();
            let rhs: f64 = vs.iter().map(|v| eval_observable(&s, v).unwrap()).sum();
            worst = worst.max((lhs - rhs).abs());
        }
    }
    (
        worst <= SPLIT_TOL,
        format!("max |F_N - V_G - Σ V^(H,i)| = {worst:.3e} over 300 states (tol {SPLIT_TOL:.0e})"),
    )
}

fn criterion_7() -> (bool, String) {
    let mut worst_ratio: f64 = 0.0;
    for (eps, n) in [(1.0 / 32.0, 4u32), (1.0 / 64.0, 8), (1.0 / 64.0, 16)] {
        let d = MollifierSpec::new(n).unwrap();
        let bound = riemann_defect_bound(eps, &d);
        for k in 0..1000 {
            let u = -1.0 + 2.0 * k as f64 / 999.0;
            worst_ratio = worst_ratio.max(riemann_defect(eps, &d, u).abs() / bound);
        }
    }
    (
        worst_ratio <= 1.0,
        format!("max defect / (ε²N²‖d''‖∞) = {worst_ratio:.3e} on 3×1000 points"),
    )
}

fn criterion_8() -> (bool, String) {
    let g = TestFunctionSpec::new(TestFamily::default()).unwrap();
    let ns = [4u32, 8, 16, 32];
    let eps64 = 1.0 / 64.0;
    let grid_n: Vec<(f64, u32)> = ns.iter().map(|&n| (eps64, n)).collect();
    let epss = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
    let grid_e: Vec<(f64, u32)> = epss.iter().map(|&e| (e, 8)).collect();
    let r1: Vec<f64> = scan_key_result(&g, &grid_n, 1, 1.0, DEFAULT_L_MACRO, 1)
        .unwrap()
        .iter()
        .map(|r| r.value)
        .collect();
    let r2: Vec<f64> = scan_key_result(&g, &grid_e, 2, 1.0, DEFAULT_L_MACRO, 1)
        .unwrap()
        .iter()
        .map(|r| r.value)
        .collect();
    let r3: Vec<f64> = scan_key_result(&g, &grid_n, 3, 1.0, DEFAULT_L_MACRO, 1)
        .unwrap()
        .iter()
        .map(|r| r.value)
        .collect();
    let nf: Vec<f64> = ns.iter().map(|&n| f64::from(n)).collect();
    let s1 = fit_loglog_slope(&nf, &r1);
    let s2 = fit_loglog_slope(&epss, &r2);
    let dec2 = r2.windows(2).all(|w| w[1] < w[0]);
    let dec3 = r3.windows(2).all(|w| w[1] < w[0]);
    (
        s1 <= SLOPE_I1 && s2 >= SLOPE_I2 && dec2 && dec3,
        format!(
            "i=1 slope in N {s1:.3} (≤ {SLOPE_I1}); i=2 slope in ε {s2:.3} (≥ {SLOPE_I2}), decreasing {dec2}; i=3 values {:?} decreasing {dec3}",
            r3.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>()
        ),
    )
}

fn criterion_9(replicas: usize) -> (bool, String) {
    let g = TestFunctionSpec::new(TestFamily::default()).unwrap();
    let cfg = config(4, 0.125, 1.0, replicas, 909);
    let pts = [(16u32, 1.0 / 8.0), (16, 1.0 / 32.0), (16, 1.0 / 64.0), (4, 1.0 / 64.0)];
    let rows: Vec<_> = pts
        .iter()
        .enumerate()
        .map(|(k, &(n, eps))| replacement_point(&g, n, eps, &cfg, 900 + k as u64, 1).unwrap())
        .collect();
    let sig = |a: usize, b: usize| {
        significantly_greater(
            rows[a].statistic,
            rows[a].statistic_se,
            rows[b].statistic,
            rows[b].statistic_se,
        )
    };
    let trend_eps = sig(0, 1) && sig(1, 2);
    let trend_n = sig(3, 2);
    let consistent = rows.iter().all(|r| r.cauchy_schwarz_holds() && r.bounds_hold());
    let cells: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "N={} ε=1/{}: {:.4e}±{:.1e}",
                r.n,
                (1.0 / r.eps).round(),
                r.statistic,
                r.statistic_se
            )
        })
        .collect();
    (
        trend_eps && trend_n && consistent,
        format!(
            "{replicas} replicas; {}; decreasing in ε: {trend_eps}; N=4 > N=16: {trend_n}; bounds consistent: {consistent}",
            cells.join(", ")
        ),
    )
}

fn criterion_10() -> (bool, String) {
    let base = tempfile::tempdir().unwrap();
    let mut runs: Vec<(Command, ExperimentConfig)> = Vec::new();
    let small = config(8, 0.5, 1.0, 500, 1010);
    runs.push((Command::Simulate, small.clone()));
    runs.push((Command::Verify(Suite::Lemma1), small.clone()));
    let mut c24 = config(6, 0.25, 1.0, 1, 1011);
    c24.scan.vectors = 10;
    runs.push((Command::Verify(Suite::Corollary24), c24));
    let mut kv = config(32, 0.5, 0.0, 1, 0);
    kv.scan.kv_ms = vec![32, 64];
    runs.push((Command::Resolvent, kv));
    let mut key = config(4, 1.0 / 32.0, 1.0, 1, 0);
    key.m = None;
    key.scan.grid = vec![GridPoint { eps: 1.0 / 32.0, n: 4 }, GridPoint { eps: 1.0 / 32.0, n: 8 }];
    runs.push((Command::Verify(Suite::Keyresult), key.clone()));
    let mut rep = key;
    rep.replicas = 8;
    rep.scan.grid.truncate(1);
    runs.push((Command::Verify(Suite::Replacement), rep));
    let mut identical = 0;
    let mut files = 0;
    let mut digests_match = true;
    for (k, (cmd, cfg)) in runs.iter().enumerate() {
        let a = base.path().join(format!("run{k}"));
        let b = base.path().join(format!("rerun{k}"));
        let first = run_command(*cmd, cfg, &a, 1).unwrap();
        let again = rerun(&first.manifest, &b, 2).unwrap();
        files += first.manifest.outputs.len();
        for o in &first.manifest.outputs {
            if std::fs::read(a.join(&o.file)).unwrap() == std::fs::read(b.join(&o.file)).unwrap() {
                identical += 1;
            }
        }
        digests_match &= again.identical;
    }
    (
        identical == files && digests_match,
        format!("{identical}/{files} files byte-identical across {} commands rerun from manifests with a different worker count; manifest digests match: {digests_match}", runs.len()),
    )
}

fn main() {
    let replicas_9: usize = std::env::var("FLUCTLAB_ACCEPT_REPLICAS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(1000);
    let mut lines = vec![
        timed("1", 30.0, criterion_1),
        timed("2", 60.0, criterion_2),
        timed("3", 600.0, criterion_3),
        timed("4", 1800.0, criterion_4),
    ];
    let (a, b) = criterion_5();
    lines.push(a);
    lines.push(b);
    lines.push(timed("6", 120.0, criterion_6));
    lines.push(timed("7", 60.0, criterion_7));
    lines.push(timed("8", 900.0, criterion_8));
    lines.push(timed("9", 3600.0, || criterion_9(replicas_9)));
    lines.push(timed("10", f64::INFINITY, criterion_10));

    let mut unexpected = 0;
    for l in &lines {
        let expected = EXPECTED_FAILURES.contains(&l.id);
        let status = match (l.pass, expected) {
            (true, false) => "PASS",
            (false, true) => "FAIL (expected)",
            (false, false) => "FAIL",
            (true, true) => "PASS (unexpected)",
        };
        if l.pass == expected {
            unexpected += 1;
        }
        println!("criterion {:>2}: {status:<17} [{:7.1}s] {}", l.id, l.secs, l.detail);
    }
    if unexpected > 0 {
        eprintln!("{unexpected} criteria did not match their expected outcome");
        std::process::exit(1);
    }
}
