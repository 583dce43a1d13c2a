//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
//! when any criterion fails. Monte Carlo criteria use fixed master seeds.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::Rng;

use threshold_factor::linalg;
use threshold_factor::moments;
use threshold_factor::screening::{self, RegimeLabels, SearchConfig};
use threshold_factor::simulate::{self, McSummary, PipelineConfig};
use threshold_factor::subspace::{self, Subspace};
use threshold_factor::threshold::{self, FitConfig};
use threshold_factor::RegimePartition;

const REPS: usize = 100;

type Check = (bool, String);

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn proptest_result(
    name: &str,
    res: Result<(), proptest::test_runner::TestError<impl std::fmt::Debug>>,
) -> Check {
    match res {
        Ok(()) => (true, format!("{name} ok")),
        Err(e) => (false, format!("{name}: {e}")),
    }
}

fn all(checks: Vec<Check>) -> Check {
    let pass = checks.iter().all(|c| c.0);
    let detail = checks.into_iter().map(|c| c.1).collect::<Vec<_>>().join("; ");
    (pass, detail)
}

fn fit_config(k: Option<usize>) -> FitConfig {
    FitConfig {
        k,
        ..FitConfig::default()
    }
}

fn mc(spec: simulate::DgpSpec, pipeline: PipelineConfig) -> McSummary {
    simulate::run_monte_carlo(&spec, REPS, &pipeline).expect("Monte Carlo run")
}

fn ex1_s1_n1000() -> &'static McSummary {
    static CELL: OnceLock<McSummary> = OnceLock::new();
    CELL.get_or_init(|| {
        mc(
            simulate::example1(1, 1000, 20, 0x000A_11CE_0004).unwrap(),
            PipelineConfig::with_k(Some(1)),
        )
    })
}

fn failures_note(s: &McSummary) -> String {
    if s.failures.is_empty() {
        String::new()
    } else {
        format!(" [{} failed replications]", s.failures.len())
    }
}

fn criterion_1() -> Check {
    let fit_props = proptest_result(
        "fit invariants",
        runner(48).run(
            &(any::<u64>(), 3usize..10, 30usize..120, 1usize..4),
            |(seed, p, n, k)| {
                let mut rng = common::rng(seed);
                let k = k.min(p - 1);
                let panel = common::random_panel(&mut rng, p, n);
                let z = common::random_z(&mut rng, n);
                let fit = threshold::fit_threshold_factor_model(&panel, &z, &fit_config(Some(k))).unwrap();
                for s in [&fit.q1, &fit.q2, &fit.b1_eta, &fit.b2_eta] {
                    prop_assert!(linalg::orthonormality_defect(&s.basis) <= 1e-10);
                }
                for m in [&fit.m_at_r_hat.0, &fit.m_at_r_hat.1] {
                    prop_assert!(linalg::asymmetry(&m.matrix) <= 1e-12);
                    let ev = m.matrix.clone().symmetric_eigenvalues();
                    prop_assert!(ev.min() >= -1e-12 * ev.max().max(0.0));
                }
                prop_assert!(fit.profile.values.iter().all(|&g| g >= 0.0));
                // G is unchanged when the complements are re-parameterized by orthogonal V.
                let v1 = common::random_orthogonal(&mut rng, p - k);
                let v2 = common::random_orthogonal(&mut rng, p - k);
                let (b1r, b2r) = (fit.b1_eta.rotated(&v1), fit.b2_eta.rotated(&v2));
                let pick = rng.random_range(0..fit.profile.grid.len());
                for r in [fit.r_hat, fit.profile.grid[pick]] {
                    let g = threshold::objective_g(&panel, &z, &fit.b1_eta, &fit.b2_eta, r, 1).unwrap();
                    let gr = threshold::objective_g(&panel, &z, &b1r, &b2r, r, 1).unwrap();
                    prop_assert!((g - gr).abs() <= 1e-10 * g.abs().max(1e-300), "{} vs {}", g, gr);
                }
                let rec = threshold::recover_signal_factors(&fit, &panel, &z).unwrap();
                for t in 0..n {
                    let (s, y) = (rec.s_hat.column(t).norm(), panel.values().column(t).norm());
                    prop_assert!(s <= y * (1.0 + 1e-12));
                }
                Ok(())
            },
        ),
    );
    let distance_props = proptest_result(
        "distance invariants",
        runner(128).run(
            &(any::<u64>(), 3usize..15, 1usize..4, 1usize..4),
            |(seed, p, k1, k2)| {
                let mut rng = common::rng(seed);
                let (k1, k2) = (k1.min(p - 1), k2.min(p - 1));
                let a = common::random_basis(&mut rng, p, k1);
                let b = common::random_basis(&mut rng, p, k2);
                let c = common::random_basis(&mut rng, p, k1);
                let d = |x: &Subspace, y: &Subspace| subspace::subspace_distance(x, y).unwrap();
                prop_assert!(d(&a, &a) <= 1e-12);
                let dab = d(&a, &b);
                prop_assert!((0.0..=1.0).contains(&dab));
                prop_assert!((dab - d(&b, &a)).abs() <= 1e-12);
                // Orthogonal invariance and basis-choice invariance.
                let u = common::random_orthogonal(&mut rng, p);
                let ua = Subspace::from_columns(&(&u * &a.basis)).unwrap();
                let ub = Subspace::from_columns(&(&u * &b.basis)).unwrap();
                prop_assert!((d(&ua, &ub) - dab).abs() <= 1e-10);
                let v = common::random_orthogonal(&mut rng, k1);
                prop_assert!((d(&a.rotated(&v), &b) - dab).abs() <= 1e-10);
                // Triangle inequality among equal-dimension spaces.
                if k1 == k2 {
                    prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
                }
                // Nested spaces.
                let first = Subspace::from_columns(&b.basis.columns(0, 1).into_owned()).unwrap();
                prop_assert!(d(&first, &b) <= 1e-12);
                Ok(())
            },
        ),
    );
    let cusum_props = proptest_result(
        "cusum invariants",
        runner(256).run(&(any::<u64>(), 10usize..200, any::<bool>()), |(seed, n, ties)| {
            let mut rng = common::rng(seed);
            let z = if ties {
                common::tied_z(&mut rng, n, 7)
            } else {
                common::random_z(&mut rng, n)
            };
            let labels: Vec<u8> = (0..n).map(|_| rng.random_range(1..=2)).collect();
            let lab = RegimeLabels::from_labels(labels).unwrap();
            let band = (0.1, 0.9);
            let Ok(base) = screening::cusum_q(&lab, &z, band) else {
                return Ok(());
            };
            prop_assert!(base.q_value >= 0.0 && base.q_value <= n as f64);
            prop_assert_eq!(screening::cusum_q(&lab.swapped(), &z, band).unwrap(), base);
            let ze = z.map(f64::exp, "exp").unwrap();
            let re = screening::cusum_q(&lab, &ze, band).unwrap();
            prop_assert_eq!(re.q_value, base.q_value);
            prop_assert_eq!(re.argmax_r, base.argmax_r.exp());
            let za = z.map(|v| 3.0 * v + 1.0, "affine").unwrap();
            let ra = screening::cusum_q(&lab, &za, band).unwrap();
            prop_assert_eq!(ra.q_value, base.q_value);
            prop_assert_eq!(ra.argmax_r, 3.0 * base.argmax_r + 1.0);
            Ok(())
        }),
    );
    all(vec![fit_props, distance_props, cusum_props])
}

fn criterion_2() -> Check {
    let (n, p) = (400, 20);
    let data = common::noiseless_on_grid(n, p, 0x000A_11CE_0002);
    let (panel, z, truth) = (&data.panel, &data.z, &data.truth);
    let (c1, c2) = (common::complement_of(&truth.a1), common::complement_of(&truth.a2));
    let eta = threshold::eta_bounds(z, (0.3, 0.7)).unwrap();
    let profile = threshold::estimate_threshold(panel, z, &c1, &c2, eta, 1).unwrap();
    let g_max = profile.values.iter().cloned().fold(0.0, f64::max);
    let g_r0 = threshold::objective_g(panel, z, &c1, &c2, truth.r0, 1).unwrap();
    let g_ok = g_r0 <= 1e-10 * g_max && profile.r_hat() == truth.r0;

    let fit = threshold::fit_threshold_factor_model(panel, z, &fit_config(Some(1))).unwrap();
    let a1 = Subspace::from_columns(&truth.a1).unwrap();
    let a2 = Subspace::from_columns(&truth.a2).unwrap();
    let d1 = subspace::subspace_distance(&fit.q1, &a1).unwrap();
    let d2 = subspace::subspace_distance(&fit.q2, &a2).unwrap();
    let d_ok = d1 <= 1e-8 && d2 <= 1e-8;

    let rec = threshold::recover_signal_factors(&fit, panel, z).unwrap();
    let s_err = (0..n)
        .map(|t| (rec.s_hat.column(t) - panel.values().column(t)).norm() / panel.values().column(t).norm())
        .fold(0.0, f64::max);
    let s_ok = s_err <= 1e-10;

    let t0 = n / 2;
    let e = screening::model_compare_e(panel, z, t0, &fit_config(Some(1))).unwrap();
    let scale: f64 = (t0..n).map(|t| panel.values().column(t).norm_squared()).sum();
    let e_ok = e <= 1e-8 * scale;
    (
        g_ok && d_ok && s_ok && e_ok,
        format!(
            "G(r0)/max G = {:.2e}, r_hat = r0: {}; D = ({d1:.2e}, {d2:.2e}); max rel |s - y| = {s_err:.2e}; E/sum|y|^2 = {:.2e}",
            g_r0 / g_max,
            profile.r_hat() == truth.r0,
            e / scale
        ),
    )
}

fn criterion_3() -> Check {
    let mut rng = common::rng(0x000A_11CE_0003);
    let mut cusum_mismatch = 0;
    for i in 0..50 {
        let n = rng.random_range(10..300);
        let z = if i % 2 == 0 {
            common::tied_z(&mut rng, n, 9)
        } else {
            common::random_z(&mut rng, n)
        };
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(1..=2)).collect();
        let lab = RegimeLabels::from_labels(labels).unwrap();
        let band = [(0.1, 0.9), (0.05, 0.95), (0.25, 0.6)][i % 3];
        let fast = screening::cusum_q(&lab, &z, band);
        let slow = screening::cusum_q_direct(&lab, &z, band);
        match (fast, slow) {
            (Ok(a), Ok(b)) if a == b => {}
            (Err(_), Err(_)) => {}
            _ => cusum_mismatch += 1,
        }
    }
    let mut g_worst: f64 = 0.0;
    for _ in 0..20 {
        let p = rng.random_range(4..16);
        let n = rng.random_range(60..400);
        let h0 = rng.random_range(1..4);
        let k = rng.random_range(1..=p / 2);
        let panel = common::random_panel(&mut rng, p, n);
        let z = common::random_z(&mut rng, n);
        let all = RegimePartition::all_in_one(n);
        let b1 =
            subspace::complement_space(&moments::build_m_matrix(&panel, &all, h0, 1).unwrap(), k).unwrap();
        let b2 = common::complement_of(&common::gaussian(&mut rng, p, k));
        let eta = threshold::eta_bounds(&z, (0.2, 0.8)).unwrap();
        let fast = threshold::estimate_threshold(&panel, &z, &b1, &b2, eta, h0).unwrap();
        let slow = threshold::estimate_threshold_reference(&panel, &z, &b1, &b2, eta, h0).unwrap();
        assert_eq!(fast.grid, slow.grid);
        for (a, b) in fast.values.iter().zip(&slow.values) {
            g_worst = g_worst.max((a - b).abs() / b.abs());
        }
    }
    let mut eig_worst: f64 = 0.0;
    for i in 0..30 {
        let p = rng.random_range(2..40);
        let rank = if i % 3 == 0 { rng.random_range(1..=p) } else { p };
        let g = common::gaussian(&mut rng, p, rank);
        let mut m = &g * g.transpose();
        linalg::symmetrize(&mut m);
        let k = rng.random_range(1..=p);
        let (vals, vecs) = linalg::top_eigenpairs(&m, k).unwrap();
        let norm = linalg::psd_spectral_norm(&m);
        for c in 0..k {
            let v = vecs.column(c);
            eig_worst = eig_worst.max((&m * v - v * vals[c]).norm() / norm);
        }
    }
    (
        cusum_mismatch == 0 && g_worst <= 1e-12 && eig_worst <= 1e-8,
        format!(
            "cusum mismatches {cusum_mismatch}/50; max rel G deviation {g_worst:.2e} (20 instances); max eigen residual / ||M|| {eig_worst:.2e}"
        ),
    )
}

fn criterion_4() -> Check {
    let s = ex1_s1_n1000();
    let m = s.aggregates.mean_abs_err.unwrap_or(f64::NAN);
    (
        (0.01..=0.04).contains(&m) && s.failures.is_empty(),
        format!(
            "mean |r_hat - r0| = {m:.4} (target [0.01, 0.04]){}",
            failures_note(s)
        ),
    )
}

fn freq_below(s: &McSummary) -> f64 {
    s.records
        .iter()
        .filter(|r| r.side == simulate::Side::Below)
        .count() as f64
        / s.n_rep as f64
}

fn criterion_5() -> Check {
    let s2 = mc(
        simulate::example1(2, 200, 20, 0x000A_11CE_0005).unwrap(),
        PipelineConfig::with_k(Some(1)),
    );
    let s1_small = mc(
        simulate::example1(1, 200, 20, 0x000A_11CE_0105).unwrap(),
        PipelineConfig::with_k(Some(1)),
    );
    let s1 = ex1_s1_n1000();
    let (f2, f1s, f1) = (freq_below(&s2), freq_below(&s1_small), freq_below(s1));
    (
        f2 < 0.5 && (0.35..=0.65).contains(&f1) && (0.35..=0.65).contains(&f1s),
        format!(
            "setting 2 n=200: freq(r_hat < r0) = {f2:.2} (< 0.5); setting 1 n=1000: {f1:.2}, n=200: {f1s:.2} (in [0.35, 0.65]){}",
            failures_note(&s2)
        ),
    )
}

fn criterion_6() -> Check {
    let s = ex1_s1_n1000();
    let (d1, d2) = s.aggregates.mean_d_err;
    let (d1, d2) = (d1.unwrap_or(f64::NAN), d2.unwrap_or(f64::NAN));
    let band = 0.01..=0.04;
    (
        band.contains(&d1) && band.contains(&d2),
        format!("mean D per regime = ({d1:.4}, {d2:.4}) (target [0.01, 0.04])"),
    )
}

fn criterion_7() -> Check {
    let mut checks = Vec::new();
    for (p, seed) in [(20, 0x000A_11CE_0007), (40, 0x000A_11CE_0107)] {
        let s = mc(
            simulate::example2(1, 1000, p, seed).unwrap(),
            PipelineConfig::with_k(None),
        );
        let hits = s.records.iter().filter(|r| r.k_est == Some(3)).count();
        let f = hits as f64 / s.n_rep as f64;
        checks.push((
            f >= 0.90,
            format!("p={p}: freq(k_hat = 3) = {f:.2} (>= 0.90){}", failures_note(&s)),
        ));
    }
    all(checks)
}

fn criterion_8() -> Check {
    let spec = simulate::example2(1, 1000, 20, 0x000A_11CE_0008).unwrap();
    let under = mc(spec.clone(), PipelineConfig::with_k(Some(2)))
        .aggregates
        .mean_abs_err
        .unwrap_or(f64::NAN);
    let over = mc(spec, PipelineConfig::with_k(Some(4)))
        .aggregates
        .mean_abs_err
        .unwrap_or(f64::NAN);
    (
        under > 0.3 && over < 0.05,
        format!("k=2: mean |r - r0| = {under:.3} (> 0.3); k=4: {over:.4} (< 0.05)"),
    )
}

fn criterion_9() -> Check {
    let pipeline = PipelineConfig {
        screening: Some(SearchConfig::default()),
        ..PipelineConfig::with_k(Some(3))
    };
    let s = mc(
        simulate::example2(1, 1000, 20, 0x000A_11CE_0009).unwrap(),
        pipeline,
    );
    let selected = s.records.iter().filter(|r| r.selected_true == Some(true)).count();
    let first_by_q = s.records.iter().filter(|r| r.true_screen_rank == Some(1)).count();
    (
        selected >= 95,
        format!(
            "true z_t selected in {selected}/{REPS} (>= 95); largest CUSUM statistic in {first_by_q}/{REPS}{}",
            failures_note(&s)
        ),
    )
}

fn criterion_10() -> Check {
    let mut checks = Vec::new();
    for (i, d) in [0.3, 0.7, 1.0].into_iter().enumerate() {
        let s = mc(
            simulate::example4(d, 1000, 20, 0x000A_11CE_0010 + i as u64).unwrap(),
            PipelineConfig::with_k(Some(1)),
        );
        let m = s.aggregates.mean_d_between.unwrap_or(f64::NAN);
        checks.push((
            (m - d).abs() <= 0.05,
            format!("d={d}: mean D(Q1, Q2) = {m:.3}{}", failures_note(&s)),
        ));
    }
    all(checks)
}

fn criterion_11() -> Check {
    let s2 = mc(
        simulate::example1(2, 1000, 100, 0x000A_11CE_0011).unwrap(),
        PipelineConfig::with_k(Some(1)),
    );
    let s3 = mc(
        simulate::example1(3, 1000, 100, 0x000A_11CE_0111).unwrap(),
        PipelineConfig::with_k(Some(1)),
    );
    let weak = s2.aggregates.mean_d_err.1.unwrap_or(f64::NAN);
    let (e1, e2) = s3.aggregates.mean_d_err;
    let (e1, e2) = (e1.unwrap_or(f64::NAN), e2.unwrap_or(f64::NAN));
    (
        weak < e1 && weak < e2,
        format!("setting 2 weak regime D = {weak:.3}; setting 3 D = ({e1:.3}, {e2:.3})"),
    )
}

type Criterion = (u8, &'static str, fn() -> Check);

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "invariant suite", criterion_1),
        (2, "noiseless exactness", criterion_2),
        (3, "oracle equivalence", criterion_3),
        (4, "example 1 setting 1 threshold error", criterion_4),
        (5, "example 1 side frequencies", criterion_5),
        (6, "example 1 setting 1 loading-space error", criterion_6),
        (7, "example 2 factor count", criterion_7),
        (8, "example 2 misspecified k", criterion_8),
        (9, "example 2 threshold-variable screening", criterion_9),
        (10, "example 4 distances between loading spaces", criterion_10),
        (11, "example 1 helping effect at p = 100", criterion_11),
    ];
    let mut failed = Vec::new();
    for (id, name, f) in criteria {
        let start = Instant::now();
        let (pass, detail) = match panic::catch_unwind(AssertUnwindSafe(f)) {
            Ok(c) => c,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        println!(
            "criterion {id:>2} {name}: {} | {detail} | {:.1}s",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        if !pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 11 criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
