//! End-to-end runs of the `tfm` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use threshold_factor::panel::{self, LoadOptions};
use threshold_factor::screening;
use threshold_factor::simulate;
use threshold_factor::threshold::FitConfig;

fn tfm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfm"))
        .args(args)
        .env_remove("TFM_THREADS")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Simulated panel written by the binary itself; returns the panel file.
fn simulated(dir: &Path, example: &str, n: &str) -> PathBuf {
    let out = dir.join(format!("sim{example}"));
    let o = tfm(&[
        "simulate",
        "--example",
        example,
        "--n",
        n,
        "--p",
        "12",
        "--seed",
        "3",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("panel.csv")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

/// Data rows of a rendered table, skipping the `#` metadata and the header.
fn table_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn fit_reports_grid_threshold_and_orthonormal_loadings() {
    let dir = tempfile::tempdir().unwrap();
    let panel = simulated(dir.path(), "1", "300");
    let out = dir.path().join("fit");
    let o = tfm(&[
        "fit",
        p(&panel),
        "--header",
        "--z",
        "z",
        "--k",
        "1",
        "--signals",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(&out.join("fit_report.json"));
    assert_eq!(report["k_hat"], 1);
    let r_hat = report["r_hat"].as_f64().unwrap();
    let grid: Vec<f64> = table_rows(&out.join("profile.csv"))
        .iter()
        .map(|r| r[0].parse().unwrap())
        .collect();
    assert!(grid.contains(&r_hat));
    for key in ["q1", "q2"] {
        let rows: Vec<f64> = report[key]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| r[0].as_f64().unwrap())
            .collect();
        assert_eq!(rows.len(), 12);
        let norm: f64 = rows.iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-10, "{key} norm {norm}");
    }
    assert_eq!(report["config_digest"].as_str().unwrap().len(), 64);
    for f in ["signals.csv", "factors.csv", "regimes.csv", "eigen_ratios.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn eta_flag_sets_the_search_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let panel = simulated(dir.path(), "1", "300");
    let out = dir.path().join("fit");
    let o = tfm(&[
        "fit",
        p(&panel),
        "--header",
        "--z",
        "z",
        "--eta",
        "0.10",
        "0.90",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(&out.join("fit_report.json"));
    let opts = LoadOptions {
        has_header: true,
        z_column: Some("z".into()),
        ..LoadOptions::default()
    };
    let (_, z) = panel::load_panel(&panel, &opts).unwrap();
    let z = z.unwrap();
    assert_eq!(
        report["eta_bounds"][0].as_f64().unwrap(),
        z.quantile(0.1).unwrap()
    );
    assert_eq!(
        report["eta_bounds"][1].as_f64().unwrap(),
        z.quantile(0.9).unwrap()
    );
    assert_eq!(report["settings"]["eta"][0], 0.1);
}

#[test]
fn missing_column_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let panel = simulated(dir.path(), "1", "100");
    let out = dir.path().join("never");
    let o = tfm(&[
        "fit",
        p(&panel),
        "--header",
        "--z",
        "no_such_column",
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_column"), "{}", stderr(&o));
    assert!(!out.exists(), "failed run left output behind");
}

#[test]
fn invalid_settings_are_reported_together() {
    let dir = tempfile::tempdir().unwrap();
    let panel = simulated(dir.path(), "1", "100");
    let o = tfm(&[
        "fit",
        p(&panel),
        "--header",
        "--z",
        "z",
        "--eta",
        "0.9",
        "0.1",
        "--h0",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("eta") && msg.contains("h0"), "{msg}");
}

#[test]
fn empty_grid_exits_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let panel = simulated(dir.path(), "1", "100");
    let o = tfm(&[
        "fit",
        p(&panel),
        "--header",
        "--z",
        "z",
        "--eta",
        "0.5",
        "0.500001",
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn zero_panel_exits_with_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("zeros.csv");
    let mut text = String::new();
    for t in 0..60 {
        text.push_str(&format!("0,0,0,0,{}\n", (t * 37 % 60) as f64 / 10.0));
    }
    std::fs::write(&path, text).unwrap();
    let o = tfm(&[
        "fit",
        p(&path),
        "--z",
        "col5",
        "--k",
        "1",
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn config_file_supplies_defaults_and_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let panel = simulated(dir.path(), "1", "300");
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("fit");
    std::fs::write(&cfg, format!("k = 1\nh0 = 2\nout = {:?}\n", p(&out))).unwrap();
    let o = tfm(&["fit", p(&panel), "--header", "--z", "z", "--config", p(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(&out.join("fit_report.json"));
    assert_eq!(report["settings"]["h0"], 2);
    assert_eq!(report["k_hat"], 1);

    std::fs::write(&cfg, "kk = 1\n").unwrap();
    let o = tfm(&["fit", p(&panel), "--header", "--z", "z", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn single_candidate_gives_rank_one_report() {
    let dir = tempfile::tempdir().unwrap();
    let panel = simulated(dir.path(), "2", "300");
    let out = dir.path().join("screen");
    let o = tfm(&[
        "screen",
        p(&panel),
        "--header",
        "--candidates",
        "z",
        "--k",
        "3",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = table_rows(&out.join("screening.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "1");
    assert_eq!(rows[0][2], "z");
    assert!(!out.join("comparison.csv").exists());
}

#[test]
fn screening_without_k_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let panel = simulated(dir.path(), "2", "200");
    let o = tfm(&["screen", p(&panel), "--header", "--candidates", "z,csd:1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--k"));
}

#[test]
fn compare_writes_the_held_out_criterion() {
    let dir = tempfile::tempdir().unwrap();
    let panel = simulated(dir.path(), "2", "300");
    let out = dir.path().join("screen");
    let o = tfm(&[
        "screen",
        p(&panel),
        "--header",
        "--candidates",
        "z,lag:z:1,csd:1..2",
        "--k",
        "3",
        "--compare",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = table_rows(&out.join("comparison.csv"));
    assert_eq!(rows.len(), 4);

    let opts = LoadOptions {
        has_header: true,
        z_column: Some("z".into()),
        ..LoadOptions::default()
    };
    let (y, z) = panel::load_panel(&panel, &opts).unwrap();
    let fit = FitConfig {
        k: Some(3),
        ..FitConfig::default()
    };
    let want = screening::model_compare_e(&y, &z.unwrap(), y.n() / 2, &fit).unwrap();
    let row = rows.iter().find(|r| r[1] == "z").expect("z compared");
    assert_eq!(row[2].parse::<f64>().unwrap(), want);
    let report = read_json(&out.join("screen_report.json"));
    assert_eq!(report["t0"], y.n() / 2);
    assert!(report["selected"].is_string());
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn simulate_from_spec_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let spec = simulate::example3(1, 150, 10, 1).unwrap();
    let spec_path = dir.path().join("design.json");
    std::fs::write(&spec_path, serde_json::to_vec(&spec).unwrap()).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = tfm(&[
            "simulate",
            "--spec",
            p(&spec_path),
            "--seed",
            "7",
            "--out",
            p(out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (fa, fb) = (dir_contents(&a), dir_contents(&b));
    assert_eq!(fa.len(), 3);
    assert_eq!(fa, fb);
    let report = read_json(&a.join("simulate_report.json"));
    assert_eq!(report["spec"]["seed"], 7);
}

#[test]
fn simulate_accepts_toml_designs() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("design.toml");
    std::fs::write(
        &spec_path,
        r#"p = 8
n = 120
factor_ar = [{ coef = 0.5, innovation_sd = 1.0 }]
strengths = [0.0, 0.0]
loading_scheme = { kind = "independent_uniform" }
threshold_process = { kind = "iid_normal" }
r0 = 0.0
seed = 5
"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = tfm(&["simulate", "--spec", p(&spec_path), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(out.join("panel.csv"))
            .unwrap()
            .lines()
            .count(),
        121
    );
}

#[test]
fn replicate_quick_emits_example_one_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rep");
    let o = tfm(&["replicate", "1", "--quick", "--reps", "4", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let names: Vec<String> = dir_contents(&out).into_iter().map(|(n, _)| n).collect();
    assert_eq!(
        names,
        [
            "table1_freq_below.csv",
            "table2_abs_err.csv",
            "table3_d_err_below.csv",
            "table4_d_err_above.csv"
        ]
    );
    let text = std::fs::read_to_string(out.join("table1_freq_below.csv")).unwrap();
    assert!(text.contains("# n_rep: 4"));
    assert!(text.contains("# spec_digest: "));
}

#[test]
fn replicate_four_emits_distance_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rep");
    let o = tfm(&["replicate", "4", "--quick", "--reps", "3", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let names: Vec<String> = dir_contents(&out).into_iter().map(|(n, _)| n).collect();
    assert!(names.contains(&"table11_d_between.csv".to_string()), "{names:?}");
}

#[test]
fn unknown_example_is_an_input_error() {
    let o = tfm(&["replicate", "9", "--quick"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_thread_count_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_tfm"))
        .args(["replicate", "1", "--quick"])
        .env("TFM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
