use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use threshold_factor::export::{self, fmt_exact, Table};
use threshold_factor::screening::{self, SearchConfig};
use threshold_factor::simulate::{self, DgpSpec, ReplicateOptions, Scale};
use threshold_factor::threshold;
use threshold_factor::{PanelSeries, Subspace, ThresholdSeries};

use crate::args::{FitArgs, ReplicateArgs, ScreenArgs, SimulateArgs};
use crate::config::{RunRecord, Settings};
use crate::error::{CliError, CliResult};
use crate::inputs;

const VERSION: &str = concat!("tfm ", env!("CARGO_PKG_VERSION"));

/// Files produced by a command, written only once everything succeeded.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Self {
        Self {
            dir,
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    fn table(&mut self, table: &Table, metadata: &[(String, String)]) -> CliResult<()> {
        let bytes = table.render(metadata, b',')?;
        self.add(format!("{}.csv", table.name), bytes);
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(value)
            .map_err(|e| CliError::Numerical(format!("cannot encode {name}: {e}")))?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    fn write(self) -> CliResult<Vec<PathBuf>> {
        std::fs::create_dir_all(&self.dir)
            .map_err(|e| CliError::Input(format!("cannot create {}: {e}", self.dir.display())))?;
        let mut written = Vec::with_capacity(self.files.len());
        for (name, bytes) in self.files {
            let path = self.dir.join(name);
            export::write_atomic(&path, &bytes)?;
            written.push(path);
        }
        Ok(written)
    }
}

fn report_header<T: Serialize>(record: &RunRecord<'_, T>) -> Value {
    json!({
        "command": record.command,
        "version": VERSION,
        "inputs": record.inputs,
        "settings": record.settings,
        "config_digest": simulate::digest_of(record),
    })
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(a), Value::Object(b)) = (&mut base, extra) {
        a.extend(b);
    }
    base
}

fn basis_rows(s: &Subspace) -> Vec<Vec<f64>> {
    s.basis.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

pub fn fit(args: &FitArgs) -> CliResult<()> {
    let settings = Settings::for_fit(&args.tuning)?;
    let config = settings.fit_config()?;
    let source = inputs::parse_z(&args.z)?;
    let (panel, mut zs) = inputs::load(&args.input, std::slice::from_ref(&source))?;
    let z = zs.remove(0);
    let fit = threshold::fit_threshold_factor_model(&panel, &z, &config)?;

    let record = RunRecord {
        command: "fit",
        inputs: vec![args.input.panel.display().to_string(), source.label()],
        settings: &config,
    };
    let d = &fit.diagnostics;
    let factor_count = fit.factor_count.as_ref().map(|f| {
        json!({
            "k_hat": f.k_hat,
            "per_regime": [f.per_regime.0, f.per_regime.1],
            "chosen_regime": f.chosen_regime,
            "ratio_profiles": [f.ratio_profiles.0, f.ratio_profiles.1],
            "top_eigenvalues": [f.top_eigenvalues.0, f.top_eigenvalues.1],
        })
    });
    let report = merge(
        report_header(&record),
        json!({
            "n": panel.n(),
            "p": panel.p(),
            "threshold_variable": z.label(),
            "k_hat": fit.k_hat,
            "k_fixed": config.k.is_some(),
            "r_hat": fit.r_hat,
            "eta_bounds": [fit.eta.0, fit.eta.1],
            "objective_min": fit.profile.min_value(),
            "grid_size": fit.profile.grid.len(),
            "space_distance": d.space_distance,
            "regime_counts": [d.regime_counts.0, d.regime_counts.1],
            "tail_counts": [d.tail_counts.0, d.tail_counts.1],
            "top_eigenvalues": [d.top_eigenvalues.0, d.top_eigenvalues.1],
            "factor_count": factor_count,
            "q1": basis_rows(&fit.q1),
            "q2": basis_rows(&fit.q2),
            "warnings": d.warnings,
        }),
    );

    let meta = vec![
        (
            "config_digest".to_string(),
            report["config_digest"].as_str().unwrap_or_default().to_string(),
        ),
        ("version".to_string(), VERSION.to_string()),
    ];
    let mut out = Outputs::new(settings.out_dir());
    out.json("fit_report.json", &report)?;
    let mut profile = Table::new(
        "profile",
        "objective G(r) over the threshold grid",
        vec!["r".into(), "g".into()],
    );
    for (r, g) in fit.profile.grid.iter().zip(&fit.profile.values) {
        profile.push(vec![fmt_exact(*r), fmt_exact(*g)]);
    }
    out.table(&profile, &meta)?;
    if let Some(f) = &fit.factor_count {
        let mut ratios = Table::new(
            "eigen_ratios",
            "lambda_{j+1} / lambda_j of the tail aggregates",
            vec!["j".into(), "regime1".into(), "regime2".into()],
        );
        for (j, (a, b)) in f.ratio_profiles.0.iter().zip(&f.ratio_profiles.1).enumerate() {
            ratios.push(vec![(j + 1).to_string(), fmt_exact(*a), fmt_exact(*b)]);
        }
        out.table(&ratios, &meta)?;
    }
    if args.signals {
        let rec = threshold::recover_signal_factors(&fit, &panel, &z)?;
        let index = panel.time_index();
        out.table(
            &export::matrix_table("signals", panel.series_labels(), index, &rec.s_hat),
            &meta,
        )?;
        let names: Vec<String> = (1..=fit.k_hat).map(|j| format!("factor{j}")).collect();
        out.table(
            &export::matrix_table("factors", &names, index, &rec.r_series),
            &meta,
        )?;
        let mut regimes = Table::new(
            "regimes",
            "regime at r_hat (0: threshold unavailable)",
            vec!["t".into(), "regime".into()],
        );
        for (t, r) in index.iter().zip(&rec.regime_of_t) {
            regimes.push(vec![t.to_string(), r.to_string()]);
        }
        out.table(&regimes, &meta)?;
    }
    for w in &d.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "k_hat = {}, r_hat = {}, D(Q1, Q2) = {:.4}",
        fit.k_hat, fit.r_hat, d.space_distance
    );
    print_written(&out.write()?);
    Ok(())
}

pub fn screen(args: &ScreenArgs) -> CliResult<()> {
    let settings = Settings::for_screen(args)?;
    let search = settings.search_config()?;
    let sources = inputs::parse_candidates(&args.candidates)?;
    let (panel, candidates) = inputs::load(&args.input, &sources)?;
    let k = search.fit.k.expect("validated");

    let (report, comparisons, selected) = if args.compare {
        let outcome = screening::search_threshold_variable(&panel, &candidates, &search)?;
        (outcome.report, Some(outcome.comparisons), Some(outcome.selected))
    } else {
        let labels = screening::classify_regimes(&panel, k, &search.classify)?;
        let top_m = search.top_m.unwrap_or(candidates.len());
        (
            screening::screen_candidates(&labels, &candidates, search.band, top_m)?,
            None,
            None,
        )
    };

    let record = RunRecord {
        command: "screen",
        inputs: std::iter::once(args.input.panel.display().to_string())
            .chain(sources.iter().map(|s| s.label()))
            .collect(),
        settings: &ScreenSettings {
            search: &search,
            compare: args.compare,
        },
    };
    let header = report_header(&record);
    let meta = vec![
        (
            "config_digest".to_string(),
            header["config_digest"].as_str().unwrap_or_default().to_string(),
        ),
        ("version".to_string(), VERSION.to_string()),
    ];
    let mut out = Outputs::new(settings.out_dir());

    let mut table = Table::new(
        "screening",
        "candidates by decreasing CUSUM statistic",
        ["rank", "index", "label", "q_value", "argmax_r", "retained"]
            .map(String::from)
            .to_vec(),
    );
    for e in &report.entries {
        table.push(vec![
            e.rank.to_string(),
            e.index.to_string(),
            e.label.clone(),
            fmt_exact(e.q_value),
            fmt_exact(e.argmax_r),
            (e.rank <= report.top_m).to_string(),
        ]);
    }
    out.table(&table, &meta)?;
    let mut extra = json!({
        "n": panel.n(),
        "p": panel.p(),
        "k": k,
        "ranking": report.entries.iter().map(|e| json!({
            "rank": e.rank, "label": e.label, "q_value": e.q_value, "argmax_r": e.argmax_r,
        })).collect::<Vec<_>>(),
    });
    if let (Some(comparisons), Some(selected)) = (&comparisons, selected) {
        let mut cmp = Table::new(
            "comparison",
            "held-out criterion E of the retained candidates",
            ["index", "label", "e_value", "error"].map(String::from).to_vec(),
        );
        for c in comparisons {
            cmp.push(vec![
                c.index.to_string(),
                c.label.clone(),
                c.e_value.map_or_else(|| "NA".to_string(), fmt_exact),
                c.error.clone().unwrap_or_default(),
            ]);
        }
        out.table(&cmp, &meta)?;
        extra["t0"] = json!(search.t0.unwrap_or(panel.n() / 2));
        extra["selected"] = json!(candidates[selected].label());
        extra["comparison"] = comparisons
            .iter()
            .map(|c| json!({ "label": c.label, "e_value": c.e_value, "error": c.error }))
            .collect();
        println!("selected {}", candidates[selected].label());
    }
    out.json("screen_report.json", &merge(header, extra))?;
    for e in report.retained() {
        println!("{:>3}  {:<24} Q = {}", e.rank, e.label, e.q_value);
    }
    print_written(&out.write()?);
    Ok(())
}

#[derive(Serialize)]
struct ScreenSettings<'a> {
    search: &'a SearchConfig,
    compare: bool,
}

fn read_spec(path: &Path) -> CliResult<DgpSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::Input(format!("invalid design {}: {e}", path.display())))
}

fn builtin_spec(args: &SimulateArgs, id: u8) -> CliResult<DgpSpec> {
    let (n, p, seed) = (args.n.unwrap_or(200), args.p.unwrap_or(20), 0);
    let setting = args.setting.unwrap_or(1);
    let spec = match id {
        1 => simulate::example1(setting, n, p, seed),
        2 => simulate::example2(setting, n, p, seed),
        3 => simulate::example3(setting, n, p, seed),
        4 => simulate::example4(args.d.unwrap_or(0.5), n, p, seed),
        other => {
            return Err(CliError::Input(format!(
                "example {other} is not one of 1, 2, 3, 4"
            )))
        }
    };
    Ok(spec?)
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let settings = Settings::for_simulate(&args.common, args.seed)?;
    let mut spec = match (&args.spec, args.example) {
        (Some(path), _) => read_spec(path)?,
        (None, Some(id)) => builtin_spec(args, id)?,
        (None, None) => {
            return Err(CliError::Input(
                "simulate needs --spec FILE or --example ID".into(),
            ))
        }
    };
    if let Some(seed) = settings.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let data = simulate::generate_dgp(&spec)?;

    let record = RunRecord {
        command: "simulate",
        inputs: args.spec.iter().map(|p| p.display().to_string()).collect(),
        settings: &spec,
    };
    let mut out = Outputs::new(settings.out_dir());
    out.add("panel.csv", panel_csv(&data.panel, &data.z));
    let truth = json!({
        "r0": data.truth.r0,
        "regime_of_t": data.truth.regime_of_t,
        "a1": data.truth.a1.row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>(),
        "a2": data.truth.a2.row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>(),
    });
    out.json("truth.json", &truth)?;
    out.json(
        "simulate_report.json",
        &merge(report_header(&record), json!({ "spec": spec })),
    )?;
    print_written(&out.write()?);
    Ok(())
}

/// Panel with a header `y1..yp,z`; unusable threshold values are left empty.
fn panel_csv(panel: &PanelSeries, z: &ThresholdSeries) -> Vec<u8> {
    let mut text = String::new();
    let mut header: Vec<String> = (1..=panel.p()).map(|q| format!("y{q}")).collect();
    header.push("z".into());
    text.push_str(&header.join(","));
    text.push('\n');
    for t in 0..panel.n() {
        for q in 0..panel.p() {
            text.push_str(&fmt_exact(panel.values()[(q, t)]));
            text.push(',');
        }
        if let Some(v) = z.get(t) {
            text.push_str(&fmt_exact(v));
        }
        text.push('\n');
    }
    text.into_bytes()
}

pub fn replicate(args: &ReplicateArgs) -> CliResult<()> {
    let settings = Settings::for_replicate(args)?;
    let mut opts = ReplicateOptions::new(if settings.quick.unwrap_or(false) {
        Scale::Quick
    } else {
        Scale::Full
    });
    if let Some(seed) = settings.seed {
        opts.seed = seed;
    }
    opts.n_rep = settings.replicate_reps()?;
    if !(1..=4).contains(&args.example) {
        return Err(CliError::Input(format!(
            "example {} is not one of 1, 2, 3, 4",
            args.example
        )));
    }
    let set = simulate::replicate_example_with(args.example, &opts)?;
    let mut out = Outputs::new(settings.out_dir());
    for t in &set.tables {
        out.table(t, &set.metadata)?;
    }
    for t in &set.tables {
        println!("{}: {}", t.name, t.caption);
    }
    print_written(&out.write()?);
    Ok(())
}
