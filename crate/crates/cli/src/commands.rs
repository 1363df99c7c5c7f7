use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use graphcp::data::{
    generate_synthetic, load_csv_dataset, load_dataset, load_graph, save_csv_dataset, save_dataset, GraphKind,
};
use graphcp::graph::{shrinkage_bound_check, spectral_summary};
use graphcp::harness::{reports_to_csv, run_experiment_detailed, run_grid, EvaluationReport};
use graphcp::models::load_external_predictions;
use graphcp::{
    Error, ExperimentConfig, GraphFilter, GraphTimeSeriesDataset, ModeSelection, PredictorKind, QuantileKind,
    SyntheticSpec,
};
use serde::Serialize;

use crate::args::{
    ConvertArgs, ConvertDirection, ExperimentArgs, GenerateArgs, GraphArg, GridArgs, ModeArg, PredictorArg,
    QuantileArg, RunArgs, VerifyArgs,
};
use crate::error::{config, CliError, CliResult};

fn read_config_file(path: &Path) -> CliResult<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| config(format!("cannot read --config {}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|ext| ext == "json");
    if is_json {
        serde_json::from_str(&text).map_err(|e| config(format!("--config {}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| config(format!("--config {}: {e}", path.display())))
    }
}

/// Config file values overlaid with explicit flags, then validated with
/// messages naming the offending flag.
pub fn resolve_config(args: &ExperimentArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => read_config_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = args.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = args.window {
        cfg.window = v;
    }
    if let Some(v) = args.tau {
        cfg.tau = v;
    }
    if let Some(v) = args.horizon {
        cfg.horizon = v;
        cfg.predictor.horizon = v;
    }
    if let Some(v) = args.mode {
        cfg.mode = match v {
            ModeArg::GraphAware => ModeSelection::GraphAware,
            ModeArg::GraphAgnostic => ModeSelection::GraphAgnostic,
            ModeArg::Both => ModeSelection::Both,
        };
    }
    if let Some(v) = args.runs {
        cfg.num_runs = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.refit_interval {
        cfg.refit_interval = v;
    }
    if let Some(v) = args.predictor {
        cfg.predictor.kind = match v {
            PredictorArg::Persistence => PredictorKind::Persistence,
            PredictorArg::GraphAr => PredictorKind::GraphAr,
            PredictorArg::External => PredictorKind::External,
        };
    }
    if let Some(v) = args.ensemble_size {
        cfg.ensemble_size = v;
    }
    if let Some(v) = args.lags {
        cfg.predictor.lags = v;
    }
    if let Some(v) = args.quantile {
        cfg.quantile = match v {
            QuantileArg::Forest => QuantileKind::Forest,
            QuantileArg::Empirical => QuantileKind::Empirical,
        };
    }
    if let Some(v) = args.trees {
        cfg.forest.num_trees = v;
    }
    if let Some(v) = args.depth {
        cfg.forest.max_depth = v;
    }
    if let Some(v) = args.min_leaf {
        cfg.forest.min_leaf = v;
    }
    if let Some(v) = args.train_fraction {
        cfg.split.train_fraction = v;
    }
    if args.normalize {
        cfg.normalize = true;
    }
    check_flags(&cfg)?;
    if cfg.predictor.kind == PredictorKind::External && args.predictions.is_none() {
        return Err(config("--predictor external requires --predictions"));
    }
    cfg.validate().map_err(|e| config(e.to_string()))?;
    Ok(cfg)
}

fn check_flags(cfg: &ExperimentConfig) -> CliResult<()> {
    let fail = |flag: &str, why: String| Err(config(format!("invalid value for {flag}: {why}")));
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return fail("--alpha", format!("must lie in (0, 1), got {}", cfg.alpha));
    }
    if cfg.window == 0 {
        return fail("--window", "must be at least 1".into());
    }
    if !(0.0..=1.0).contains(&cfg.tau) {
        return fail("--tau", format!("must lie in [0, 1], got {}", cfg.tau));
    }
    if cfg.horizon == 0 {
        return fail("--horizon", "must be at least 1".into());
    }
    if cfg.num_runs == 0 {
        return fail("--runs", "must be at least 1".into());
    }
    if cfg.refit_interval == 0 {
        return fail("--refit-interval", "must be at least 1".into());
    }
    if cfg.ensemble_size == 0 {
        return fail("--ensemble-size", "must be at least 1".into());
    }
    if !(cfg.split.train_fraction > 0.0 && cfg.split.train_fraction < 1.0) {
        return fail(
            "--train-fraction",
            format!("must lie in (0, 1), got {}", cfg.split.train_fraction),
        );
    }
    Ok(())
}

fn load_input(args: &ExperimentArgs) -> CliResult<GraphTimeSeriesDataset> {
    let path = &args.dataset;
    let is_csv = path.extension().is_some_and(|ext| ext == "csv");
    let loaded = if is_csv {
        let edges = args
            .edges
            .as_ref()
            .ok_or_else(|| config("--edges is required when --dataset is a CSV file"))?;
        let name = path.file_stem().map_or("dataset".into(), |s| s.to_string_lossy().into_owned());
        load_csv_dataset(path, edges, name)
    } else {
        load_dataset(path)
    };
    loaded.map_err(|e| match e {
        Error::Io { .. } => config(format!("--dataset: {e}")),
        other => other.into(),
    })
}

fn output_dir(args: &ExperimentArgs, command: &str) -> PathBuf {
    args.out.clone().unwrap_or_else(|| {
        let stem = args
            .dataset
            .file_stem()
            .map_or("dataset".into(), |s| s.to_string_lossy().into_owned());
        args.out_root.join(format!("{stem}-{command}"))
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn print_summary(report: &EvaluationReport) {
    for mode in &report.modes {
        for h in &mode.horizons {
            println!(
                "{:<15} horizon {:>2}: coverage {:.4} +/- {:.4}, log-volume {:.3}",
                mode.mode.as_str(),
                h.horizon,
                h.coverage.mean,
                h.coverage.std,
                h.log_volume.mean
            );
        }
    }
    for r in &report.volume_ratios {
        println!(
            "volume ratio horizon {:>2}: {:.4} ({} of {} runs below one)",
            r.horizon,
            r.ratio.mean,
            r.runs_below_one,
            r.per_run.len()
        );
    }
}

pub fn run(args: RunArgs) -> CliResult<()> {
    let cfg = resolve_config(&args.experiment)?;
    let ds = load_input(&args.experiment)?;
    let trace = match &args.experiment.predictions {
        Some(path) if cfg.predictor.kind == PredictorKind::External => Some(load_external_predictions(path, &ds)?),
        _ => None,
    };
    let out = run_experiment_detailed(&ds, &cfg, trace.as_ref(), args.emit_regions)?;
    let dir = output_dir(&args.experiment, "run");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join("config.json"), &cfg)?;
    write_json(&dir.join("report.json"), &out.report)?;
    let csv = reports_to_csv(std::slice::from_ref(&out.report))?;
    fs::write(dir.join("report.csv"), csv).context("writing report.csv")?;
    if args.emit_regions {
        let path = dir.join("regions.jsonl");
        let mut file = std::io::BufWriter::new(fs::File::create(&path).context("creating regions.jsonl")?);
        for line in &out.regions {
            serde_json::to_writer(&mut file, line).map_err(anyhow::Error::from)?;
            file.write_all(b"\n").context("writing regions.jsonl")?;
        }
        file.flush().context("writing regions.jsonl")?;
    }
    print_summary(&out.report);
    println!("wrote {}", dir.display());
    Ok(())
}

#[derive(Serialize)]
#[serde(untagged)]
enum GridEntry<'a> {
    Report(&'a EvaluationReport),
    Failed { config: &'a ExperimentConfig, error: String },
}

pub fn grid(args: GridArgs) -> CliResult<()> {
    let base = resolve_config(&args.experiment)?;
    let ds = load_input(&args.experiment)?;
    let alphas = if args.alphas.is_empty() { vec![base.alpha] } else { args.alphas.clone() };
    let windows = if args.windows.is_empty() { vec![base.window] } else { args.windows.clone() };
    let horizons = if args.horizons.is_empty() { vec![base.horizon] } else { args.horizons.clone() };
    let taus = if args.taus.is_empty() { vec![base.tau] } else { args.taus.clone() };
    let mut configs = Vec::new();
    for &alpha in &alphas {
        for &window in &windows {
            for &horizon in &horizons {
                for &tau in &taus {
                    let mut cfg = ExperimentConfig {
                        alpha,
                        window,
                        horizon,
                        tau,
                        ..base.clone()
                    };
                    cfg.predictor.horizon = horizon;
                    check_flags(&cfg)?;
                    configs.push(cfg);
                }
            }
        }
    }
    if base.predictor.kind == PredictorKind::External {
        return Err(config("grid does not support --predictor external"));
    }
    let results = run_grid(&ds, &configs)?;
    let dir = output_dir(&args.experiment, "grid");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut entries = Vec::new();
    let mut reports = Vec::new();
    let mut failures = 0;
    for (cfg, res) in configs.iter().zip(&results) {
        match res {
            Ok(rep) => {
                entries.push(GridEntry::Report(rep));
                reports.push(rep.clone());
            }
            Err(e) => {
                failures += 1;
                eprintln!("config alpha={} window={} horizon={} tau={} failed: {e}", cfg.alpha, cfg.window, cfg.horizon, cfg.tau);
                entries.push(GridEntry::Failed {
                    config: cfg,
                    error: e.to_string(),
                });
            }
        }
    }
    write_json(&dir.join("config.json"), &base)?;
    write_json(&dir.join("grid.json"), &entries)?;
    fs::write(dir.join("report.csv"), reports_to_csv(&reports)?).context("writing report.csv")?;
    for rep in &reports {
        println!(
            "alpha={} window={} horizon={} tau={}",
            rep.config.alpha, rep.config.window, rep.config.horizon, rep.config.tau
        );
        print_summary(rep);
    }
    println!("wrote {}", dir.display());
    if failures > 0 {
        return Err(CliError::Runtime(anyhow::anyhow!("{failures} of {} configs failed", configs.len())));
    }
    Ok(())
}

pub fn generate(args: GenerateArgs) -> CliResult<()> {
    if args.nodes == 0 {
        return Err(config("invalid value for --nodes: must be at least 1"));
    }
    let spec = SyntheticSpec {
        num_nodes: args.nodes,
        num_steps: args.steps,
        graph: match args.graph {
            GraphArg::Ring => GraphKind::Ring,
            GraphArg::Grid => GraphKind::Grid,
            GraphArg::Er => GraphKind::ErdosRenyi { p: args.edge_prob },
        },
        ar_coef: args.ar_coef,
        latent_scale: args.latent_scale,
        noise_scale: args.noise_scale,
        beta: args.beta,
        seed: args.seed,
        ..SyntheticSpec::default()
    };
    let ds = generate_synthetic(&spec)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    save_dataset(&ds, &args.out)?;
    let check = &ds.metadata["homophily_check"];
    match (check.get("connected_gap"), check.get("disconnected_gap")) {
        (Some(c), Some(d)) => println!(
            "homophily check: connected gap {}, disconnected gap {}, homophilic {}",
            c, d, check["homophilic"]
        ),
        _ => println!("homophily check: {check}"),
    }
    if let Some(w) = ds.metadata.get("warnings") {
        println!("warnings: {w}");
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct ShrinkageRow {
    tau: f64,
    log_det_filter: Option<f64>,
    log_bound: f64,
    slack: Option<f64>,
    status: &'static str,
}

pub fn verify_shrinkage(args: VerifyArgs) -> CliResult<()> {
    let graph = load_graph(&args.graph).map_err(|e| match e {
        Error::Io { .. } => config(format!("--graph: {e}")),
        other => other.into(),
    })?;
    if let Some(bad) = args.tau.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(config(format!("invalid value for --tau: must lie in [0, 1], got {bad}")));
    }
    let eta: f64 = graph.random_walk_spectrum().iter().map(|l| 1.0 - l).sum();
    println!("eta = {eta:.6}");
    println!("{:>8} {:>12} {:>12} {:>12}  status", "tau", "log det H", "-eta*tau", "slack");
    let mut rows = Vec::new();
    for &tau in &args.tau {
        let filter = GraphFilter::new(&graph, tau)?;
        let row = match spectral_summary(&graph, &filter) {
            Ok(s) => {
                let c = shrinkage_bound_check(&s, tau);
                // adding 0.0 turns -0.0 into 0.0 for the tau = 0 row
                ShrinkageRow {
                    tau,
                    log_det_filter: Some(c.log_det_filter + 0.0),
                    log_bound: c.log_bound + 0.0,
                    slack: Some(c.slack + 0.0),
                    status: if c.passed { "ok" } else { "violated" },
                }
            }
            Err(Error::FilterSingular { .. }) => ShrinkageRow {
                tau,
                log_det_filter: None,
                log_bound: -eta * tau + 0.0,
                slack: None,
                status: "singular",
            },
            Err(e) => return Err(e.into()),
        };
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!(
            "{:>8} {:>12} {:>12.3} {:>12}  {}",
            tau,
            fmt(row.log_det_filter),
            row.log_bound,
            fmt(row.slack),
            row.status
        );
        rows.push(row);
    }
    if let Some(out) = &args.out {
        write_json(out, &rows)?;
    }
    if rows.iter().any(|r| r.status == "singular") {
        return Err(CliError::FilterSingular);
    }
    if rows.iter().any(|r| r.status == "violated") {
        return Err(CliError::Runtime(anyhow::anyhow!("shrinkage bound violated")));
    }
    Ok(())
}

pub fn convert(args: ConvertArgs) -> CliResult<()> {
    match args.direction {
        ConvertDirection::JsonToCsv { input, out_dir } => {
            let ds = load_dataset(&input).map_err(|e| match e {
                Error::Io { .. } => config(format!("--input: {e}")),
                other => other.into(),
            })?;
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            save_csv_dataset(&ds, out_dir.join("signals.csv"), out_dir.join("edges.csv"))?;
            println!("wrote {}", out_dir.display());
        }
        ConvertDirection::CsvToJson {
            signals,
            edges,
            name,
            out,
        } => {
            let ds = load_csv_dataset(&signals, &edges, name).map_err(|e| match e {
                Error::Io { .. } => config(e.to_string()),
                other => other.into(),
            })?;
            save_dataset(&ds, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
