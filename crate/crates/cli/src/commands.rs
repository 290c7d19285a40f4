use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::Serialize;
use thermsid::explorer::{
    explore, explore_sharded, validate_config, ConfigGrid, ExploreSummary, ParetoFront, Predictor,
};
use thermsid::features::{eq7_regressors, search_combos};
use thermsid::modelselect::{
    correlation_prune, cross_validate, fit_model, free_run, grid_search_order, randomized_regressor_search,
    resample, split_dev_test, split_ranges, subset_search, DevTrace, EvalMode, FitOptions, Scheme,
    MIN_PRUNE_RECORDS, SEARCH_ORDER,
};
use thermsid::persist::{load_model, load_spec, save_model, save_spec, sha256_file};
use thermsid::plant::{generate_trace, SimOptions};
use thermsid::seed::derive_seed;
use thermsid::sysid::{fit_percent, mse};
use thermsid::{Configuration, RegressorSpec, StateSpaceModel, Trace};

use crate::config::RunConfig;
use crate::manifest::{sibling, Manifest};

/// Bad command-line input (exit code 1), as opposed to data or model errors.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Runs `body` and writes the manifest whatever the outcome.
pub fn with_manifest(
    command: &str,
    out: &Path,
    cfg: &RunConfig,
    cfg_path: Option<&Path>,
    body: impl FnOnce(&mut Manifest) -> Result<()>,
) -> Result<()> {
    let mut manifest = Manifest::new(command);
    manifest.config(cfg_path, cfg.text.as_deref());
    manifest.seed("base", cfg.seed);
    let result = body(&mut manifest);
    let written = manifest.finish(out, &result);
    result?;
    let path = written?;
    info!("manifest written to {}", path.display());
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_trace(path: &Path, m: &mut Manifest) -> Result<Trace> {
    m.stage("load");
    m.input("trace", path)?;
    Trace::load(path).with_context(|| format!("loading trace {}", path.display()))
}

fn to_rate(trace: Trace, rate: f64, m: &mut Manifest) -> Result<Trace> {
    m.stage("resample");
    Ok(resample(&trace, rate)?)
}

fn resolve_spec(choice: &str, m: &mut Manifest) -> Result<RegressorSpec> {
    if choice == "eq7" {
        return Ok(eq7_regressors());
    }
    let path = Path::new(choice);
    m.input("regressors", path)?;
    load_spec(path).with_context(|| format!("loading regressor set {choice}"))
}

pub fn simulate(cfg: &RunConfig, out: &Path, m: &mut Manifest) -> Result<()> {
    if cfg.duration_s.is_nan() || cfg.duration_s <= 0.0 {
        bail!("simulation duration must be positive, got {} s", cfg.duration_s);
    }
    m.param("duration_s", cfg.duration_s);
    m.param("sample_rate_hz", cfg.record_rate_hz);
    m.seed("schedule", derive_seed(cfg.seed, "schedule"));
    m.seed("noise", derive_seed(cfg.seed, "noise"));
    m.stage("simulate");
    let trace = if cfg.record_rate_hz == thermsid::plant::RECORD_RATE_HZ {
        generate_trace(&cfg.plant, cfg.duration_s, cfg.seed)?.1
    } else {
        let schedule = thermsid::plant::random_schedule(cfg.duration_s, derive_seed(cfg.seed, "schedule"))?;
        let opts = SimOptions {
            sample_rate: cfg.record_rate_hz,
            ..SimOptions::default()
        };
        thermsid::plant::simulate_schedule_with(&schedule, &cfg.plant, &opts, derive_seed(cfg.seed, "noise"))?
    };
    m.stage("write");
    trace.save(out)?;
    m.output("trace", out)?;
    println!("wrote {} samples ({} s at {} Hz) to {}", trace.len(), cfg.duration_s, trace.sample_rate, out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainMetrics {
    order: usize,
    horizon: usize,
    m: usize,
    parameter_count: usize,
    stable: bool,
    spectral_radius: f64,
    sample_rate_hz: f64,
    dev_samples: usize,
    test_samples: usize,
    eval: String,
    test_mse: f64,
    test_mse_zero_state: f64,
    test_fit_percent: f64,
}

pub fn train(cfg: &RunConfig, trace_path: &Path, out: &Path, m: &mut Manifest) -> Result<()> {
    m.param("order", cfg.order);
    m.param("spec", &cfg.spec);
    m.param("eval", cfg.eval);
    m.param("sample_rate_hz", cfg.model_rate_hz);
    let spec = resolve_spec(&cfg.spec, m)?;
    let trace = to_rate(load_trace(trace_path, m)?, cfg.model_rate_hz, m)?;
    let (dev, test) = split_dev_test(&trace)?;
    m.stage("identify");
    let opts = FitOptions {
        eval: cfg.eval,
        ..FitOptions::new(cfg.order)
    };
    let model = fit_model(dev.trace(), &spec, &opts).context("identification on the development set")?;
    if !model.is_stable() {
        warn!("identified model is unstable (spectral radius {})", model.spectral_radius());
    }
    m.stage("evaluate");
    let (y_hat, discard) = free_run(&model, test.trace(), cfg.eval)?;
    let test_mse = mse(&y_hat, &test.trace().temp, discard)?;
    let zero = free_run(&model, test.trace(), EvalMode::ZeroState)?.0;
    let metrics = TrainMetrics {
        order: model.order(),
        horizon: model.horizon(),
        m: model.m(),
        parameter_count: model.parameter_count(),
        stable: model.is_stable(),
        spectral_radius: model.spectral_radius(),
        sample_rate_hz: cfg.model_rate_hz,
        dev_samples: dev.trace().len(),
        test_samples: test.trace().len(),
        eval: cfg.eval.to_string(),
        test_mse,
        test_mse_zero_state: mse(&zero, &test.trace().temp, 0)?,
        test_fit_percent: fit_percent(&y_hat[discard..], &test.trace().temp[discard..])?,
    };
    m.stage("write");
    save_model(&model, out)?;
    m.output("model", out)?;
    let metrics_path = sibling(out, "metrics.json");
    write_json(&metrics_path, &metrics)?;
    m.output("metrics", &metrics_path)?;
    println!(
        "order {} ({} parameters), spectral radius {:.6}, test MSE {:.6} °C² ({})",
        metrics.order, metrics.parameter_count, metrics.spectral_radius, test_mse, cfg.eval
    );
    Ok(())
}

fn dev_of(cfg: &RunConfig, trace_path: &Path, m: &mut Manifest) -> Result<DevTrace<f64>> {
    let trace = to_rate(load_trace(trace_path, m)?, cfg.model_rate_hz, m)?;
    Ok(split_dev_test(&trace)?.0)
}

pub fn crossval(cfg: &RunConfig, trace_path: &Path, out: &Path, m: &mut Manifest) -> Result<()> {
    m.param("scheme", cfg.scheme);
    m.param("order", cfg.order);
    m.param("spec", &cfg.spec);
    m.param("eval", cfg.eval);
    let spec = resolve_spec(&cfg.spec, m)?;
    let dev = dev_of(cfg, trace_path, m)?;
    let folds = cfg.scheme.folds(dev.trace().len(), cfg.model_rate_hz)?;
    m.stage("crossval");
    let opts = FitOptions {
        eval: cfg.eval,
        ..FitOptions::new(cfg.order)
    };
    let report = cross_validate(&dev, &folds, &spec, &opts)?;
    m.stage("write");
    let mut w = create(out)?;
    writeln!(w, "fold,train_start,train_end,val_start,val_end,orientation,mse")?;
    for (k, (f, e)) in folds.iter().zip(&report.fold_mse).enumerate() {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            k + 1,
            f.train_start,
            f.train_end,
            f.val_start,
            f.val_end,
            f.orientation,
            e
        )?;
    }
    writeln!(w, "average,,,,,,{}", report.average)?;
    w.flush()?;
    m.output("crossval", out)?;
    println!("{} folds ({}), average MSE {:.6} °C²", folds.len(), cfg.scheme, report.average);
    Ok(())
}

pub fn order_search(cfg: &RunConfig, trace_path: &Path, orders: &[usize], out: &Path, m: &mut Manifest) -> Result<()> {
    m.param("scheme", cfg.scheme);
    m.param("orders", &cfg.orders);
    m.param("spec", &cfg.spec);
    m.param("eval", cfg.eval);
    let spec = resolve_spec(&cfg.spec, m)?;
    let dev = dev_of(cfg, trace_path, m)?;
    let folds = cfg.scheme.folds(dev.trace().len(), cfg.model_rate_hz)?;
    m.stage("search");
    let base = FitOptions {
        eval: cfg.eval,
        ..FitOptions::new(1)
    };
    let search = grid_search_order(&dev, &folds, &spec, orders, &base)?;
    m.stage("write");
    let mut w = create(out)?;
    writeln!(w, "order,mean_mse")?;
    for (o, e) in &search.curve {
        writeln!(w, "{o},{e}")?;
    }
    w.flush()?;
    m.output("curve", out)?;
    m.param("best_order", search.best_order);
    println!("best order {} of {} searched ({})", search.best_order, orders.len(), cfg.scheme);
    Ok(())
}

pub fn regressor_search(
    cfg: &RunConfig,
    trace_path: &Path,
    order_override: Option<usize>,
    subsets: bool,
    spec_out: Option<PathBuf>,
    out: &Path,
    m: &mut Manifest,
) -> Result<()> {
    let seed = derive_seed(cfg.seed, "regressor-search");
    m.seed("regressor-search", seed);
    m.param("iterations", cfg.iterations);
    m.param("fold", cfg.fold);
    m.param("eval", cfg.eval);
    let dev = dev_of(cfg, trace_path, m)?;
    let folds = Scheme::OneHour.folds(dev.trace().len(), cfg.model_rate_hz)?;
    let fold = folds
        .get(cfg.fold)
        .ok_or_else(|| UsageError(format!("fold {} does not exist (1 h scheme has {})", cfg.fold, folds.len())))?;
    let pool = search_combos();
    m.stage("search");
    let records = randomized_regressor_search(&dev, fold, &pool, cfg.iterations as usize, seed, cfg.eval)?;
    m.stage("write");
    let mut w = create(out)?;
    writeln!(w, "iteration,combos,mse,error")?;
    for r in &records {
        let combos: Vec<String> = r.combos.iter().map(|c| c.to_string()).collect();
        match &r.outcome {
            Ok(e) => writeln!(w, "{},{},{},", r.iteration, combos.join(";"), e)?,
            Err(msg) => writeln!(w, "{},{},,\"{}\"", r.iteration, combos.join(";"), msg.replace('"', "'"))?,
        }
    }
    w.flush()?;
    m.output("records", out)?;
    let ok = records.iter().filter(|r| r.outcome.is_ok()).count();
    println!("{} iterations, {} succeeded", records.len(), ok);
    if ok < MIN_PRUNE_RECORDS {
        warn!("only {ok} successful iterations; pruning needs {MIN_PRUNE_RECORDS}, skipped");
        return Ok(());
    }
    m.stage("prune");
    let pruned = correlation_prune(&records, &pool)?;
    let corr_path = sibling(out, "correlations.csv");
    let mut w = create(&corr_path)?;
    writeln!(w, "combo,correlation,retained")?;
    for (c, r) in &pruned.correlations {
        let r_text = r.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{c},{r_text},{}", pruned.retained.contains(c))?;
    }
    w.flush()?;
    m.output("correlations", &corr_path)?;
    let spec = RegressorSpec::from_combos(&pruned.retained, true)?;
    let spec_path = spec_out.unwrap_or_else(|| sibling(out, "pruned.json"));
    save_spec(&spec, &spec_path)?;
    m.output("pruned-regressors", &spec_path)?;
    let kept: Vec<String> = pruned.retained.iter().map(|c| c.to_string()).collect();
    println!("retained {} of {} combos: {}", kept.len(), pool.len(), kept.join(", "));
    if subsets {
        m.stage("subsets");
        let opts = FitOptions {
            eval: cfg.eval,
            ..FitOptions::new(order_override.unwrap_or(SEARCH_ORDER))
        };
        let results = subset_search(&dev, &folds, &pruned.retained, &opts)?;
        let path = sibling(out, "subsets.csv");
        let mut w = create(&path)?;
        writeln!(w, "combos,mean_mse")?;
        for (combos, e) in &results {
            let names: Vec<String> = combos.iter().map(|c| c.to_string()).collect();
            writeln!(w, "{},{e}", names.join(";"))?;
        }
        w.flush()?;
        m.output("subsets", &path)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    #[serde(flatten)]
    summary: &'a ExploreSummary,
    model_sha256: String,
    pareto_points: usize,
}

pub fn explore_cmd(
    cfg: &RunConfig,
    model_path: &Path,
    grid: &ConfigGrid,
    out: &Path,
    m: &mut Manifest,
) -> Result<()> {
    m.param("grid", grid);
    m.param("threshold_c", cfg.threshold_c);
    m.param("shards", cfg.shards);
    m.stage("load");
    m.input("model", model_path)?;
    let model: StateSpaceModel = load_model(model_path)?;
    let predictor = Predictor::new(&model).context("model cannot be used for steady-state prediction")?;
    m.stage("sweep");
    let dest = out.display().to_string();
    let w = create(out)?;
    let (summary, front) = if cfg.shards <= 1 {
        let mut front = ParetoFront::new();
        let s = explore(&predictor, grid, cfg.threshold_c, w, &dest, |r| front.insert(r))?;
        (s, front)
    } else {
        let scratch = sibling(out, "shards");
        std::fs::create_dir_all(&scratch)?;
        let r = explore_sharded(&predictor, grid, cfg.threshold_c, cfg.shards, &scratch, w, &dest);
        std::fs::remove_dir_all(&scratch).ok();
        r?
    };
    m.output("results", out)?;
    m.stage("report");
    let front = front.into_vec();
    let pareto_path = sibling(out, "pareto.csv");
    let mut w = create(&pareto_path)?;
    writeln!(w, "{}", thermsid::explorer::EXPLORE_HEADER)?;
    for r in &front {
        write!(w, "{},{}", r.config.f_big, r.config.f_little)?;
        for u in r.config.util {
            write!(w, ",{u:.4}")?;
        }
        writeln!(w, ",{:.6},{:.4},{},{:.6}", r.predicted_c, r.perf_proxy_ghz, r.feasible, r.margin_c)?;
    }
    w.flush()?;
    m.output("pareto", &pareto_path)?;
    let summary_path = sibling(out, "summary.json");
    write_json(
        &summary_path,
        &SummaryFile {
            summary: &summary,
            model_sha256: sha256_file(model_path)?,
            pareto_points: front.len(),
        },
    )?;
    m.output("summary", &summary_path)?;
    println!(
        "{} configurations: {} feasible, {} infeasible at {} °C; {:.2} s total, {:.3e} s per configuration ({:.0}x faster than a {} s measurement)",
        summary.config_count,
        summary.feasible,
        summary.infeasible,
        cfg.threshold_c,
        summary.wall_time_s,
        summary.mean_time_per_config_s,
        summary.speedup_vs_baseline,
        summary.baseline_s_per_config
    );
    Ok(())
}

pub fn validate(cfg: &RunConfig, model_path: &Path, config: &Configuration, out: Option<&Path>, m: &mut Manifest) -> Result<()> {
    m.input("model", model_path)?;
    let model: StateSpaceModel = load_model(model_path)?;
    let predictor = Predictor::new(&model)?;
    let result = validate_config(&predictor, config, cfg.threshold_c)?;
    let text = serde_json::to_string_pretty(&result)?;
    println!("{text}");
    eprintln!(
        "{}: predicted {:.3} °C, margin {:.3} °C",
        if result.feasible { "feasible" } else { "infeasible" },
        result.predicted_c,
        result.margin_c
    );
    if let Some(out) = out {
        std::fs::write(out, text + "\n")?;
        m.output("result", out)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Segment {
    All,
    Dev,
    Test,
}

#[derive(Serialize)]
struct PredictMetrics {
    segment: String,
    samples: usize,
    scored_samples: usize,
    eval: String,
    mse: f64,
}

pub fn predict(
    cfg: &RunConfig,
    model_path: &Path,
    trace_path: &Path,
    segment: Segment,
    out: &Path,
    m: &mut Manifest,
) -> Result<()> {
    m.param("segment", format!("{segment:?}").to_lowercase());
    m.param("eval", cfg.eval);
    m.input("model", model_path)?;
    let model: StateSpaceModel = load_model(model_path)?;
    let rate = model.sample_rate();
    let trace = to_rate(load_trace(trace_path, m)?, rate, m)?;
    let data = match segment {
        Segment::All => trace,
        Segment::Dev => trace.slice(split_ranges(trace.len())?.0),
        Segment::Test => trace.slice(split_ranges(trace.len())?.1),
    };
    m.stage("simulate");
    let (y_hat, discard) = free_run(&model, &data, cfg.eval)?;
    let err = mse(&y_hat, &data.temp, discard)?;
    m.stage("write");
    let mut w = create(out)?;
    writeln!(w, "t_s,measured_c,predicted_c,scored")?;
    for (k, ((t, measured), predicted)) in data.t.iter().zip(&data.temp).zip(&y_hat).enumerate() {
        writeln!(w, "{t},{measured},{predicted},{}", k >= discard)?;
    }
    w.flush()?;
    m.output("predictions", out)?;
    let metrics_path = sibling(out, "metrics.json");
    write_json(
        &metrics_path,
        &PredictMetrics {
            segment: format!("{segment:?}").to_lowercase(),
            samples: data.len(),
            scored_samples: data.len() - discard,
            eval: cfg.eval.to_string(),
            mse: err,
        },
    )?;
    m.output("metrics", &metrics_path)?;
    println!("free-run MSE {err:.6} °C² over {} samples ({})", data.len() - discard, cfg.eval);
    Ok(())
}
