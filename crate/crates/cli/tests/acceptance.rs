//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde_json::Value;
use thermsid::explorer::{pareto_front, ConfigGrid, ExplorationResult, Predictor};
use thermsid::linalg::spectral_radius;
use thermsid::modelselect::{blocked_folds_1h, blocked_folds_6h, Orientation};
use thermsid::persist::{load_model, sha256_file};
use thermsid::plant::{
    power, random_configuration, random_schedule, simulate_schedule, simulate_schedule_with, Schedule, SimOptions,
};
use thermsid::sysid::{fit_percent, parameter_count, N4sid};
use thermsid::{Configuration, PlantParams, StateSpaceModel, CORES};

struct Report {
    lines: Vec<String>,
    failed: usize,
}

/// Bypasses libtest output capture so the report shows up on passing runs too.
fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

impl Report {
    fn record(&mut self, n: u32, name: &str, pass: bool, detail: String) {
        let line = format!(
            "criterion {n:>2} {}  {name}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        emit(&line);
        self.failed += usize::from(!pass);
        self.lines.push(line);
    }
}

fn thermsid(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_thermsid"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "thermsid {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn sha(path: &Path) -> String {
    sha256_file(path).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_average(path: &Path) -> f64 {
    let text = std::fs::read_to_string(path).unwrap();
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("average,"));
    last.rsplit(',').next().unwrap().parse().unwrap()
}

fn crossval_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with("average"))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn criterion_1(r: &mut Report) {
    let count = ConfigGrid::default().config_count();
    r.record(1, "configuration count", count == 23_437_500, format!("5^8 * 10 * 6 = {count}"));
}

fn criterion_2(r: &mut Report, trained: &Value) {
    let (p32, p43) = (parameter_count(32, 34), parameter_count(43, 34));
    let reported = trained["parameter_count"].as_u64().unwrap_or(0);
    r.record(
        2,
        "parameter counts",
        p32 == 2144 && p43 == 3354 && reported == 2144,
        format!("order 32 -> {p32}, order 43 -> {p43}, trained order-32 model reports {reported}"),
    );
}

fn random_system(seed: u64) -> StateSpaceModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = |r, c| DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
    let a0: DMatrix<f64> = g(3, 3);
    let a = &a0 * (0.9 / spectral_radius(&a0));
    StateSpaceModel::new(a, g(3, 2), g(1, 3), DMatrix::zeros(3, 1), 0.0, 1.0).unwrap()
}

fn holdout_fit(truth: &StateSpaceModel, snr_db: Option<f64>) -> f64 {
    let (train, test) = (20_000, 5_000);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let u = DMatrix::from_fn(train + test, 2, |_, _| StandardNormal.sample(&mut rng));
    let y = truth.simulate(&u).unwrap();
    let measured: Vec<f64> = match snr_db {
        None => y.clone(),
        Some(db) => {
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            let power = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
            let noise = Normal::new(0.0, (power / 10f64.powf(db / 10.0)).sqrt()).unwrap();
            y.iter().map(|v| v + noise.sample(&mut rng)).collect()
        }
    };
    let model = N4sid::new(3)
        .identify(&u.rows(0, train).clone_owned(), &measured[..train])
        .unwrap();
    let u_test = u.rows(train, test).clone_owned();
    let x0 = model.estimate_initial_state(&u_test, &measured[train..], 20).unwrap();
    let y_hat = model.simulate_from(&u_test, &x0).unwrap();
    fit_percent(&y_hat[20..], &y[train + 20..]).unwrap()
}

fn criterion_3(r: &mut Report) {
    let start = Instant::now();
    let truth = random_system(2024);
    let clean = holdout_fit(&truth, None);
    let noisy = holdout_fit(&truth, Some(20.0));
    let secs = start.elapsed().as_secs_f64();
    r.record(
        3,
        "LTI oracle recovery",
        clean >= 98.0 && noisy >= 90.0 && secs <= 60.0,
        format!("held-out fit {clean:.3} % noise-free, {noisy:.3} % at 20 dB SNR, {secs:.2} s"),
    );
}

fn criterion_5(r: &mut Report, cv_1h: &Path, cv_6h: &Path) {
    let one = blocked_folds_1h(142_200, 5.0).unwrap();
    let six = blocked_folds_6h(142_200, 5.0).unwrap();
    let one_ok = one.iter().enumerate().all(|(k, f)| {
        f.train_start == 13_800 * k
            && f.train().len() == 14_400
            && f.val().len() == 3_600
            && f.val_start == f.train_end
            && f.orientation == Orientation::Normal
    });
    let offsets: Vec<usize> = six.iter().map(|f| f.train_start.min(f.val_start)).collect();
    let orient: Vec<Orientation> = six.iter().map(|f| f.orientation).collect();
    let six_ok = offsets == [0, 0, 34_200, 34_200]
        && orient == [Orientation::Normal, Orientation::Reversed, Orientation::Normal, Orientation::Reversed]
        && six.iter().all(|f| f.train().len() == 86_400 && f.val().len() == 21_600);
    // The CLI must have used the same geometry on the simulated run.
    let echo = |rows: Vec<Vec<String>>, folds: &[thermsid::modelselect::FoldSpec]| {
        rows.len() == folds.len()
            && rows.iter().zip(folds).all(|(row, f)| {
                row[1..6]
                    == [
                        f.train_start.to_string(),
                        f.train_end.to_string(),
                        f.val_start.to_string(),
                        f.val_end.to_string(),
                        f.orientation.to_string(),
                    ]
            })
    };
    let cli_ok = echo(crossval_rows(cv_1h), &one) && echo(crossval_rows(cv_6h), &six);
    r.record(
        5,
        "fold geometry",
        one_ok && six_ok && cli_ok,
        format!(
            "1 h stride {}, offsets {:?}; 6 h offsets {{0, 34200}} normal+reversed; CLI folds match: {cli_ok}",
            one[1].train_start,
            one.iter().map(|f| f.train_start).collect::<Vec<_>>()
        ),
    );
}

fn criterion_6(r: &mut Report, model_path: &Path) {
    let model: StateSpaceModel = load_model(model_path).unwrap();
    let predictor = Predictor::new(&model).unwrap();
    let plant = PlantParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pairs: Vec<(f64, f64)> = (0..1000)
        .map(|_| {
            let c = random_configuration(&mut rng);
            (predictor.predict(&c).unwrap(), plant.t_amb + plant.r_th * power(&c, &plant))
        })
        .collect();
    let within = pairs.iter().filter(|(p, o)| (p - o).abs() <= 1.0).count();
    let mut errs: Vec<f64> = pairs.iter().map(|(p, o)| (p - o).abs()).collect();
    errs.sort_by(f64::total_cmp);
    let mut detail = format!(
        "{within}/1000 within 1 °C (median {:.3}, p95 {:.3}, max {:.3} °C)",
        errs[500], errs[950], errs[999]
    );
    let hottest = pairs.iter().map(|p| p.1).fold(f64::MIN, f64::max);
    let mut oracle: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    oracle.sort_by(f64::total_cmp);
    let median = (oracle[500] * 10.0).round() / 10.0;
    let mut feas_ok = true;
    // 90 °C is the specified threshold; the plant peaks below it, so the
    // sample median repeats the check with both outcomes present.
    for threshold in [90.0, median] {
        let disagree: Vec<f64> = pairs
            .iter()
            .filter(|(p, o)| (*p <= threshold) != (*o <= threshold))
            .map(|(_, o)| *o)
            .collect();
        let bad = disagree.iter().filter(|o| (*o - threshold).abs() > 1.0).count();
        let infeasible = pairs.iter().filter(|(_, o)| *o > threshold).count();
        feas_ok &= bad == 0;
        write!(
            detail,
            "; at {threshold} °C: {infeasible} oracle-infeasible, {} disagreements, {bad} outside ±1 °C",
            disagree.len()
        )
        .unwrap();
    }
    write!(detail, "; hottest sampled oracle {hottest:.2} °C").unwrap();
    r.record(6, "explorer vs plant oracle", within >= 950 && feas_ok, detail);
}

fn criterion_7(r: &mut Report, summary: &Value) {
    let count = summary["config_count"].as_u64().unwrap();
    let wall = summary["wall_time_s"].as_f64().unwrap();
    let per = summary["mean_time_per_config_s"].as_f64().unwrap();
    let speedup = summary["speedup_vs_baseline"].as_f64().unwrap();
    let shards = summary["shards"].as_u64().unwrap();
    r.record(
        7,
        "exploration speed",
        count == 23_437_500 && shards == 1 && wall <= 120.0 && per * 1e3 <= 0.25 && speedup >= 400.0,
        format!(
            "{count} configurations in {wall:.1} s single-threaded, {per:.3e} s each ({:.0}x under 0.25 s), speedup {speedup:.3e}x vs 100 s",
            0.25 / per
        ),
    );
}

fn final_temp(config: Configuration, params: &PlantParams, taus: f64) -> f64 {
    let sched = Schedule::constant(config, taus * params.time_constant());
    *simulate_schedule(&sched, params, 0).unwrap().temp.last().unwrap()
}

fn criterion_8(r: &mut Report) {
    let quiet = PlantParams {
        noise_sigma: 0.0,
        ..PlantParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let configs: Vec<Configuration> = (0..100).map(|_| random_configuration(&mut rng)).collect();
    // After k time constants the residual is ΔT·e^-k; at 10 τ that is below
    // 1e-3 °C only for rises under ~22 °C, hotter configurations get 12 τ.
    let (mut checked10, mut worst10, mut worst12) = (0, 0.0f64, 0.0f64);
    for c in &configs {
        let ss = quiet.t_amb + quiet.r_th * power(c, &quiet);
        if (ss - quiet.t_amb) * (-10f64).exp() < 0.9e-3 {
            checked10 += 1;
            worst10 = worst10.max((final_temp(*c, &quiet, 10.0) - ss).abs());
        }
        worst12 = worst12.max((final_temp(*c, &quiet, 12.0) - ss).abs());
    }
    let steady_ok = checked10 > 0 && worst10 < 1e-3 && worst12 < 1e-3;

    let mut monotone = 0;
    for _ in 0..100 {
        let a = random_configuration(&mut rng);
        let b = random_configuration(&mut rng);
        let lo = Configuration::new(a.f_big, a.f_little, std::array::from_fn(|i| a.util[i].min(b.util[i])));
        let hi = Configuration::new(a.f_big, a.f_little, std::array::from_fn(|i| a.util[i].max(b.util[i])));
        if final_temp(hi, &quiet, 3.0) >= final_temp(lo, &quiet, 3.0) {
            monotone += 1;
        }
    }

    let hot = PlantParams {
        c_dyn_big: 6.0,
        ..quiet
    };
    let full = Configuration::new(1900, 1500, [1.0; CORES]);
    let mut segments = vec![(full, 600.0)];
    segments.extend(random_schedule(3600.0, 8).unwrap().segments);
    let opts = SimOptions {
        substeps: 4,
        ..SimOptions::default()
    };
    let tr = simulate_schedule_with(&Schedule { segments }, &hot, &opts, 0).unwrap();
    let peak = tr.temp.iter().copied().fold(f64::MIN, f64::max);
    let throttle_ok = peak <= hot.throttle_on + 0.5;

    r.record(
        8,
        "plant physics invariants",
        steady_ok && monotone == 100 && throttle_ok,
        format!(
            "steady state: max error {worst10:.2e} °C at 10 τ over {checked10} configs with ΔT·e^-10 < 0.9e-3, {worst12:.2e} °C at 12 τ over all 100; \
             monotone {monotone}/100 pairs; forced-hot peak {peak:.3} °C vs throttle {}",
            hot.throttle_on
        ),
    );
}

fn criterion_9(r: &mut Report, model_path: &Path) {
    let model: StateSpaceModel = load_model(model_path).unwrap();
    let predictor = Predictor::new(&model).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows: Vec<ExplorationResult> = (0..10_000)
        .map(|_| {
            let c = random_configuration(&mut rng);
            ExplorationResult::new(c, predictor.predict(&c).unwrap(), 80.0)
        })
        .collect();
    let front = pareto_front(&rows);
    let feasible: Vec<&ExplorationResult> = rows.iter().filter(|r| r.feasible).collect();
    let mut brute: Vec<ExplorationResult> = feasible
        .iter()
        .filter(|r| {
            !feasible.iter().any(|q| {
                let no_worse = q.perf_proxy_ghz >= r.perf_proxy_ghz && q.predicted_c <= r.predicted_c;
                let better = q.perf_proxy_ghz > r.perf_proxy_ghz || q.predicted_c < r.predicted_c;
                let tie_first = q.perf_proxy_ghz == r.perf_proxy_ghz
                    && q.predicted_c == r.predicted_c
                    && q.config < r.config;
                (no_worse && better) || tie_first
            })
        })
        .map(|r| **r)
        .collect();
    brute.sort_by(|a, b| a.perf_proxy_ghz.total_cmp(&b.perf_proxy_ghz));
    r.record(
        9,
        "Pareto front vs brute force",
        front == brute,
        format!(
            "10000 rows ({} feasible at 80 °C): streaming front {} points, brute force {} points, identical: {}",
            feasible.len(),
            front.len(),
            brute.len(),
            front == brute
        ),
    );
}

fn criterion_4(r: &mut Report, trained: &Value, cv: [(f64, f64); 2]) {
    let [(one, one_zero), (six, six_zero)] = cv;
    let test = trained["test_mse"].as_f64().unwrap();
    let test_zero = trained["test_mse_zero_state"].as_f64().unwrap();
    r.record(
        4,
        "synthetic pipeline",
        one <= 0.25 && test <= 0.25 && six <= one,
        format!(
            "estimated start state (50 samples): 1 h CV {one:.4}, test {test:.4}, 6 h CV {six:.4} °C²; \
             zero start state: 1 h CV {one_zero:.4}, test {test_zero:.4}, 6 h CV {six_zero:.4} °C²"
        ),
    );
}

/// Output files compared between two runs of the same command.
struct Rerun {
    command: String,
    files: Vec<(String, String, String)>,
}

/// Runs `args` with `--out <stem>a<ext>` and `--out <stem>b<ext>` (the
/// placeholder `@` in other arguments becomes `a`/`b` too) and hashes
/// `outputs` (suffixes appended to the out path) of both runs.
fn twice(dir: &Path, args: &[&str], out: &str, outputs: &[&str], drop_after: bool) -> Rerun {
    let mut hashes = [Vec::new(), Vec::new()];
    for (k, tag) in ["a", "b"].into_iter().enumerate() {
        let out_path = out.replace('@', tag);
        let mut full: Vec<String> = args.iter().map(|a| a.replace('@', tag)).collect();
        full.extend(["--out".to_string(), out_path.clone()]);
        let refs: Vec<&str> = full.iter().map(String::as_str).collect();
        thermsid(dir, &refs);
        let manifest = json(&dir.join(format!("{out_path}.manifest.json")));
        for entry in manifest["outputs"].as_array().unwrap() {
            let path = dir.join(entry["path"].as_str().unwrap());
            assert_eq!(entry["sha256"].as_str().unwrap(), sha(&path), "manifest hash of {}", path.display());
        }
        for suffix in outputs {
            let path = dir.join(format!("{out_path}{suffix}"));
            hashes[k].push(sha(&path));
            if drop_after && suffix.is_empty() {
                std::fs::remove_file(&path).unwrap();
            }
        }
    }
    let [a, b] = hashes;
    Rerun {
        command: args[0].to_string(),
        files: outputs
            .iter()
            .zip(a.into_iter().zip(b))
            .map(|(s, (x, y))| (s.to_string(), x, y))
            .collect(),
    }
}

/// Explore summary without its wall-clock fields.
fn stable_summary(path: &Path) -> Value {
    let mut v = json(path);
    for key in ["wall_time_s", "mean_time_per_config_s", "speedup_vs_baseline"] {
        v.as_object_mut().unwrap().remove(key);
    }
    v
}

fn criterion_10(r: &mut Report, reruns: &[Rerun], summaries_equal: bool) {
    let mut compared = 0;
    let mut mismatched = Vec::new();
    for run in reruns {
        for (suffix, a, b) in &run.files {
            compared += 1;
            if a != b {
                mismatched.push(format!("{} out{suffix}", run.command));
            }
        }
    }
    let mut commands: Vec<&str> = reruns.iter().map(|r| r.command.as_str()).collect();
    commands.dedup();
    r.record(
        10,
        "reproducibility",
        mismatched.is_empty() && summaries_equal,
        format!(
            "{compared} output files from {} identical on rerun ({} differ); explore summary counts equal: {summaries_equal}",
            commands.join(", "),
            mismatched.len()
        ),
    );
}

#[test]
fn acceptance() {
    let work = tempfile::tempdir().unwrap();
    let d = work.path();
    let started = Instant::now();
    let mut r = Report {
        lines: Vec::new(),
        failed: 0,
    };
    criterion_1(&mut r);
    criterion_3(&mut r);
    criterion_8(&mut r);

    let mut reruns = Vec::new();
    reruns.push(twice(d, &["simulate", "--seed", "1"], "trace-@.csv", &[""], false));
    reruns.push(twice(d, &["train", "trace-a.csv", "--order", "32"], "model-@.json", &["", ".metrics.json"], false));
    let trained = json(&d.join("model-a.json.metrics.json"));
    reruns.push(twice(d, &["crossval", "trace-a.csv", "--scheme", "1h", "--order", "32"], "cv1-@.csv", &[""], false));
    thermsid(d, &["crossval", "trace-a.csv", "--scheme", "1h", "--order", "32", "--eval", "zero", "--out", "cv1z.csv"]);
    thermsid(d, &["crossval", "trace-a.csv", "--scheme", "6h", "--order", "43", "--out", "cv6.csv"]);
    thermsid(d, &["crossval", "trace-a.csv", "--scheme", "6h", "--order", "43", "--eval", "zero", "--out", "cv6z.csv"]);
    let cv = [
        (csv_average(&d.join("cv1-a.csv")), csv_average(&d.join("cv1z.csv"))),
        (csv_average(&d.join("cv6.csv")), csv_average(&d.join("cv6z.csv"))),
    ];
    let pipeline_secs = started.elapsed().as_secs_f64();
    criterion_2(&mut r, &trained);
    criterion_4(&mut r, &trained, cv);
    criterion_5(&mut r, &d.join("cv1-a.csv"), &d.join("cv6.csv"));
    criterion_6(&mut r, &d.join("model-a.json"));

    reruns.push(twice(d, &["explore", "model-a.json", "--shards", "1"], "sweep-@.csv", &["", ".pareto.csv"], true));
    let summary = json(&d.join("sweep-a.csv.summary.json"));
    let summaries_equal = stable_summary(&d.join("sweep-a.csv.summary.json")) == stable_summary(&d.join("sweep-b.csv.summary.json"));
    criterion_7(&mut r, &summary);
    criterion_9(&mut r, &d.join("model-a.json"));

    reruns.push(twice(d, &["order-search", "trace-a.csv", "--orders", "2,4"], "os-@.csv", &[""], false));
    reruns.push(twice(
        d,
        &["regressor-search", "trace-a.csv", "--iterations", "30", "--spec-out", "spec-@.json"],
        "rs-@.csv",
        &["", ".correlations.csv"],
        false,
    ));
    reruns.push(Rerun {
        command: "regressor-search".into(),
        files: vec![("(spec-out)".into(), sha(&d.join("spec-a.json")), sha(&d.join("spec-b.json")))],
    });
    reruns.push(twice(d, &["validate", "model-a.json", "1900,1500,1,1,1,1,0.5,0.5,0.5,0.5"], "val-@.json", &[""], false));
    reruns.push(twice(d, &["predict", "model-a.json", "trace-a.csv", "--segment", "test"], "pred-@.csv", &["", ".metrics.json"], false));
    criterion_10(&mut r, &reruns, summaries_equal);

    emit(&format!(
        "--- summary (pipeline for criterion 4 took {pipeline_secs:.0} s, whole run {:.0} s)",
        started.elapsed().as_secs_f64()
    ));
    r.lines.sort_by_key(|l| l[10..12].trim().parse::<u32>().unwrap());
    for line in &r.lines {
        emit(line);
    }
    assert!(pipeline_secs <= 1800.0, "criterion 4 pipeline exceeded 30 min");
    assert_eq!(r.failed, 0, "{} criteria failed", r.failed);
}
