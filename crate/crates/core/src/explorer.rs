//! Exhaustive sweep of the DVFS configuration space through a trained
//! model's steady-state gain, thermal validation and Pareto reporting.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::RegressorSpec;
use crate::plant::Schedule;
use crate::scalar::Scalar;
use crate::soc::{
    Configuration, CORES, FREQ_BIG_LEVELS, FREQ_LITTLE_LEVELS, UTIL_LEVELS,
};
use crate::sysid::StateSpaceModel;

pub const DEFAULT_THRESHOLD_C: f64 = 90.0;
/// Settling time of one hardware measurement, seconds per configuration.
pub const MEASUREMENT_BASELINE_S: f64 = 100.0;
pub const EXPLORE_HEADER: &str =
    "f_big_mhz,f_little_mhz,u0,u1,u2,u3,u4,u5,u6,u7,predicted_c,perf_proxy_ghz,feasible,margin_c";

/// Level sets spanning a configuration space. Cores at index `cores` and
/// above are held idle.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigGrid {
    util_levels: Vec<f64>,
    cores: usize,
    f_big: Vec<u32>,
    f_little: Vec<u32>,
}

impl Default for ConfigGrid {
    fn default() -> Self {
        ConfigGrid {
            util_levels: UTIL_LEVELS.to_vec(),
            cores: CORES,
            f_big: FREQ_BIG_LEVELS.to_vec(),
            f_little: FREQ_LITTLE_LEVELS.to_vec(),
        }
    }
}

impl ConfigGrid {
    pub fn new(util_levels: Vec<f64>, cores: usize, f_big: Vec<u32>, f_little: Vec<u32>) -> Result<Self> {
        fn ascending<T: PartialOrd>(v: &[T]) -> bool {
            !v.is_empty() && v.windows(2).all(|w| w[0] < w[1])
        }
        if !(ascending(&util_levels) && ascending(&f_big) && ascending(&f_little)) {
            return Err(Error::InvalidArgument(
                "grid levels must be non-empty and strictly ascending".into(),
            ));
        }
        if !(1..=CORES).contains(&cores) {
            return Err(Error::InvalidArgument(format!(
                "core count {cores} outside 1..={CORES}"
            )));
        }
        let grid = ConfigGrid {
            util_levels,
            cores,
            f_big,
            f_little,
        };
        if grid.util_levels.iter().any(|u| !UTIL_LEVELS.contains(u))
            || grid.f_big.iter().any(|f| !FREQ_BIG_LEVELS.contains(f))
            || grid.f_little.iter().any(|f| !FREQ_LITTLE_LEVELS.contains(f))
        {
            return Err(Error::InvalidArgument(
                "grid levels must be platform levels".into(),
            ));
        }
        Ok(grid)
    }

    /// Parses `u=<levels>;c=<cores>;fb=<MHz list>;fl=<MHz list>`; lists are
    /// comma separated and omitted keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let d = ConfigGrid::default();
        let (mut u, mut c, mut fb, mut fl) = (d.util_levels, d.cores, d.f_big, d.f_little);
        fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
            v.split(',')
                .map(|x| {
                    x.trim()
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad {key} level {x:?}")))
                })
                .collect()
        }
        for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("grid entry {part:?} lacks '='")))?;
            match key.trim() {
                "u" => u = list("u", value)?,
                "c" => c = list::<usize>("c", value)?[0],
                "fb" => fb = list("fb", value)?,
                "fl" => fl = list("fl", value)?,
                other => {
                    return Err(Error::InvalidArgument(format!("unknown grid key {other:?}")))
                }
            }
        }
        ConfigGrid::new(u, c, fb, fl)
    }

    pub fn util_levels(&self) -> &[f64] {
        &self.util_levels
    }

    pub fn cores(&self) -> usize {
        self.cores
    }

    pub fn f_big(&self) -> &[u32] {
        &self.f_big
    }

    pub fn f_little(&self) -> &[u32] {
        &self.f_little
    }

    /// `U^C · |f_b| · |f_l|`, exact.
    pub fn config_count(&self) -> u128 {
        (self.util_levels.len() as u128).pow(self.cores as u32)
            * self.f_big.len() as u128
            * self.f_little.len() as u128
    }

    fn util_combinations(&self) -> u64 {
        (self.util_levels.len() as u64).pow(self.cores as u32)
    }

    /// Configuration at `index` of the lexicographic enumeration.
    pub fn config_at(&self, index: u64) -> Configuration {
        let per_pair = self.util_combinations();
        let pair = index / per_pair;
        let mut rest = index % per_pair;
        let n_l = self.f_little.len() as u64;
        let mut util = [0.0; CORES];
        let levels = self.util_levels.len() as u64;
        for c in (0..self.cores).rev() {
            util[c] = self.util_levels[(rest % levels) as usize];
            rest /= levels;
        }
        Configuration::new(
            self.f_big[(pair / n_l) as usize],
            self.f_little[(pair % n_l) as usize],
            util,
        )
    }

    /// Lexicographic enumeration `(f_big, f_little, u0, …, u7)` starting at
    /// `offset`.
    pub fn enumerate(&self, offset: u64) -> ConfigIter<'_> {
        let total = self.config_count() as u64;
        ConfigIter {
            grid: self,
            next: offset.min(total),
            end: total,
        }
    }
}

impl fmt::Display for ConfigGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: Vec<String>| v.join(",");
        write!(
            f,
            "u={};c={};fb={};fl={}",
            join(self.util_levels.iter().map(|u| u.to_string()).collect()),
            self.cores,
            join(self.f_big.iter().map(|u| u.to_string()).collect()),
            join(self.f_little.iter().map(|u| u.to_string()).collect()),
        )
    }
}

/// Iterator over a grid; see [`ConfigGrid::enumerate`].
#[derive(Clone, Debug)]
pub struct ConfigIter<'a> {
    grid: &'a ConfigGrid,
    next: u64,
    end: u64,
}

impl Iterator for ConfigIter<'_> {
    type Item = Configuration;

    fn next(&mut self) -> Option<Configuration> {
        (self.next < self.end).then(|| {
            self.next += 1;
            self.grid.config_at(self.next - 1)
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.end - self.next) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for ConfigIter<'_> {}

/// Steady-state temperature predictor with the DC gain solved once.
#[derive(Clone, Debug)]
pub struct Predictor<T: Scalar> {
    spec: RegressorSpec<T>,
    gain: Vec<T>,
    offset: T,
}

impl<T: Scalar> Predictor<T> {
    pub fn new(model: &StateSpaceModel<T>) -> Result<Self> {
        let spec = model
            .spec()
            .cloned()
            .ok_or_else(|| Error::InvalidArgument("model has no regressor spec".into()))?;
        let gain = model.steady_state_gain()?.iter().copied().collect();
        Ok(Predictor {
            spec,
            gain,
            offset: model.output_offset(),
        })
    }

    pub fn gain(&self) -> &[T] {
        &self.gain
    }

    pub fn spec(&self) -> &RegressorSpec<T> {
        &self.spec
    }

    /// Per-term frequency factors for one cluster frequency pair.
    pub fn factors(&self, f_big_mhz: u32, f_little_mhz: u32) -> Vec<T> {
        self.spec
            .frequency_factors(T::of(f64::from(f_big_mhz)), T::of(f64::from(f_little_mhz)))
    }

    /// `g · v + offset` with `v` built from cached factors; `scratch` must
    /// hold one value per regressor.
    #[inline]
    pub fn predict_with(&self, factors: &[T], util: &[T; CORES], scratch: &mut [T]) -> T {
        self.spec.apply_with_factors(factors, util, scratch);
        self.gain
            .iter()
            .zip(scratch.iter())
            .fold(self.offset, |acc, (g, v)| acc + *g * *v)
    }

    /// Steady-state temperature for one configuration, °C.
    pub fn predict(&self, config: &Configuration) -> Result<T> {
        check_config(config)?;
        let factors = self.factors(config.f_big, config.f_little);
        let mut scratch = vec![T::zero(); self.gain.len()];
        Ok(self.predict_with(&factors, &util_of(config), &mut scratch))
    }
}

fn check_config(config: &Configuration) -> Result<()> {
    if config.f_big == 0 || config.f_little == 0 || config.util.iter().any(|u| !(0.0..=1.0).contains(u)) {
        return Err(Error::InvalidArgument(format!("invalid configuration {config}")));
    }
    Ok(())
}

fn util_of<T: Scalar>(config: &Configuration) -> [T; CORES] {
    std::array::from_fn(|i| T::of(config.util[i]))
}

/// Model-predicted steady temperature of one configuration, °C.
pub fn predict_steady<T: Scalar>(model: &StateSpaceModel<T>, config: &Configuration) -> Result<T> {
    Predictor::new(model)?.predict(config)
}

/// One evaluated configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExplorationResult {
    pub config: Configuration,
    pub predicted_c: f64,
    pub perf_proxy_ghz: f64,
    pub feasible: bool,
    pub margin_c: f64,
}

impl ExplorationResult {
    pub fn new(config: Configuration, predicted_c: f64, threshold: f64) -> Self {
        ExplorationResult {
            config,
            predicted_c,
            perf_proxy_ghz: config.perf_proxy_ghz(),
            feasible: predicted_c <= threshold,
            margin_c: threshold - predicted_c,
        }
    }
}

/// Single-configuration check against `threshold` (inclusive).
pub fn validate_config<T: Scalar>(
    predictor: &Predictor<T>,
    config: &Configuration,
    threshold: f64,
) -> Result<ExplorationResult> {
    if !threshold.is_finite() {
        return Err(Error::InvalidArgument("threshold must be finite".into()));
    }
    Ok(ExplorationResult::new(
        *config,
        predictor.predict(config)?.as_f64(),
        threshold,
    ))
}

/// Totals of a (partial) sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SweepCounts {
    pub rows: u64,
    pub feasible: u64,
    pub min_predicted_c: Option<f64>,
    pub max_predicted_c: Option<f64>,
}

impl SweepCounts {
    fn record(&mut self, r: &ExplorationResult) {
        self.rows += 1;
        self.feasible += u64::from(r.feasible);
        let t = r.predicted_c;
        self.min_predicted_c = Some(self.min_predicted_c.map_or(t, |m| m.min(t)));
        self.max_predicted_c = Some(self.max_predicted_c.map_or(t, |m| m.max(t)));
    }

    fn merge(&mut self, other: &SweepCounts) {
        self.rows += other.rows;
        self.feasible += other.feasible;
        for (mine, theirs, pick) in [
            (&mut self.min_predicted_c, other.min_predicted_c, f64::min as fn(f64, f64) -> f64),
            (&mut self.max_predicted_c, other.max_predicted_c, f64::max),
        ] {
            *mine = match (*mine, theirs) {
                (Some(a), Some(b)) => Some(pick(a, b)),
                (a, b) => a.or(b),
            };
        }
    }
}

/// Result of a full sweep, serialized next to the CSV output.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExploreSummary {
    pub grid: String,
    pub threshold_c: f64,
    pub config_count: u64,
    pub feasible: u64,
    pub infeasible: u64,
    pub min_predicted_c: Option<f64>,
    pub max_predicted_c: Option<f64>,
    pub shards: usize,
    pub wall_time_s: f64,
    pub mean_time_per_config_s: f64,
    pub baseline_s_per_config: f64,
    pub speedup_vs_baseline: f64,
}

impl ExploreSummary {
    fn new(grid: &ConfigGrid, threshold: f64, counts: &SweepCounts, shards: usize, wall: f64) -> Self {
        let mean = wall / counts.rows.max(1) as f64;
        ExploreSummary {
            grid: grid.to_string(),
            threshold_c: threshold,
            config_count: counts.rows,
            feasible: counts.feasible,
            infeasible: counts.rows - counts.feasible,
            min_predicted_c: counts.min_predicted_c,
            max_predicted_c: counts.max_predicted_c,
            shards,
            wall_time_s: wall,
            mean_time_per_config_s: mean,
            baseline_s_per_config: MEASUREMENT_BASELINE_S,
            speedup_vs_baseline: MEASUREMENT_BASELINE_S / mean.max(f64::MIN_POSITIVE),
        }
    }
}

fn write_err(dest: &str) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(dest, e)
}

/// Evaluates the enumeration indices in `range`, writing one CSV row per
/// configuration (no header) and passing each result to `visit`.
pub fn explore_range<T: Scalar, W: Write, F: FnMut(&ExplorationResult)>(
    predictor: &Predictor<T>,
    grid: &ConfigGrid,
    range: Range<u64>,
    threshold: f64,
    out: W,
    dest: &str,
    mut visit: F,
) -> Result<SweepCounts> {
    if !threshold.is_finite() {
        return Err(Error::InvalidArgument("threshold must be finite".into()));
    }
    let total = grid.config_count() as u64;
    if range.start > range.end || range.end > total {
        return Err(Error::InvalidArgument(format!(
            "range {range:?} outside 0..{total}"
        )));
    }
    let mut w = BufWriter::with_capacity(1 << 22, out);
    let err = write_err(dest);
    let levels = grid.util_levels();
    let level_text: Vec<String> = levels.iter().map(|u| format!(",{u:.4}")).collect();
    let level_t: Vec<T> = levels.iter().map(|&u| T::of(u)).collect();
    let idle_text = format!(",{:.4}", 0.0);
    let per_pair = grid.util_combinations();
    let n_l = grid.f_little.len() as u64;
    let mut scratch = vec![T::zero(); predictor.gain.len()];
    let mut counts = SweepCounts::default();
    let mut row = String::with_capacity(160);

    let mut index = range.start;
    while index < range.end {
        let pair = index / per_pair;
        let (fb, fl) = (grid.f_big[(pair / n_l) as usize], grid.f_little[(pair % n_l) as usize]);
        let factors = predictor.factors(fb, fl);
        let prefix = format!("{fb},{fl}");
        let pair_end = ((pair + 1) * per_pair).min(range.end);
        let mut digits = [0usize; CORES];
        let mut rest = index % per_pair;
        for c in (0..grid.cores).rev() {
            digits[c] = (rest % levels.len() as u64) as usize;
            rest /= levels.len() as u64;
        }
        while index < pair_end {
            let mut util = [0.0; CORES];
            let mut util_t = [T::zero(); CORES];
            for c in 0..grid.cores {
                util[c] = levels[digits[c]];
                util_t[c] = level_t[digits[c]];
            }
            let config = Configuration::new(fb, fl, util);
            let pred = predictor.predict_with(&factors, &util_t, &mut scratch).as_f64();
            let r = ExplorationResult::new(config, pred, threshold);

            row.clear();
            row.push_str(&prefix);
            for c in 0..CORES {
                row.push_str(if c < grid.cores { &level_text[digits[c]] } else { &idle_text });
            }
            use std::fmt::Write as _;
            let _ = writeln!(
                row,
                ",{:.6},{:.4},{},{:.6}",
                r.predicted_c, r.perf_proxy_ghz, r.feasible, r.margin_c
            );
            w.write_all(row.as_bytes()).map_err(&err)?;
            counts.record(&r);
            visit(&r);

            index += 1;
            for c in (0..grid.cores).rev() {
                digits[c] += 1;
                if digits[c] < levels.len() {
                    break;
                }
                digits[c] = 0;
            }
        }
    }
    w.flush().map_err(&err)?;
    Ok(counts)
}

/// Sweeps the whole grid single-threaded into `out` (header included).
pub fn explore<T: Scalar, W: Write, F: FnMut(&ExplorationResult)>(
    predictor: &Predictor<T>,
    grid: &ConfigGrid,
    threshold: f64,
    mut out: W,
    dest: &str,
    visit: F,
) -> Result<ExploreSummary> {
    let start = Instant::now();
    writeln!(out, "{EXPLORE_HEADER}").map_err(write_err(dest))?;
    let total = grid.config_count() as u64;
    let counts = explore_range(predictor, grid, 0..total, threshold, out, dest, visit)?;
    Ok(ExploreSummary::new(grid, threshold, &counts, 1, start.elapsed().as_secs_f64()))
}

/// Enumeration ranges of `shards` nearly equal partitions.
pub fn shard_ranges(total: u64, shards: usize) -> Vec<Range<u64>> {
    let shards = shards.max(1) as u64;
    (0..shards)
        .map(|k| total * k / shards..total * (k + 1) / shards)
        .collect()
}

/// Sweeps the grid on `shards` threads. Each shard writes its own file in
/// `scratch_dir`; the shards are then concatenated in offset order into
/// `out`, producing the same bytes as [`explore`]. Shard fronts are merged
/// into the returned Pareto front.
pub fn explore_sharded<T: Scalar, W: Write>(
    predictor: &Predictor<T>,
    grid: &ConfigGrid,
    threshold: f64,
    shards: usize,
    scratch_dir: &Path,
    mut out: W,
    dest: &str,
) -> Result<(ExploreSummary, ParetoFront)> {
    let start = Instant::now();
    let ranges = shard_ranges(grid.config_count() as u64, shards);
    let paths: Vec<_> = (0..ranges.len())
        .map(|k| scratch_dir.join(format!("shard-{k:04}.csv")))
        .collect();
    let results: Vec<Result<(SweepCounts, ParetoFront)>> = std::thread::scope(|s| {
        let handles: Vec<_> = ranges
            .iter()
            .zip(&paths)
            .map(|(range, path)| {
                s.spawn(move || {
                    let name = path.display().to_string();
                    let f = File::create(path).map_err(|e| Error::io(name.clone(), e))?;
                    let mut front = ParetoFront::new();
                    let counts = explore_range(predictor, grid, range.clone(), threshold, f, &name, |r| {
                        front.insert(r)
                    })?;
                    Ok((counts, front))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("explore shard panicked"))
            .collect()
    });
    let mut counts = SweepCounts::default();
    let mut front = ParetoFront::new();
    for r in results {
        let (c, f) = r?;
        counts.merge(&c);
        for p in f.into_vec() {
            front.insert(&p);
        }
    }
    let err = write_err(dest);
    writeln!(out, "{EXPLORE_HEADER}").map_err(&err)?;
    for path in &paths {
        let name = path.display().to_string();
        let mut f = File::open(path).map_err(|e| Error::io(name.clone(), e))?;
        std::io::copy(&mut f, &mut out).map_err(&err)?;
        std::fs::remove_file(path).map_err(|e| Error::io(name, e))?;
    }
    out.flush().map_err(&err)?;
    let summary = ExploreSummary::new(grid, threshold, &counts, ranges.len(), start.elapsed().as_secs_f64());
    Ok((summary, front))
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct PerfKey(f64);

impl Eq for PerfKey {}

impl PartialOrd for PerfKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PerfKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Streaming Pareto front over feasible results: maximize the performance
/// proxy, minimize predicted temperature. Along the front both coordinates
/// increase strictly.
#[derive(Clone, Debug, Default)]
pub struct ParetoFront {
    points: BTreeMap<PerfKey, ExplorationResult>,
}

impl ParetoFront {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn insert(&mut self, r: &ExplorationResult) {
        if !r.feasible {
            return;
        }
        let key = PerfKey(r.perf_proxy_ghz);
        if let Some((_, q)) = self.points.range(key..).next() {
            if q.predicted_c < r.predicted_c
                || (q.predicted_c == r.predicted_c && q.perf_proxy_ghz > r.perf_proxy_ghz)
            {
                return;
            }
            if q.predicted_c == r.predicted_c && q.perf_proxy_ghz == r.perf_proxy_ghz {
                if q.config > r.config {
                    self.points.insert(key, *r);
                }
                return;
            }
        }
        while let Some((&k, q)) = self.points.range(..=key).next_back() {
            if q.predicted_c >= r.predicted_c {
                self.points.remove(&k);
            } else {
                break;
            }
        }
        self.points.insert(key, *r);
    }

    /// Front points by ascending performance.
    pub fn into_vec(self) -> Vec<ExplorationResult> {
        self.points.into_values().collect()
    }
}

/// Non-dominated feasible results of `results`, by ascending performance.
pub fn pareto_front<'a, I: IntoIterator<Item = &'a ExplorationResult>>(results: I) -> Vec<ExplorationResult> {
    let mut front = ParetoFront::new();
    for r in results {
        front.insert(r);
    }
    front.into_vec()
}

/// Peak of a free-run transient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TransientPeak {
    pub peak_c: f64,
    pub time_s: f64,
}

/// Free-runs the model over `schedule` sampled at the model rate, starting
/// from the zero state, and returns the hottest predicted sample.
pub fn transient_check<T: Scalar>(model: &StateSpaceModel<T>, schedule: &Schedule) -> Result<TransientPeak> {
    schedule.validate()?;
    let spec = model
        .spec()
        .ok_or_else(|| Error::InvalidArgument("model has no regressor spec".into()))?;
    let rate = model.sample_rate().as_f64();
    let n = (schedule.total_duration() * rate).floor() as usize;
    if n == 0 {
        return Err(Error::InsufficientData(
            "schedule is shorter than one model sample".into(),
        ));
    }
    let mut v = DMatrix::zeros(n, spec.len());
    let mut row = vec![T::zero(); spec.len()];
    let mut cached: Option<(u32, u32, Vec<T>)> = None;
    for k in 0..n {
        let config = schedule.config_at(k as f64 / rate);
        let factors = match &cached {
            Some((fb, fl, f)) if *fb == config.f_big && *fl == config.f_little => f,
            _ => {
                let f = spec.frequency_factors(T::of(f64::from(config.f_big)), T::of(f64::from(config.f_little)));
                &cached.insert((config.f_big, config.f_little, f)).2
            }
        };
        spec.apply_with_factors(factors, &util_of(config), &mut row);
        for (j, x) in row.iter().enumerate() {
            v[(k, j)] = *x;
        }
    }
    let y = model.simulate(&v)?;
    let (k, peak) = y
        .iter()
        .enumerate()
        .fold((0, y[0]), |best, (k, &t)| if t > best.1 { (k, t) } else { best });
    Ok(TransientPeak {
        peak_c: peak.as_f64(),
        time_s: k as f64 / rate,
    })
}
