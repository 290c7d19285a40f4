//! Resampling, dev/test splitting, blocked time-series cross-validation and
//! the order and regressor searches built on it.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{Combo, RegressorSpec};
use crate::scalar::Scalar;
use crate::sysid::{mse, N4sid, StateSpaceModel};
use crate::trace::{Sample, Trace};

/// Block-mean decimation to `target_hz`. Output sample `w` averages the
/// input samples whose index `k` satisfies `floor(k · target / rate) = w`,
/// i.e. whose offset from the first timestamp falls in `[w, w + 1) / target`
/// seconds. A trailing partial window is kept.
pub fn resample<T: Scalar>(trace: &Trace<T>, target_hz: T) -> Result<Trace<T>> {
    trace.validate()?;
    if trace.is_empty() {
        return Err(Error::InsufficientData("cannot resample an empty trace".into()));
    }
    if !(target_hz > T::zero()) {
        return Err(Error::InvalidArgument(format!("target rate {target_hz} must be positive")));
    }
    if target_hz == trace.sample_rate {
        return Ok(trace.clone());
    }
    if target_hz > trace.sample_rate {
        return Err(Error::InvalidArgument(format!(
            "target rate {target_hz} Hz exceeds the source rate {} Hz",
            trace.sample_rate
        )));
    }
    let (rate, target) = (trace.sample_rate.as_f64(), target_hz.as_f64());
    let window = |k: usize| ((k as f64 * target) / rate).floor() as usize;
    let n_out = window(trace.len() - 1) + 1;
    let mut out = Trace::with_capacity(target_hz, n_out);
    let t0 = trace.t[0];
    let mut k = 0;
    for w in 0..n_out {
        let start = k;
        while k < trace.len() && window(k) == w {
            k += 1;
        }
        let mean = |col: &[T]| col[start..k].iter().copied().sum::<T>() / T::of_usize(k - start);
        out.push(Sample {
            t: t0 + T::of_usize(w) / target_hz,
            f_big: mean(&trace.f_big),
            f_little: mean(&trace.f_little),
            util: std::array::from_fn(|i| mean(&trace.util[i])),
            temp: mean(&trace.temp),
        });
    }
    Ok(out)
}

/// The development part of a split: the only data searches may read.
#[derive(Clone, Debug, PartialEq)]
pub struct DevTrace<T>(Trace<T>);

/// Held-out test data.
#[derive(Clone, Debug, PartialEq)]
pub struct TestTrace<T>(Trace<T>);

impl<T> DevTrace<T> {
    /// Declares a whole trace as development data.
    pub fn new(trace: Trace<T>) -> Self {
        DevTrace(trace)
    }

    pub fn trace(&self) -> &Trace<T> {
        &self.0
    }

    pub fn into_inner(self) -> Trace<T> {
        self.0
    }
}

impl<T> TestTrace<T> {
    pub fn trace(&self) -> &Trace<T> {
        &self.0
    }

    pub fn into_inner(self) -> Trace<T> {
        self.0
    }
}

/// Sample ranges of the 79 / 1 / 20 split for a trace of `n` samples.
pub fn split_ranges(n: usize) -> Result<(Range<usize>, Range<usize>)> {
    if n < 100 {
        return Err(Error::InsufficientData(format!(
            "split needs at least 100 samples, got {n}"
        )));
    }
    let dev_end = n * 79 / 100;
    let test_start = dev_end + n / 100;
    Ok((0..dev_end, test_start..n))
}

/// First 79 % development, next 1 % discarded, remainder test.
pub fn split_dev_test<T: Scalar>(trace: &Trace<T>) -> Result<(DevTrace<T>, TestTrace<T>)> {
    let (dev, test) = split_ranges(trace.len())?;
    Ok((DevTrace(trace.slice(dev)), TestTrace(trace.slice(test))))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    /// Training first, validation after it.
    Normal,
    /// Validation first, training after it.
    Reversed,
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Orientation::Normal => "normal",
            Orientation::Reversed => "reversed",
        })
    }
}

/// One cross-validation fold; all ranges are end-exclusive sample indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FoldSpec {
    pub train_start: usize,
    pub train_end: usize,
    pub val_start: usize,
    pub val_end: usize,
    pub orientation: Orientation,
}

impl FoldSpec {
    /// Splits the block `[start, start + len)` 80/20 in the given orientation.
    pub fn from_block(start: usize, len: usize, orientation: Orientation) -> Self {
        let val = len / 5;
        let train = 4 * val;
        match orientation {
            Orientation::Normal => FoldSpec {
                train_start: start,
                train_end: start + train,
                val_start: start + train,
                val_end: start + train + val,
                orientation,
            },
            Orientation::Reversed => FoldSpec {
                train_start: start + val,
                train_end: start + val + train,
                val_start: start,
                val_end: start + val,
                orientation,
            },
        }
    }

    pub fn train(&self) -> Range<usize> {
        self.train_start..self.train_end
    }

    pub fn val(&self) -> Range<usize> {
        self.val_start..self.val_end
    }

    fn check(&self, len: usize) -> Result<()> {
        if self.train_end > len || self.val_end > len || self.train().is_empty() || self.val().is_empty() {
            return Err(Error::InvalidArgument(format!(
                "fold train {:?} / val {:?} does not fit {len} samples",
                self.train(),
                self.val()
            )));
        }
        Ok(())
    }
}

fn block_len(hours: f64, sample_rate: f64) -> Result<usize> {
    let len = hours * 3600.0 * sample_rate;
    if !(len >= 5.0) || (len - len.round()).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "sample rate {sample_rate} Hz does not give a whole-sample {hours} h block"
        )));
    }
    Ok(len.round() as usize)
}

/// Ten 1 h blocks spread evenly over the development data, each split
/// 80/20 into training and validation.
pub fn blocked_folds_1h(dev_len: usize, sample_rate: f64) -> Result<Vec<FoldSpec>> {
    let l = block_len(1.0, sample_rate)?;
    if dev_len < l {
        return Err(Error::InsufficientData(format!(
            "1 h scheme needs {l} development samples, got {dev_len}"
        )));
    }
    let stride = (dev_len - l) / 9;
    Ok((0..10)
        .map(|k| FoldSpec::from_block(k * stride, l, Orientation::Normal))
        .collect())
}

/// Two 6 h blocks at the start and end of the development data, each used
/// in normal and reversed orientation.
pub fn blocked_folds_6h(dev_len: usize, sample_rate: f64) -> Result<Vec<FoldSpec>> {
    let l = block_len(6.0, sample_rate)?;
    if dev_len < l {
        return Err(Error::InsufficientData(format!(
            "6 h scheme needs {l} development samples, got {dev_len}"
        )));
    }
    let mut folds = Vec::with_capacity(4);
    for off in [0, dev_len - l] {
        folds.push(FoldSpec::from_block(off, l, Orientation::Normal));
        folds.push(FoldSpec::from_block(off, l, Orientation::Reversed));
    }
    Ok(folds)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    OneHour,
    SixHour,
}

impl Scheme {
    pub fn folds(self, dev_len: usize, sample_rate: f64) -> Result<Vec<FoldSpec>> {
        match self {
            Scheme::OneHour => blocked_folds_1h(dev_len, sample_rate),
            Scheme::SixHour => blocked_folds_6h(dev_len, sample_rate),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::OneHour => "1h",
            Scheme::SixHour => "6h",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1h" => Ok(Scheme::OneHour),
            "6h" => Ok(Scheme::SixHour),
            _ => Err(Error::InvalidArgument(format!(
                "unknown scheme {s:?} (expected 1h or 6h)"
            ))),
        }
    }
}

/// How the free-run simulation over a validation or test range starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// Zero state at the first evaluated sample; every sample is scored.
    ZeroState,
    /// State fitted by least squares to the first `window` measured
    /// samples, which are then excluded from the score.
    EstimatedState { window: usize },
}

/// Samples (10 s at 5 Hz) used to fit the initial state by default.
pub const DEFAULT_STATE_WINDOW: usize = 50;

impl Default for EvalMode {
    fn default() -> Self {
        EvalMode::EstimatedState {
            window: DEFAULT_STATE_WINDOW,
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalMode::ZeroState => f.write_str("zero"),
            EvalMode::EstimatedState { window } => write!(f, "estimate:{window}"),
        }
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    /// `zero`, `estimate` or `estimate:<samples>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "zero" => Ok(EvalMode::ZeroState),
            None if s == "estimate" => Ok(EvalMode::default()),
            Some(("estimate", w)) => w
                .parse()
                .ok()
                .filter(|&w| w > 0)
                .map(|window| EvalMode::EstimatedState { window })
                .ok_or_else(|| Error::InvalidArgument(format!("bad state window {w:?}"))),
            _ => Err(Error::InvalidArgument(format!(
                "unknown evaluation mode {s:?} (expected zero or estimate[:samples])"
            ))),
        }
    }
}

/// Identification settings shared by every fold of a search.
#[derive(Clone, Debug)]
pub struct FitOptions {
    pub order: usize,
    pub horizon: Option<usize>,
    pub eval: EvalMode,
}

impl FitOptions {
    pub fn new(order: usize) -> Self {
        FitOptions {
            order,
            horizon: None,
            eval: EvalMode::default(),
        }
    }

    fn identifier(&self, sample_rate: f64) -> N4sid {
        let id = N4sid::new(self.order).sample_rate(sample_rate);
        match self.horizon {
            Some(h) => id.horizon(h),
            None => id,
        }
    }
}

/// Fits the normalization on `train`, identifies, and returns the model with
/// the normalized spec attached.
pub fn fit_model<T: Scalar>(
    train: &Trace<T>,
    spec: &RegressorSpec<T>,
    opts: &FitOptions,
) -> Result<StateSpaceModel<T>> {
    let raw_spec = spec.without_normalization();
    let mut v = raw_spec.apply_trace(train)?;
    let spec = raw_spec.fit_normalization(&v)?;
    spec.normalize_matrix(&mut v);
    opts.identifier(train.sample_rate.as_f64())
        .identify(&v, &train.temp)?
        .with_spec(spec)
}

/// Free-run prediction over `data` with the model's own regressor map.
/// Returns the predictions and the number of leading samples used to fit
/// the initial state (to be excluded from scoring).
pub fn free_run<T: Scalar>(
    model: &StateSpaceModel<T>,
    data: &Trace<T>,
    eval: EvalMode,
) -> Result<(Vec<T>, usize)> {
    let spec = model
        .spec()
        .ok_or_else(|| Error::InvalidArgument("model has no regressor spec".into()))?;
    let v = spec.apply_trace(data)?;
    match eval {
        EvalMode::ZeroState => Ok((model.simulate(&v)?, 0)),
        EvalMode::EstimatedState { window } => {
            if window >= data.len() {
                return Err(Error::InsufficientData(format!(
                    "state window {window} leaves no samples of {}",
                    data.len()
                )));
            }
            let x0 = model.estimate_initial_state(&v, &data.temp, window)?;
            Ok((model.simulate_from(&v, &x0)?, window))
        }
    }
}

/// Free-run MSE of `model` on `data`.
pub fn evaluate<T: Scalar>(model: &StateSpaceModel<T>, data: &Trace<T>, eval: EvalMode) -> Result<T> {
    let (y_hat, discard) = free_run(model, data, eval)?;
    mse(&y_hat, &data.temp, discard)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvReport {
    pub fold_mse: Vec<f64>,
    pub average: f64,
}

/// Trains on each fold's training range and scores the free-run validation
/// MSE. Normalization is refitted per fold.
pub fn cross_validate<T: Scalar>(
    dev: &DevTrace<T>,
    folds: &[FoldSpec],
    spec: &RegressorSpec<T>,
    opts: &FitOptions,
) -> Result<CvReport> {
    if folds.is_empty() {
        return Err(Error::InvalidArgument("no folds".into()));
    }
    let data = dev.trace();
    let mut fold_mse = Vec::with_capacity(folds.len());
    for (k, fold) in folds.iter().enumerate() {
        let tag = |e| Error::AtFold {
            fold: k,
            source: Box::new(e),
        };
        fold.check(data.len()).map_err(tag)?;
        let model = fit_model(&data.slice(fold.train()), spec, opts).map_err(tag)?;
        let err = evaluate(&model, &data.slice(fold.val()), opts.eval).map_err(tag)?;
        fold_mse.push(err.as_f64());
    }
    let average = fold_mse.iter().sum::<f64>() / fold_mse.len() as f64;
    Ok(CvReport { fold_mse, average })
}

/// Parses `"a..b"` (inclusive), `"a"` or comma-separated lists of either.
pub fn parse_orders(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidArgument(format!("bad order list {text:?}"));
    let mut out = BTreeSet::new();
    for part in text.split(',').map(str::trim) {
        if let Some((a, b)) = part.split_once("..") {
            let a: usize = a.trim().parse().map_err(|_| bad())?;
            let b: usize = b.trim().parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.insert(part.parse().map_err(|_| bad())?);
        }
    }
    if out.is_empty() || out.contains(&0) {
        return Err(bad());
    }
    Ok(out.into_iter().collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrderSearch {
    pub best_order: usize,
    /// `(order, average validation MSE)` in the order searched.
    pub curve: Vec<(usize, f64)>,
}

/// Cross-validates every order and returns the argmin (smallest order on
/// ties). A horizon set in `base` is shared by every order; otherwise each
/// order gets its default.
pub fn grid_search_order<T: Scalar>(
    dev: &DevTrace<T>,
    folds: &[FoldSpec],
    spec: &RegressorSpec<T>,
    orders: &[usize],
    base: &FitOptions,
) -> Result<OrderSearch> {
    if orders.is_empty() {
        return Err(Error::InvalidArgument("empty order list".into()));
    }
    let mut curve = Vec::with_capacity(orders.len());
    for &order in orders {
        let opts = FitOptions {
            order,
            ..base.clone()
        };
        curve.push((order, cross_validate(dev, folds, spec, &opts)?.average));
    }
    let best_order = curve
        .iter()
        .fold(None::<(usize, f64)>, |best, &(o, e)| match best {
            Some((bo, be)) if be < e || (be == e && bo < o) => Some((bo, be)),
            _ => Some((o, e)),
        })
        .map(|(o, _)| o)
        .expect("non-empty curve");
    Ok(OrderSearch { best_order, curve })
}

/// Order used for every iteration of the regressor search.
pub const SEARCH_ORDER: usize = 5;
pub const COMBOS_PER_ITER: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub combos: Vec<Combo>,
    /// Validation MSE, or the failure message.
    pub outcome: std::result::Result<f64, String>,
}

/// Each iteration draws three distinct combos from `pool`, appends the raw
/// inputs, identifies an order-5 model on `fold` and records its validation
/// MSE. Failures are recorded, not propagated.
pub fn randomized_regressor_search<T: Scalar>(
    dev: &DevTrace<T>,
    fold: &FoldSpec,
    pool: &[Combo],
    iterations: usize,
    seed: u64,
    eval: EvalMode,
) -> Result<Vec<IterationRecord>> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("iterations must be at least 1".into()));
    }
    if pool.len() < COMBOS_PER_ITER || pool.iter().any(|c| c.is_raw()) {
        return Err(Error::InvalidArgument(format!(
            "pool needs at least {COMBOS_PER_ITER} distinct non-raw combos"
        )));
    }
    let data = dev.trace();
    fold.check(data.len())?;
    let train = data.slice(fold.train());
    let val = data.slice(fold.val());
    let opts = FitOptions {
        eval,
        ..FitOptions::new(SEARCH_ORDER)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(iterations);
    for iteration in 0..iterations {
        let mut combos: Vec<Combo> = sample(&mut rng, pool.len(), COMBOS_PER_ITER)
            .into_iter()
            .map(|j| pool[j])
            .collect();
        combos.sort();
        let outcome = RegressorSpec::from_combos(&combos, true)
            .and_then(|spec| fit_model(&train, &spec, &opts))
            .and_then(|model| evaluate(&model, &val, eval))
            .map(|e| e.as_f64())
            .map_err(|e| e.to_string());
        if let Err(msg) = &outcome {
            warn!("regressor search iteration {iteration} failed: {msg}");
        }
        records.push(IterationRecord {
            iteration,
            combos,
            outcome,
        });
    }
    Ok(records)
}

/// Minimum number of successful iterations for [`correlation_prune`].
pub const MIN_PRUNE_RECORDS: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub struct PruneResult {
    /// Point-biserial correlation of each pool combo with the MSE; `None`
    /// when the combo was always or never present.
    pub correlations: Vec<(Combo, Option<f64>)>,
    pub retained: Vec<Combo>,
}

/// Pearson correlation between the inclusion indicator of each combo and the
/// MSE over successful records. Combos with correlation ≤ 0, and those
/// whose correlation is undefined, are retained.
pub fn correlation_prune(records: &[IterationRecord], pool: &[Combo]) -> Result<PruneResult> {
    let ok: Vec<(&[Combo], f64)> = records
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok().map(|&e| (r.combos.as_slice(), e)))
        .collect();
    if ok.len() < MIN_PRUNE_RECORDS {
        return Err(Error::InsufficientData(format!(
            "correlation needs {MIN_PRUNE_RECORDS} successful iterations, got {}",
            ok.len()
        )));
    }
    let n = ok.len() as f64;
    let mean_e = ok.iter().map(|r| r.1).sum::<f64>() / n;
    let var_e = ok.iter().map(|r| (r.1 - mean_e).powi(2)).sum::<f64>();
    let mut correlations = Vec::with_capacity(pool.len());
    let mut retained = Vec::new();
    for &combo in pool {
        let ind: Vec<f64> = ok
            .iter()
            .map(|r| if r.0.contains(&combo) { 1.0 } else { 0.0 })
            .collect();
        let mean_i = ind.iter().sum::<f64>() / n;
        let var_i = ind.iter().map(|x| (x - mean_i).powi(2)).sum::<f64>();
        let corr = if var_i == 0.0 || var_e == 0.0 {
            warn!("correlation of {combo} with the MSE is undefined; keeping it");
            None
        } else {
            let cov = ind
                .iter()
                .zip(&ok)
                .map(|(x, r)| (x - mean_i) * (r.1 - mean_e))
                .sum::<f64>();
            Some(cov / (var_i * var_e).sqrt())
        };
        if corr.is_none_or(|c| c <= 0.0) {
            retained.push(combo);
        }
        correlations.push((combo, corr));
    }
    Ok(PruneResult {
        correlations,
        retained,
    })
}

/// Largest number of subsets [`subset_search`] will evaluate.
pub const MAX_SUBSETS: usize = 1 << 12;

/// Cross-validates every subset of `combos` (raw inputs always included,
/// the empty subset meaning raw inputs only). Results come in subset-mask
/// order.
pub fn subset_search<T: Scalar>(
    dev: &DevTrace<T>,
    folds: &[FoldSpec],
    combos: &[Combo],
    opts: &FitOptions,
) -> Result<Vec<(Vec<Combo>, f64)>> {
    let count = 1usize
        .checked_shl(combos.len() as u32)
        .filter(|&c| c <= MAX_SUBSETS)
        .ok_or_else(|| {
            Error::SearchTooLarge(format!(
                "{} combos give more than {MAX_SUBSETS} subsets",
                combos.len()
            ))
        })?;
    (0..count)
        .map(|mask| {
            let subset: Vec<Combo> = combos
                .iter()
                .enumerate()
                .filter(|(j, _)| mask >> j & 1 == 1)
                .map(|(_, &c)| c)
                .collect();
            let spec = RegressorSpec::from_combos(&subset, true)?;
            let report = cross_validate(dev, folds, &spec, opts)?;
            Ok((subset, report.average))
        })
        .collect()
}
