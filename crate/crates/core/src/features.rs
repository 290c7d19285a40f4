//! Static input nonlinearity: polynomial terms `f^p · u^q` mapping the raw
//! inputs (two cluster frequencies, eight utilizations) to the regressor
//! vector fed to the linear dynamic block.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::soc::{Cluster, CORES};
use crate::trace::Trace;

/// Where a term reads its inputs from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scope {
    Core(u8),
    Cluster(Cluster),
}

impl Scope {
    pub fn cluster(self) -> Cluster {
        match self {
            Scope::Core(i) => Cluster::of_core(usize::from(i)),
            Scope::Cluster(c) => c,
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Core(i) => write!(f, "core{i}"),
            Scope::Cluster(c) => f.write_str(c.name()),
        }
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "big" => Ok(Scope::Cluster(Cluster::Big)),
            "little" => Ok(Scope::Cluster(Cluster::Little)),
            _ => s
                .strip_prefix("core")
                .and_then(|i| i.parse::<u8>().ok())
                .filter(|&i| usize::from(i) < CORES)
                .map(Scope::Core)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown regressor scope {s:?}"))),
        }
    }
}

/// Exponent pair `(p, q)` of a term, with `p` stored in halves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Combo {
    pub half_p: u8,
    pub q: u8,
}

impl Combo {
    pub const fn new(half_p: u8, q: u8) -> Self {
        Combo { half_p, q }
    }

    pub fn p(self) -> f64 {
        f64::from(self.half_p) / 2.0
    }

    /// Instantiates the combo on every core (`q = 1`) or every cluster (`q = 0`).
    pub fn instantiate(self) -> Vec<RegressorTerm> {
        if self.q == 1 {
            (0..CORES as u8)
                .map(|i| RegressorTerm {
                    scope: Scope::Core(i),
                    half_p: self.half_p,
                    q: 1,
                })
                .collect()
        } else {
            [Cluster::Big, Cluster::Little]
                .into_iter()
                .map(|c| RegressorTerm {
                    scope: Scope::Cluster(c),
                    half_p: self.half_p,
                    q: 0,
                })
                .collect()
        }
    }

    /// True for the raw inputs `f` (per cluster) and `u_i` (per core).
    pub fn is_raw(self) -> bool {
        self == RAW_FREQ || self == RAW_UTIL
    }
}

impl fmt::Display for Combo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.half_p, self.q) {
            (0, _) => f.write_str("u"),
            (h, 0) => write!(f, "f^{}", f64::from(h) / 2.0),
            (h, _) => write!(f, "f^{}*u", f64::from(h) / 2.0),
        }
    }
}

pub const RAW_FREQ: Combo = Combo::new(2, 0);
pub const RAW_UTIL: Combo = Combo::new(0, 1);

/// Non-raw combos of the search family: `f^p·u` for p in 1..=3 and
/// per-cluster `f^p` for p in 1.5..=3, in steps of 0.5.
pub fn search_combos() -> Vec<Combo> {
    let mut v: Vec<Combo> = (2..=6).map(|h| Combo::new(h, 1)).collect();
    v.extend((3..=6).map(|h| Combo::new(h, 0)));
    v
}

/// One polynomial regressor: `f_cluster^p · u_core^q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RegressorTerm {
    pub scope: Scope,
    /// Twice the frequency exponent.
    pub half_p: u8,
    pub q: u8,
}

impl RegressorTerm {
    pub fn new(scope: Scope, p: f64, q: u8) -> Result<Self> {
        let half = p * 2.0;
        if half.fract() != 0.0 || !(0.0..=6.0).contains(&half) || half == 1.0 {
            return Err(Error::InvalidArgument(format!(
                "frequency exponent {p} not in {{0, 1, 1.5, 2, 2.5, 3}}"
            )));
        }
        let term = RegressorTerm {
            scope,
            half_p: half as u8,
            q,
        };
        term.check()?;
        Ok(term)
    }

    fn check(&self) -> Result<()> {
        let bad = |why: &str| Err(Error::InvalidArgument(format!("term {self}: {why}")));
        if self.q > 1 {
            return bad("utilization exponent must be 0 or 1");
        }
        if self.half_p == 0 && self.q == 0 {
            return bad("constant term");
        }
        if self.half_p == 1 || self.half_p > 6 {
            return bad("frequency exponent outside {0, 1, 1.5, 2, 2.5, 3}");
        }
        match self.scope {
            Scope::Cluster(_) if self.q != 0 => bad("cluster terms carry no utilization"),
            Scope::Core(_) if self.q == 0 => bad("per-core pure-frequency terms duplicate cluster terms"),
            Scope::Core(i) if usize::from(i) >= CORES => bad("core index out of range"),
            _ => Ok(()),
        }
    }

    pub fn p(&self) -> f64 {
        f64::from(self.half_p) / 2.0
    }

    pub fn combo(&self) -> Combo {
        Combo::new(self.half_p, self.q)
    }

    /// Raw value for a frequency in GHz and a utilization.
    #[inline]
    pub fn eval<T: Scalar>(&self, f_ghz: T, u: T) -> T {
        let fp = pow_half(f_ghz, self.half_p);
        if self.q == 1 {
            fp * u
        } else {
            fp
        }
    }
}

impl fmt::Display for RegressorTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.scope, self.combo())
    }
}

/// `x^(half/2)` evaluated as an integer power times at most one square root.
#[inline]
pub fn pow_half<T: Scalar>(x: T, half: u8) -> T {
    let whole = x.powi(i32::from(half / 2));
    if half % 2 == 1 {
        whole * x.sqrt()
    } else {
        whole
    }
}

/// Per-term z-score parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization<T> {
    pub mean: T,
    pub scale: T,
    /// Column had zero variance when fitted; scale was forced to 1.
    pub flagged: bool,
}

/// Ordered regressor list plus optional normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressorSpec<T> {
    terms: Vec<RegressorTerm>,
    normalization: Option<Vec<Normalization<T>>>,
}

impl<T: Scalar> RegressorSpec<T> {
    pub fn new(terms: Vec<RegressorTerm>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for t in &terms {
            t.check()?;
            if !seen.insert(*t) {
                return Err(Error::InvalidArgument(format!("duplicate regressor {t}")));
            }
        }
        if terms.is_empty() {
            return Err(Error::InvalidArgument("regressor list is empty".into()));
        }
        Ok(RegressorSpec {
            terms,
            normalization: None,
        })
    }

    pub fn with_normalization(mut self, norm: Vec<Normalization<T>>) -> Result<Self> {
        if norm.len() != self.terms.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} normalization entries for {} terms",
                norm.len(),
                self.terms.len()
            )));
        }
        if norm.iter().any(|n| !(n.scale > T::zero()) || !n.mean.is_finite()) {
            return Err(Error::InvalidArgument(
                "normalization scales must be positive and means finite".into(),
            ));
        }
        self.normalization = Some(norm);
        Ok(self)
    }

    /// Instantiates `combos` (raw inputs first when `with_raw`).
    pub fn from_combos(combos: &[Combo], with_raw: bool) -> Result<Self> {
        let mut terms = Vec::new();
        let mut push = |c: Combo| {
            for t in c.instantiate() {
                if !terms.contains(&t) {
                    terms.push(t);
                }
            }
        };
        if with_raw {
            push(RAW_FREQ);
            push(RAW_UTIL);
        }
        combos.iter().copied().for_each(&mut push);
        Self::new(terms)
    }

    pub fn terms(&self) -> &[RegressorTerm] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn normalization(&self) -> Option<&[Normalization<T>]> {
        self.normalization.as_deref()
    }

    pub fn without_normalization(&self) -> Self {
        RegressorSpec {
            terms: self.terms.clone(),
            normalization: None,
        }
    }

    /// Distinct exponent combos used by the spec.
    pub fn combos(&self) -> BTreeSet<Combo> {
        self.terms.iter().map(RegressorTerm::combo).collect()
    }

    /// Frequency factor `f^p` of every term for the given cluster
    /// frequencies in MHz. Pair with [`Self::apply_with_factors`] to evaluate
    /// many utilization vectors at fixed frequencies.
    pub fn frequency_factors(&self, f_big_mhz: T, f_little_mhz: T) -> Vec<T> {
        let k = T::of(1000.0);
        let (fb, fl) = (f_big_mhz / k, f_little_mhz / k);
        self.terms
            .iter()
            .map(|t| {
                let f = match t.scope.cluster() {
                    Cluster::Big => fb,
                    Cluster::Little => fl,
                };
                pow_half(f, t.half_p)
            })
            .collect()
    }

    /// Completes the regressor vector from precomputed frequency factors.
    #[inline]
    pub fn apply_with_factors(&self, factors: &[T], util: &[T; CORES], out: &mut [T]) {
        for (j, t) in self.terms.iter().enumerate() {
            let mut x = factors[j];
            if let (Scope::Core(i), 1) = (t.scope, t.q) {
                x *= util[usize::from(i)];
            }
            out[j] = x;
        }
        if let Some(norm) = &self.normalization {
            for (x, n) in out.iter_mut().zip(norm) {
                *x = (*x - n.mean) / n.scale;
            }
        }
    }

    /// Regressor vector for one input sample; frequencies in MHz.
    pub fn apply(&self, f_big_mhz: T, f_little_mhz: T, util: &[T; CORES]) -> Result<Vec<T>> {
        if !(f_big_mhz > T::zero()) || !(f_little_mhz > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "frequencies must be positive, got {f_big_mhz} / {f_little_mhz}"
            )));
        }
        if let Some(u) = util.iter().find(|u| !(**u >= T::zero())) {
            return Err(Error::InvalidArgument(format!("negative utilization {u}")));
        }
        let factors = self.frequency_factors(f_big_mhz, f_little_mhz);
        let mut out = vec![T::zero(); self.len()];
        self.apply_with_factors(&factors, util, &mut out);
        Ok(out)
    }

    /// Regressor matrix (samples × terms) for every row of `trace`.
    pub fn apply_trace(&self, trace: &Trace<T>) -> Result<DMatrix<T>> {
        let n = trace.len();
        let mut m = DMatrix::zeros(n, self.len());
        let mut row = vec![T::zero(); self.len()];
        for k in 0..n {
            let s = trace.sample(k);
            let v = self
                .apply(s.f_big, s.f_little, &s.util)
                .map_err(|e| Error::AtRow {
                    row: k,
                    source: Box::new(e),
                })?;
            row.copy_from_slice(&v);
            for (j, x) in row.iter().enumerate() {
                m[(k, j)] = *x;
            }
        }
        Ok(m)
    }

    /// Fits per-column mean and population standard deviation on a raw
    /// (unnormalized) regressor matrix.
    pub fn fit_normalization(&self, matrix: &DMatrix<T>) -> Result<Self> {
        let (rows, cols) = matrix.shape();
        if cols != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "matrix has {cols} columns, spec has {} terms",
                self.len()
            )));
        }
        if rows < 2 {
            return Err(Error::InsufficientData(format!(
                "normalization needs at least 2 rows, got {rows}"
            )));
        }
        let n = T::of_usize(rows);
        let norm = (0..cols)
            .map(|j| {
                let col = matrix.column(j);
                let mean = col.sum() / n;
                let var = col.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
                let std = var.sqrt();
                let floor = T::machine_epsilon() * T::of(64.0) * mean.abs().max(T::one());
                if std <= floor {
                    Normalization {
                        mean,
                        scale: T::one(),
                        flagged: true,
                    }
                } else {
                    Normalization {
                        mean,
                        scale: std,
                        flagged: false,
                    }
                }
            })
            .collect();
        self.without_normalization().with_normalization(norm)
    }

    /// Applies the stored normalization to a raw regressor matrix in place.
    pub fn normalize_matrix(&self, matrix: &mut DMatrix<T>) {
        if let Some(norm) = &self.normalization {
            for (j, n) in norm.iter().enumerate() {
                for x in matrix.column_mut(j).iter_mut() {
                    *x = (*x - n.mean) / n.scale;
                }
            }
        }
    }

    pub fn to_records(&self) -> Vec<TermRecord> {
        self.terms
            .iter()
            .enumerate()
            .map(|(j, t)| {
                let n = self.normalization.as_ref().map(|n| n[j]);
                TermRecord {
                    scope: t.scope.to_string(),
                    p: t.p(),
                    q: t.q,
                    mean: n.map(|n| n.mean.as_f64()),
                    scale: n.map(|n| n.scale.as_f64()),
                    flagged: n.map(|n| n.flagged).unwrap_or(false),
                }
            })
            .collect()
    }

    pub fn from_records(records: &[TermRecord]) -> Result<Self> {
        let terms = records
            .iter()
            .map(|r| RegressorTerm::new(r.scope.parse()?, r.p, r.q))
            .collect::<Result<Vec<_>>>()?;
        let spec = Self::new(terms)?;
        let with_norm = records.iter().filter(|r| r.mean.is_some() && r.scale.is_some()).count();
        if with_norm == 0 {
            return Ok(spec);
        }
        if with_norm != records.len() {
            return Err(Error::Format(
                "normalization present on some regressors but not all".into(),
            ));
        }
        let norm = records
            .iter()
            .map(|r| Normalization {
                mean: T::of(r.mean.unwrap_or_default()),
                scale: T::of(r.scale.unwrap_or_default()),
                flagged: r.flagged,
            })
            .collect();
        spec.with_normalization(norm)
    }
}

/// Serialized form of one regressor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermRecord {
    pub scope: String,
    pub p: f64,
    pub q: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub flagged: bool,
}

/// The 34-term set: per core `f^1.5·u, f^2·u, f^3·u, u`, plus `f^2` per cluster.
pub fn eq7_regressors<T: Scalar>() -> RegressorSpec<T> {
    let mut terms = Vec::with_capacity(34);
    for i in 0..CORES as u8 {
        for half in [3, 4, 6, 0] {
            terms.push(RegressorTerm {
                scope: Scope::Core(i),
                half_p: half,
                q: 1,
            });
        }
    }
    for c in [Cluster::Big, Cluster::Little] {
        terms.push(RegressorTerm {
            scope: Scope::Cluster(c),
            half_p: 4,
            q: 0,
        });
    }
    RegressorSpec::new(terms).expect("fixed regressor set is valid")
}

/// The 58-term search family: the 10 raw inputs, `u_i·f^p` for p in
/// {1, 1.5, 2, 2.5, 3} on every core and `f^p` for p in {1.5, 2, 2.5, 3}
/// on both clusters.
pub fn candidate_regressors<T: Scalar>() -> RegressorSpec<T> {
    RegressorSpec::from_combos(&search_combos(), true).expect("fixed regressor family is valid")
}
