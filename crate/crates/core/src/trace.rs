//! Uniformly sampled multivariate traces and their CSV representation.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::soc::CORES;

/// First line of every trace file.
pub const TRACE_FORMAT_TAG: &str = "# thermsid-trace v1";
pub const TRACE_HEADER: &str = "t_s,f_big_mhz,f_little_mhz,u0,u1,u2,u3,u4,u5,u6,u7,temp_c";

/// Inputs (cluster frequencies in MHz, per-core utilizations) and the
/// regressand (maximum die temperature, °C) sampled at `sample_rate` Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace<T> {
    pub sample_rate: T,
    pub t: Vec<T>,
    pub f_big: Vec<T>,
    pub f_little: Vec<T>,
    pub util: [Vec<T>; CORES],
    pub temp: Vec<T>,
}

/// One sample of a trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample<T> {
    pub t: T,
    pub f_big: T,
    pub f_little: T,
    pub util: [T; CORES],
    pub temp: T,
}

impl<T: Scalar> Trace<T> {
    pub fn new(sample_rate: T) -> Self {
        Trace {
            sample_rate,
            t: Vec::new(),
            f_big: Vec::new(),
            f_little: Vec::new(),
            util: Default::default(),
            temp: Vec::new(),
        }
    }

    pub fn with_capacity(sample_rate: T, n: usize) -> Self {
        Trace {
            sample_rate,
            t: Vec::with_capacity(n),
            f_big: Vec::with_capacity(n),
            f_little: Vec::with_capacity(n),
            util: std::array::from_fn(|_| Vec::with_capacity(n)),
            temp: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn push(&mut self, s: Sample<T>) {
        self.t.push(s.t);
        self.f_big.push(s.f_big);
        self.f_little.push(s.f_little);
        for (col, u) in self.util.iter_mut().zip(s.util) {
            col.push(u);
        }
        self.temp.push(s.temp);
    }

    pub fn sample(&self, k: usize) -> Sample<T> {
        Sample {
            t: self.t[k],
            f_big: self.f_big[k],
            f_little: self.f_little[k],
            util: std::array::from_fn(|i| self.util[i][k]),
            temp: self.temp[k],
        }
    }

    /// Copy of the samples in `range`, keeping their timestamps.
    pub fn slice(&self, range: Range<usize>) -> Trace<T> {
        Trace {
            sample_rate: self.sample_rate,
            t: self.t[range.clone()].to_vec(),
            f_big: self.f_big[range.clone()].to_vec(),
            f_little: self.f_little[range.clone()].to_vec(),
            util: std::array::from_fn(|i| self.util[i][range.clone()].to_vec()),
            temp: self.temp[range].to_vec(),
        }
    }

    /// Checks the column-length, sample-rate and finiteness invariants.
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > T::zero()) || !self.sample_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sample rate must be positive, got {}",
                self.sample_rate
            )));
        }
        let n = self.len();
        let lens_ok = self.f_big.len() == n
            && self.f_little.len() == n
            && self.temp.len() == n
            && self.util.iter().all(|c| c.len() == n);
        if !lens_ok {
            return Err(Error::DimensionMismatch("trace columns differ in length".into()));
        }
        let cols = [&self.t, &self.f_big, &self.f_little, &self.temp];
        if cols.iter().any(|c| c.iter().any(|x| !x.is_finite()))
            || self.util.iter().any(|c| c.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::NonFinite("trace".into()));
        }
        Ok(())
    }

    pub fn duration(&self) -> T {
        T::of_usize(self.len()) / self.sample_rate
    }

    /// Writes the CSV representation. Utilizations carry four decimals,
    /// everything else the shortest round-trip decimal.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = BufWriter::with_capacity(1 << 20, w);
        writeln!(w, "{TRACE_FORMAT_TAG} sample_rate_hz={}", self.sample_rate)?;
        writeln!(w, "{TRACE_HEADER}")?;
        for k in 0..self.len() {
            write!(w, "{},{},{}", self.t[k], self.f_big[k], self.f_little[k])?;
            for col in &self.util {
                write!(w, ",{:.4}", col[k])?;
            }
            writeln!(w, ",{}", self.temp[k])?;
        }
        w.flush()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.write_csv(f)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Trace<T>> {
        let name = path.display().to_string();
        let f = std::fs::File::open(path).map_err(|e| Error::io(name.clone(), e))?;
        Self::read_csv(BufReader::with_capacity(1 << 20, f), &name)
    }

    /// Parses a trace; `source` names the input in error messages.
    pub fn read_csv<R: BufRead>(reader: R, source: &str) -> Result<Trace<T>> {
        let err = |line: usize, message: String| Error::Parse {
            path: source.to_string(),
            line,
            message,
        };
        let mut lines = reader.lines();
        let mut next = |line: usize| -> Result<Option<String>> {
            lines
                .next()
                .transpose()
                .map_err(|e| err(line, format!("read failed: {e}")))
        };
        let tag = next(1)?.ok_or_else(|| err(1, "empty file".into()))?;
        let rate = tag
            .strip_prefix(TRACE_FORMAT_TAG)
            .and_then(|rest| rest.trim().strip_prefix("sample_rate_hz="))
            .ok_or_else(|| {
                Error::Format(format!(
                    "{source}: expected first line `{TRACE_FORMAT_TAG} sample_rate_hz=<hz>`, got {tag:?}"
                ))
            })?;
        let rate: f64 = rate
            .trim()
            .parse()
            .map_err(|e| err(1, format!("bad sample rate: {e}")))?;
        let header = next(2)?.ok_or_else(|| err(2, "missing header".into()))?;
        if header.trim_end() != TRACE_HEADER {
            return Err(err(2, format!("expected header `{TRACE_HEADER}`")));
        }
        let mut trace = Trace::new(T::of(rate));
        let mut line_no = 2;
        while let Some(line) = next(line_no + 1)? {
            line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut vals = [0.0f64; 12];
            let mut count = 0;
            for field in line.trim_end().split(',') {
                if count == 12 {
                    return Err(err(line_no, "too many fields (expected 12)".into()));
                }
                vals[count] = field
                    .parse()
                    .map_err(|e| err(line_no, format!("field {} ({field:?}): {e}", count + 1)))?;
                count += 1;
            }
            if count != 12 {
                return Err(err(line_no, format!("expected 12 fields, got {count}")));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(err(line_no, "non-finite value".into()));
            }
            trace.push(Sample {
                t: T::of(vals[0]),
                f_big: T::of(vals[1]),
                f_little: T::of(vals[2]),
                util: std::array::from_fn(|i| T::of(vals[3 + i])),
                temp: T::of(vals[11]),
            });
        }
        trace.validate()?;
        Ok(trace)
    }
}
