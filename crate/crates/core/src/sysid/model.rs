use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::RegressorSpec;
use crate::linalg::{lstsq, spectral_radius};
use crate::scalar::Scalar;

/// Models whose spectral radius is not below `1 - STABILITY_MARGIN` have no
/// usable steady state.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Innovation-form state-space model
/// `x(k+1) = A x(k) + B v(k) + K e(k)`, `y(k) = C x(k) + offset + e(k)`,
/// with no direct feedthrough.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpaceModel<T: Scalar> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    c: DMatrix<T>,
    k: DMatrix<T>,
    output_offset: T,
    sample_rate: T,
    spectral_radius: T,
    horizon: usize,
    spec: Option<RegressorSpec<T>>,
}

impl<T: Scalar> StateSpaceModel<T> {
    /// `a` is n×n, `b` n×m, `c` 1×n and `k` n×1.
    pub fn new(
        a: DMatrix<T>,
        b: DMatrix<T>,
        c: DMatrix<T>,
        k: DMatrix<T>,
        output_offset: T,
        sample_rate: T,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || c.shape() != (1, n) || k.shape() != (n, 1) {
            return Err(Error::DimensionMismatch(format!(
                "A {:?}, B {:?}, C {:?}, K {:?} do not describe one n-state system",
                a.shape(),
                b.shape(),
                c.shape(),
                k.shape()
            )));
        }
        let finite = |m: &DMatrix<T>| m.iter().all(|x| x.is_finite());
        if !(finite(&a) && finite(&b) && finite(&c) && finite(&k) && output_offset.is_finite()) {
            return Err(Error::NonFinite("state-space matrices".into()));
        }
        if !(sample_rate > T::zero()) {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        let spectral_radius = spectral_radius(&a);
        Ok(StateSpaceModel {
            a,
            b,
            c,
            k,
            output_offset,
            sample_rate,
            spectral_radius,
            horizon: 0,
            spec: None,
        })
    }

    pub(crate) fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    /// Attaches the (normalized) regressor map that produces this model's
    /// inputs.
    pub fn with_spec(mut self, spec: RegressorSpec<T>) -> Result<Self> {
        if spec.len() != self.m() {
            return Err(Error::DimensionMismatch(format!(
                "spec has {} regressors, model expects {}",
                spec.len(),
                self.m()
            )));
        }
        self.spec = Some(spec);
        Ok(self)
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<T> {
        &self.c
    }

    pub fn k(&self) -> &DMatrix<T> {
        &self.k
    }

    pub fn output_offset(&self) -> T {
        self.output_offset
    }

    pub fn sample_rate(&self) -> T {
        self.sample_rate
    }

    pub fn spectral_radius(&self) -> T {
        self.spectral_radius
    }

    pub fn is_stable(&self) -> bool {
        self.spectral_radius < T::one()
    }

    /// Block rows used during identification (0 for hand-built models).
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn spec(&self) -> Option<&RegressorSpec<T>> {
        self.spec.as_ref()
    }

    /// Entries of A, B and C. K is excluded.
    pub fn parameter_count(&self) -> usize {
        parameter_count(self.order(), self.m())
    }

    fn check_inputs(&self, v: &DMatrix<T>) -> Result<()> {
        if v.ncols() != self.m() {
            return Err(Error::DimensionMismatch(format!(
                "input has {} columns, model expects {}",
                v.ncols(),
                self.m()
            )));
        }
        Ok(())
    }

    /// Free-run response from the zero state.
    pub fn simulate(&self, v: &DMatrix<T>) -> Result<Vec<T>> {
        self.simulate_from(v, &DVector::zeros(self.order()))
    }

    /// Free-run response from `x0`.
    pub fn simulate_from(&self, v: &DMatrix<T>, x0: &DVector<T>) -> Result<Vec<T>> {
        self.check_inputs(v)?;
        if x0.len() != self.order() {
            return Err(Error::DimensionMismatch(format!(
                "initial state has {} entries, model order is {}",
                x0.len(),
                self.order()
            )));
        }
        // B v for every sample at once, then the recursion on n-vectors.
        let drive = &self.b * v.transpose();
        let c = self.c.row(0).transpose();
        let mut x = x0.clone();
        let mut next = DVector::zeros(self.order());
        let mut out = Vec::with_capacity(v.nrows());
        for k in 0..v.nrows() {
            out.push(c.dot(&x) + self.output_offset);
            next.gemv(T::one(), &self.a, &x, T::zero());
            next += drive.column(k);
            std::mem::swap(&mut x, &mut next);
        }
        Ok(out)
    }

    /// One-step-ahead predictor driven by measured outputs.
    pub fn predict_one_step(&self, v: &DMatrix<T>, y: &[T]) -> Result<Vec<T>> {
        self.check_inputs(v)?;
        if y.len() != v.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} input rows but {} outputs",
                v.nrows(),
                y.len()
            )));
        }
        let a_kc = &self.a - &self.k * &self.c;
        let drive = &self.b * v.transpose();
        let c = self.c.row(0).transpose();
        let mut x = DVector::zeros(self.order());
        let mut next = DVector::zeros(self.order());
        let mut out = Vec::with_capacity(y.len());
        for (k, &yk) in y.iter().enumerate() {
            let y_hat = c.dot(&x) + self.output_offset;
            out.push(y_hat);
            next.gemv(T::one(), &a_kc, &x, T::zero());
            next += drive.column(k);
            next.axpy(yk - self.output_offset, &self.k.column(0), T::one());
            std::mem::swap(&mut x, &mut next);
        }
        Ok(out)
    }

    /// DC gain `C (I − A)⁻¹ B` as a 1×m row.
    pub fn steady_state_gain(&self) -> Result<DMatrix<T>> {
        if !(self.spectral_radius < T::one() - T::of(STABILITY_MARGIN)) {
            return Err(Error::Unstable {
                radius: self.spectral_radius.as_f64(),
            });
        }
        let n = self.order();
        let lu = (DMatrix::identity(n, n) - &self.a).lu();
        let x = lu.solve(&self.b).ok_or_else(|| Error::Unstable {
            radius: self.spectral_radius.as_f64(),
        })?;
        Ok(&self.c * x)
    }

    /// Least-squares estimate of the state at the first row of `v` from the
    /// first `window` measured outputs.
    pub fn estimate_initial_state(&self, v: &DMatrix<T>, y: &[T], window: usize) -> Result<DVector<T>> {
        self.check_inputs(v)?;
        let w = window.min(y.len()).min(v.nrows());
        if w == 0 {
            return Err(Error::InsufficientData("empty estimation window".into()));
        }
        let n = self.order();
        let forced = self.simulate(&v.rows(0, w).clone_owned())?;
        // Observability rows C A^k stacked for k < w.
        let mut obs = DMatrix::zeros(w, n);
        let mut row = self.c.clone();
        for k in 0..w {
            obs.set_row(k, &row.row(0));
            row = &row * &self.a;
        }
        let rhs = DMatrix::from_fn(w, 1, |k, _| y[k] - forced[k]);
        let x0 = lstsq(&obs, &rhs, T::of(1e-10));
        Ok(x0.column(0).into_owned())
    }
}

/// `n² + n·m + n`: entries of A, B and C.
pub fn parameter_count(order: usize, m: usize) -> usize {
    order * order + order * m + order
}
