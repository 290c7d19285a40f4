use log::{debug, warn};
use nalgebra::{DMatrix, SVD};

use super::model::StateSpaceModel;
use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_psd, hankel_columns, hankel_gram, hankel_transposed, lstsq, max_abs_diag,
    solve_right_lower, spectral_radius, HankelLayout,
};
use crate::scalar::Scalar;

/// Relative singular-value floor below which directions count as absent.
const SV_FLOOR: f64 = 1e-10;
const RICCATI_MAX_ITER: usize = 10_000;
const RICCATI_TOL: f64 = 1e-10;

/// How the lower-triangular factor of the stacked Hankel data is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LqRoute {
    /// Householder for small problems, Gram otherwise.
    #[default]
    Auto,
    /// Cholesky of the lag-structured Gram matrix. Memory and time scale
    /// with the Hankel row count, not the sample count.
    Gram,
    /// Householder QR of the explicit transposed Hankel matrix.
    Householder,
}

/// `max(order + 2, ceil(1.2 · order))`.
pub fn default_horizon(order: usize) -> usize {
    (order + 2).max((order * 6).div_ceil(5))
}

/// N4SID identification with identity weighting.
#[derive(Clone, Debug)]
pub struct N4sid {
    order: usize,
    horizon: Option<usize>,
    route: LqRoute,
    sample_rate: f64,
}

impl N4sid {
    pub fn new(order: usize) -> Self {
        N4sid {
            order,
            horizon: None,
            route: LqRoute::Auto,
            sample_rate: 1.0,
        }
    }

    pub fn horizon(mut self, horizon: usize) -> Self {
        self.horizon = Some(horizon);
        self
    }

    pub fn route(mut self, route: LqRoute) -> Self {
        self.route = route;
        self
    }

    pub fn sample_rate(mut self, hz: f64) -> Self {
        self.sample_rate = hz;
        self
    }

    pub fn effective_horizon(&self) -> usize {
        self.horizon.unwrap_or_else(|| default_horizon(self.order))
    }

    /// Identifies `x(k+1) = A x + B v + K e`, `y = C x + offset + e` from
    /// inputs `v` (samples × m) and output `y`.
    pub fn identify<T: Scalar>(&self, v: &DMatrix<T>, y: &[T]) -> Result<StateSpaceModel<T>> {
        let (n_samples, m) = v.shape();
        let (n, i) = (self.order, self.effective_horizon());
        if y.len() != n_samples {
            return Err(Error::DimensionMismatch(format!(
                "{n_samples} input rows but {} outputs",
                y.len()
            )));
        }
        if n == 0 || m == 0 {
            return Err(Error::InvalidArgument("order and input count must be at least 1".into()));
        }
        if i <= n {
            return Err(Error::InvalidArgument(format!(
                "horizon {i} must exceed order {n}"
            )));
        }
        let needed = 2 * i * (m + 1) + n;
        if n_samples < needed {
            return Err(Error::InsufficientData(format!(
                "{n_samples} samples, need at least {needed} for order {n}, horizon {i}, {m} inputs"
            )));
        }
        if v.iter().chain(y).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("identification data".into()));
        }
        let rate = T::of(self.sample_rate);
        let count = T::of_usize(n_samples);
        let y_mean = y.iter().fold(T::zero(), |a, &b| a + b) / count;
        let u_mean: Vec<T> = v.column_iter().map(|c| c.sum() / count).collect();

        let mut data = DMatrix::<T>::zeros(n_samples, m + 1);
        for (j, col) in v.column_iter().enumerate() {
            data.column_mut(j).copy_from(&col.add_scalar(-u_mean[j]));
        }
        for (t, &yt) in y.iter().enumerate() {
            data[(t, m)] = yt - y_mean;
        }
        if data.column(m).iter().all(|&x| x == T::zero()) {
            warn!("output is constant; returning the null system");
            return null_model(n, m, y_mean, rate, i);
        }
        for (j, mean) in u_mean.iter().enumerate() {
            let col = data.column(j);
            let scale = mean.abs().max(T::one());
            if col.iter().all(|x| x.abs() <= T::machine_epsilon() * scale) {
                return Err(Error::RankDeficient {
                    stage: "input excitation",
                    detail: format!("input column {j} is constant"),
                });
            }
        }

        let layout = HankelLayout { m, i };
        let l = self.lower_factor(&data, &layout)?;

        // Oblique projection of future outputs onto past data along future
        // inputs: O = L32 L22⁻¹ [L21 L22] in the orthogonal coordinates.
        let (uf, wp, yf) = (layout.future_inputs(), layout.past(), layout.future_outputs());
        let l22 = l.view((wp.start, wp.start), (wp.len(), wp.len())).clone_owned();
        let l32 = l.view((yf.start, wp.start), (yf.len(), wp.len())).clone_owned();
        let l21 = l.view((wp.start, uf.start), (wp.len(), uf.len()));
        let tol = max_abs_diag(&l22) * (T::machine_epsilon() * T::of_usize(layout.rows())).sqrt();
        let z = solve_right_lower(&l32, &l22, tol);
        let mut proj = DMatrix::<T>::zeros(i, uf.len() + wp.len());
        proj.columns_mut(0, uf.len()).copy_from(&(&z * l21));
        proj.columns_mut(uf.len(), wp.len()).copy_from(&(&z * &l22));

        let svd = SVD::new(proj, true, false);
        let mut order_idx: Vec<usize> = (0..svd.singular_values.len()).collect();
        order_idx.sort_by(|&a, &b| {
            svd.singular_values[b]
                .partial_cmp(&svd.singular_values[a])
                .unwrap()
        });
        let sv: Vec<T> = order_idx.iter().map(|&k| svd.singular_values[k]).collect();
        let s1 = sv[0];
        let available = sv.iter().filter(|&&s| s > s1 * T::of(SV_FLOOR)).count();
        debug!(
            "n4sid: order {n}, horizon {i}, leading singular values {:?}",
            &sv[..sv.len().min(n + 2)]
        );
        if s1 == T::zero() {
            warn!("projection vanished; returning the null system");
            return null_model(n, m, y_mean, rate, i);
        }
        if n > available {
            return Err(Error::RankDeficient {
                stage: "order selection",
                detail: format!("order {n} requested but only {available} singular values are significant"),
            });
        }
        let u = svd.u.as_ref().expect("left singular vectors requested");
        // Γ† = S^{-1/2} U1ᵀ; state map K_x = Γ† Z over the past rows.
        let mut kx = DMatrix::<T>::zeros(n, wp.len());
        for (r, &k) in order_idx.iter().take(n).enumerate() {
            let w = T::one() / sv[r].sqrt();
            let row = u.column(k).transpose() * &z * w;
            kx.set_row(r, &row.row(0));
        }

        let states = state_sequence(&data, &kx, &layout);
        let model = regress(&data, &states, m, i)?;
        let (a, b, c, k) = model;
        let offset = {
            let rho = spectral_radius(&a);
            let mean_u = DMatrix::from_column_slice(m, 1, &u_mean);
            if rho < T::one() - T::of(super::STABILITY_MARGIN) {
                let gain = (DMatrix::identity(n, n) - &a)
                    .lu()
                    .solve(&(&b * &mean_u))
                    .map(|x| (&c * x)[(0, 0)]);
                y_mean - gain.unwrap_or(T::zero())
            } else {
                y_mean
            }
        };
        Ok(StateSpaceModel::new(a, b, c, k, offset, rate)?.with_horizon(i))
    }

    fn lower_factor<T: Scalar>(&self, data: &DMatrix<T>, layout: &HankelLayout) -> Result<DMatrix<T>> {
        let nc = hankel_columns(data.nrows(), layout);
        let p = layout.rows();
        let route = match self.route {
            LqRoute::Auto if (2 * nc * p * p) as f64 <= 2e9 => LqRoute::Householder,
            LqRoute::Auto => LqRoute::Gram,
            r => r,
        };
        if route == LqRoute::Householder {
            if nc < p {
                return Err(Error::InsufficientData(format!(
                    "{nc} Hankel columns cannot span {p} rows"
                )));
            }
            let r = hankel_transposed(data, layout).qr().r();
            let mut l = r.transpose();
            for j in 0..p {
                if l[(j, j)] < T::zero() {
                    l.column_mut(j).neg_mut();
                }
            }
            Ok(l)
        } else {
            let mut g = hankel_gram(data, layout);
            let rank = cholesky_psd(&mut g);
            debug!("n4sid: Gram factor rank {rank} of {p}");
            Ok(g)
        }
    }
}

/// Functional form of [`N4sid::identify`].
pub fn n4sid_identify<T: Scalar>(
    v: &DMatrix<T>,
    y: &[T],
    order: usize,
    horizon: usize,
) -> Result<StateSpaceModel<T>> {
    N4sid::new(order).horizon(horizon).identify(v, y)
}

fn null_model<T: Scalar>(n: usize, m: usize, offset: T, rate: T, i: usize) -> Result<StateSpaceModel<T>> {
    Ok(StateSpaceModel::new(
        DMatrix::zeros(n, n),
        DMatrix::zeros(n, m),
        DMatrix::zeros(1, n),
        DMatrix::zeros(n, 1),
        offset,
        rate,
    )?
    .with_horizon(i))
}

/// State estimates for times `i..=N` (rows), each a fixed linear map of the
/// preceding `i` samples of inputs and output.
fn state_sequence<T: Scalar>(data: &DMatrix<T>, kx: &DMatrix<T>, layout: &HankelLayout) -> DMatrix<T> {
    let (m, i) = (layout.m, layout.i);
    let n = kx.nrows();
    let rows = data.nrows() - i + 1;
    let mut x = DMatrix::<T>::zeros(rows, n);
    let mut kk_t = DMatrix::<T>::zeros(m + 1, n);
    for lag in 0..i {
        for a in 0..m {
            kk_t.row_mut(a).copy_from(&kx.column(lag * m + a).transpose());
        }
        kk_t.row_mut(m).copy_from(&kx.column(m * i + lag).transpose());
        x.gemm(T::one(), &data.rows(lag, rows), &kk_t, T::one());
    }
    x
}

type Matrices<T> = (DMatrix<T>, DMatrix<T>, DMatrix<T>, DMatrix<T>);

/// Least-squares recovery of C, then [A B], then K from the residual
/// covariances.
fn regress<T: Scalar>(data: &DMatrix<T>, states: &DMatrix<T>, m: usize, i: usize) -> Result<Matrices<T>> {
    let n = states.ncols();
    let steps = states.nrows() - 1; // transitions i → i+1 … N-1 → N
    let x_now = states.rows(0, steps).clone_owned();
    let rcond = T::of(SV_FLOOR);

    let y_now = data.view((i, m), (steps, 1)).clone_owned();
    let c = lstsq(&x_now, &y_now, rcond).transpose();

    let mut reg = DMatrix::<T>::zeros(steps, n + m);
    reg.columns_mut(0, n).copy_from(&x_now);
    reg.columns_mut(n, m).copy_from(&data.view((i, 0), (steps, m)));
    let x_next = states.rows(1, steps).clone_owned();
    let ab = lstsq(&reg, &x_next, rcond).transpose();
    let a = ab.columns(0, n).clone_owned();
    let b = ab.columns(n, m).clone_owned();
    if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("identified system matrices".into()));
    }

    let w = &x_next - &reg * ab.transpose();
    let e = &y_now - &x_now * c.transpose();
    let scale = T::one() / T::of_usize(steps);
    let q = w.transpose() * &w * scale;
    let r = (e.transpose() * &e)[(0, 0)] * scale;
    let s = w.transpose() * &e * scale;
    let k = match super::dare(&a, &c, &q, r, &s, RICCATI_MAX_ITER, T::of(RICCATI_TOL)) {
        Some(sol) if spectral_radius(&(&a - &sol.k * &c)) < T::one() => sol.k,
        Some(_) => {
            warn!("Kalman predictor is unstable; using K = 0");
            DMatrix::zeros(n, 1)
        }
        None => {
            warn!("Riccati iteration failed; using K = 0");
            DMatrix::zeros(n, 1)
        }
    };
    Ok((a, b, c, k))
}
