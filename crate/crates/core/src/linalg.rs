//! Dense kernels behind subspace identification: lag-structured Gram
//! matrices of block-Hankel data, a blocked semidefinite Cholesky, triangular
//! solves that tolerate zero pivots and orthogonal least squares.

use std::ops::Range;

use nalgebra::{DMatrix, SVD};

use crate::scalar::Scalar;

/// Row ordering of the stacked block-Hankel matrix `[U_f; U_p; Y_p; Y_f]`
/// for `m` inputs, one output and `i` block rows per half.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HankelLayout {
    pub m: usize,
    pub i: usize,
}

impl HankelLayout {
    /// Signals per time step (inputs plus the output).
    pub fn signals(&self) -> usize {
        self.m + 1
    }

    pub fn rows(&self) -> usize {
        2 * self.i * self.signals()
    }

    /// Row holding signal `sig` at lag `lag` (`sig == m` is the output).
    #[inline]
    pub fn row(&self, lag: usize, sig: usize) -> usize {
        let (m, i) = (self.m, self.i);
        match (sig < m, lag < i) {
            (true, false) => (lag - i) * m + sig,
            (true, true) => m * i + lag * m + sig,
            (false, true) => 2 * m * i + lag,
            (false, false) => 2 * m * i + i + (lag - i),
        }
    }

    pub fn future_inputs(&self) -> Range<usize> {
        0..self.m * self.i
    }

    pub fn past(&self) -> Range<usize> {
        self.m * self.i..2 * self.m * self.i + self.i
    }

    pub fn future_outputs(&self) -> Range<usize> {
        2 * self.m * self.i + self.i..self.rows()
    }
}

/// Number of Hankel columns available from `n` samples.
pub fn hankel_columns(n: usize, layout: &HankelLayout) -> usize {
    (n + 1).saturating_sub(2 * layout.i)
}

/// `H Hᵀ / N_c` for the block-Hankel matrix of `data` (samples × signals),
/// computed from lag correlations instead of forming `H`.
///
/// Entry `(row(k, a), row(k + d, b))` equals
/// `Σ_{t=k}^{k+N_c-1} data[t, a] · data[t + d, b]`, so every lag `d` needs
/// one correlation over the first window and `2i - d - 1` rank-one window
/// slides.
pub fn hankel_gram<T: Scalar>(data: &DMatrix<T>, layout: &HankelLayout) -> DMatrix<T> {
    let s = layout.signals();
    assert_eq!(data.ncols(), s, "data must have m + 1 columns");
    let lags = 2 * layout.i;
    let nc = hankel_columns(data.nrows(), layout);
    assert!(nc > 0, "not enough samples for the Hankel layout");

    // corr[:, d*s + b] = Σ_{t<nc} data[t, :] · data[t + d, b]
    let mut corr = DMatrix::<T>::zeros(s, lags * s);
    const CHUNK: usize = 2048;
    let mut shifted = DMatrix::<T>::zeros(CHUNK.min(nc), lags * s);
    for t0 in (0..nc).step_by(CHUNK) {
        let c = CHUNK.min(nc - t0);
        if shifted.nrows() != c {
            shifted = DMatrix::zeros(c, lags * s);
        }
        for d in 0..lags {
            for b in 0..s {
                shifted
                    .column_mut(d * s + b)
                    .copy_from(&data.view((t0 + d, b), (c, 1)));
            }
        }
        let head = data.rows(t0, c).transpose();
        corr.gemm(T::one(), &head, &shifted, T::one());
    }

    let p = layout.rows();
    let mut g = DMatrix::<T>::zeros(p, p);
    let mut acc = DMatrix::<T>::zeros(s, s);
    for d in 0..lags {
        acc.copy_from(&corr.columns(d * s, s));
        for k in 0..lags - d {
            if k > 0 {
                let (old, new) = (k - 1, k - 1 + nc);
                for b in 0..s {
                    let (yo, yn) = (data[(old + d, b)], data[(new + d, b)]);
                    for a in 0..s {
                        acc[(a, b)] += data[(new, a)] * yn - data[(old, a)] * yo;
                    }
                }
            }
            for b in 0..s {
                let col = layout.row(k + d, b);
                for a in 0..s {
                    let row = layout.row(k, a);
                    g[(row, col)] = acc[(a, b)];
                    g[(col, row)] = acc[(a, b)];
                }
            }
        }
    }
    g /= T::of_usize(nc);
    g
}

/// Explicit `Hᵀ / sqrt(N_c)` (Hankel columns × rows); only for small problems.
pub fn hankel_transposed<T: Scalar>(data: &DMatrix<T>, layout: &HankelLayout) -> DMatrix<T> {
    let nc = hankel_columns(data.nrows(), layout);
    let scale = T::one() / T::of_usize(nc).sqrt();
    let mut ht = DMatrix::<T>::zeros(nc, layout.rows());
    for lag in 0..2 * layout.i {
        for sig in 0..layout.signals() {
            let r = layout.row(lag, sig);
            ht.column_mut(r)
                .copy_from(&(data.view((lag, sig), (nc, 1)) * scale));
        }
    }
    ht
}

/// Pivot threshold below which a squared pivot counts as zero.
pub fn pivot_tolerance<T: Scalar>(max_diag: T, n: usize) -> T {
    max_diag * T::machine_epsilon() * T::of_usize(n.max(1))
}

/// In-place blocked Cholesky of a symmetric positive semidefinite matrix.
///
/// On return the lower triangle holds `L` with `L Lᵀ ≈ G` and the strict
/// upper triangle is zero. Columns whose pivot falls below
/// [`pivot_tolerance`] are set to zero. Returns the numerical rank.
pub fn cholesky_psd<T: Scalar>(g: &mut DMatrix<T>) -> usize {
    let n = g.nrows();
    assert_eq!(n, g.ncols());
    let max_diag = (0..n).map(|j| g[(j, j)]).fold(T::zero(), |a, b| a.max(b));
    let tol = pivot_tolerance(max_diag, n);
    const NB: usize = 96;
    let mut rank = 0;
    for j0 in (0..n).step_by(NB) {
        let j1 = (j0 + NB).min(n);
        for j in j0..j1 {
            for k in j0..j {
                let ljk = g[(j, k)];
                if ljk != T::zero() {
                    let (src, mut dst) = g.columns_range_pair_mut(k, j);
                    for r in j..n {
                        dst[r] -= src[r] * ljk;
                    }
                }
            }
            let d = g[(j, j)];
            let mut col = g.column_mut(j);
            if d > tol {
                let root = d.sqrt();
                col[j] = root;
                for r in j + 1..n {
                    col[r] /= root;
                }
                rank += 1;
            } else {
                for r in j..n {
                    col[r] = T::zero();
                }
            }
        }
        if j1 < n {
            let panel = g.view((j1, j0), (n - j1, j1 - j0)).clone_owned();
            for c0 in (j1..n).step_by(NB) {
                let cb = NB.min(n - c0);
                let below = panel.rows(c0 - j1, n - c0);
                let cols_t = panel.rows(c0 - j1, cb).transpose();
                g.view_mut((c0, c0), (n - c0, cb))
                    .gemm(-T::one(), &below, &cols_t, T::one());
            }
        }
    }
    for j in 1..n {
        for r in 0..j {
            g[(r, j)] = T::zero();
        }
    }
    rank
}

/// Largest diagonal magnitude of a square matrix.
pub fn max_abs_diag<T: Scalar>(l: &DMatrix<T>) -> T {
    (0..l.nrows().min(l.ncols()))
        .map(|j| l[(j, j)].abs())
        .fold(T::zero(), |a, b| a.max(b))
}

/// Solves `Z L = B` for `Z` with `L` lower triangular. Components belonging
/// to pivots with `|L_jj| <= zero_tol` are set to zero.
pub fn solve_right_lower<T: Scalar>(b: &DMatrix<T>, l: &DMatrix<T>, zero_tol: T) -> DMatrix<T> {
    let q = l.nrows();
    assert_eq!(b.ncols(), q);
    // Work on Zᵀ so each unknown vector is a contiguous column: Lᵀ zᵀ = bᵀ.
    let mut zt = b.transpose();
    for r in 0..zt.ncols() {
        let mut z = zt.column_mut(r);
        for j in (0..q).rev() {
            let d = l[(j, j)];
            if d.abs() <= zero_tol {
                z[j] = T::zero();
                continue;
            }
            let below = l.view((j + 1, j), (q - j - 1, 1));
            let mut acc = z[j];
            for (t, lkj) in below.iter().enumerate() {
                acc -= *lkj * z[j + 1 + t];
            }
            z[j] = acc / d;
        }
    }
    zt.transpose()
}

/// Minimum-norm least squares `argmin ‖A X − B‖` through a Householder QR of
/// `A` followed by an SVD of the triangular factor. Singular values below
/// `rcond · σ_max` are dropped.
pub fn lstsq<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>, rcond: T) -> DMatrix<T> {
    let (rows, cols) = a.shape();
    assert_eq!(rows, b.nrows());
    if cols == 0 {
        return DMatrix::zeros(0, b.ncols());
    }
    let (r, qtb) = if rows > cols {
        let qr = a.clone().qr();
        let mut qtb = b.clone();
        qr.q_tr_mul(&mut qtb);
        (qr.r(), qtb.rows(0, cols).clone_owned())
    } else {
        (a.clone(), b.clone())
    };
    svd_solve(r, &qtb, rcond)
}

fn svd_solve<T: Scalar>(a: DMatrix<T>, b: &DMatrix<T>, rcond: T) -> DMatrix<T> {
    let cols = a.ncols();
    let svd = SVD::new(a, true, true);
    let (u, vt) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let smax = svd.singular_values.iter().fold(T::zero(), |m, &s| m.max(s));
    let cut = smax * rcond;
    let mut x = DMatrix::zeros(cols, b.ncols());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s <= cut || s == T::zero() {
            continue;
        }
        let coeff = (u.column(k).transpose() * b) / s;
        x += vt.row(k).transpose() * coeff;
    }
    x
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius<T: Scalar>(a: &DMatrix<T>) -> T {
    if a.nrows() == 0 {
        return T::zero();
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| (z.re * z.re + z.im * z.im).sqrt())
        .fold(T::zero(), |m, r| m.max(r))
}
