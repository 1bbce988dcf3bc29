//! Dense kernels: thin SVD, rank-tolerant projectors and pseudo-inverses,
//! and singular-value soft-thresholding.
//!
//! Decompositions run through `faer` in sequential mode, so every result is
//! bitwise independent of how many threads the caller uses.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Thin singular value decomposition `A = U diag(s) V'`.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    pub v: Array2<f64>,
}

impl ThinSvd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> Array2<f64> {
        let us = &self.u * &self.s.view().insert_axis(Axis(0));
        us.dot(&self.v.t())
    }

    /// Number of singular values strictly above `rtol * s_max`.
    pub fn numerical_rank(&self, rtol: f64) -> usize {
        let smax = self.s.first().copied().unwrap_or(0.0);
        if smax <= 0.0 {
            return 0;
        }
        self.s.iter().take_while(|&&s| s > rtol * smax).count()
    }
}

fn check_finite(a: ArrayView2<f64>, what: &str) -> Result<()> {
    if let Some(((row, col), _)) = a.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: what.to_string(),
            row,
            col,
        });
    }
    Ok(())
}

/// Top-`k` singular triplets of `a` (all `min(m, n)` when `k` is `None`).
///
/// Sign convention: in each column of `U` the entry of largest magnitude
/// (lowest index on ties) is non-negative, and `V` is flipped to match.
pub fn thin_svd(a: ArrayView2<f64>, k: Option<usize>) -> Result<ThinSvd> {
    check_finite(a, "matrix passed to thin_svd")?;
    let (m, n) = a.dim();
    let full = m.min(n);
    let k = k.unwrap_or(full).min(full);
    if full == 0 {
        return Ok(ThinSvd {
            u: Array2::zeros((m, 0)),
            s: Array1::zeros(0),
            v: Array2::zeros((n, 0)),
        });
    }

    let fa = faer::Mat::<f64>::from_fn(m, n, |i, j| a[[i, j]]);
    let svd = fa
        .thin_svd()
        .map_err(|e| Error::DegenerateProblem(format!("SVD did not converge: {e:?}")))?;
    let (fu, fs, fv) = (svd.U(), svd.S().column_vector(), svd.V());

    let mut u = Array2::from_shape_fn((m, k), |(i, j)| fu[(i, j)]);
    let s = Array1::from_shape_fn(k, |j| fs[j].max(0.0));
    let mut v = Array2::from_shape_fn((n, k), |(i, j)| fv[(i, j)]);

    for j in 0..k {
        let col = u.column(j);
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for (i, &x) in col.iter().enumerate() {
            if x.abs() > best_abs {
                best_abs = x.abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            u.column_mut(j).mapv_inplace(|x| -x);
            v.column_mut(j).mapv_inplace(|x| -x);
        }
    }
    Ok(ThinSvd { u, s, v })
}

/// Singular values only, non-increasing.
pub fn singular_values(a: ArrayView2<f64>) -> Result<Array1<f64>> {
    check_finite(a, "matrix passed to singular_values")?;
    let (m, n) = a.dim();
    if m.min(n) == 0 {
        return Ok(Array1::zeros(0));
    }
    let fa = faer::Mat::<f64>::from_fn(m, n, |i, j| a[[i, j]]);
    let s = fa
        .singular_values()
        .map_err(|e| Error::DegenerateProblem(format!("SVD did not converge: {e:?}")))?;
    Ok(Array1::from_iter(s.into_iter().map(|x| x.max(0.0))))
}

/// Relative cutoff below which singular values of an `m x k` matrix are
/// treated as zero.
pub fn rank_tolerance(m: usize, k: usize) -> f64 {
    m.max(k) as f64 * f64::EPSILON * 64.0
}

/// Column space of a matrix with its numerically-zero directions removed.
///
/// Holds the truncated factors of `B = U_r diag(s_r) V_r'` and derives the
/// projector `P_B`, the pseudo-inverse `(B'B)^+ B'` and `B (B'B)^+` from them.
#[derive(Debug, Clone)]
pub struct ColumnSpace {
    u: Array2<f64>,
    s: Array1<f64>,
    v: Array2<f64>,
    cols: usize,
}

impl ColumnSpace {
    pub fn new(b: ArrayView2<f64>) -> Result<Self> {
        let (m, k) = b.dim();
        let svd = thin_svd(b, None)?;
        let r = svd.numerical_rank(rank_tolerance(m, k));
        Ok(Self {
            u: svd.u.slice(ndarray::s![.., ..r]).to_owned(),
            s: svd.s.slice(ndarray::s![..r]).to_owned(),
            v: svd.v.slice(ndarray::s![.., ..r]).to_owned(),
            cols: k,
        })
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Number of columns of the original matrix.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank() < self.cols
    }

    /// Orthonormal basis of the retained column space.
    pub fn basis(&self) -> &Array2<f64> {
        &self.u
    }

    /// `P_B = U_r U_r'`.
    pub fn projector(&self) -> Array2<f64> {
        self.u.dot(&self.u.t())
    }

    /// `(B'B)^+ B' = V_r diag(1/s_r) U_r'`, a `k x m` matrix.
    pub fn pinv(&self) -> Array2<f64> {
        let vs = &self.v / &self.s.view().insert_axis(Axis(0));
        vs.dot(&self.u.t())
    }

    /// `B (B'B)^+ = U_r diag(1/s_r) V_r'`, an `m x k` matrix.
    pub fn pinv_t(&self) -> Array2<f64> {
        let us = &self.u / &self.s.view().insert_axis(Axis(0));
        us.dot(&self.v.t())
    }
}

/// Orthogonal projector onto `span(B)` using the rank tolerance of
/// [`rank_tolerance`]. An all-zero `B` gives the zero projector.
pub fn projector(b: ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(ColumnSpace::new(b)?.projector())
}

/// Proximal map of `tau * ||.||_*`: soft-threshold the singular values.
pub fn svt(a: ArrayView2<f64>, tau: f64) -> Result<Array2<f64>> {
    Ok(svt_with_norm(a, tau)?.0)
}

/// [`svt`] that also returns the nuclear norm of the result.
pub fn svt_with_norm(a: ArrayView2<f64>, tau: f64) -> Result<(Array2<f64>, f64)> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "threshold must be non-negative, got {tau}"
        )));
    }
    let svd = thin_svd(a, None)?;
    let kept = svd.s.iter().take_while(|&&s| s > tau).count();
    let (m, n) = a.dim();
    if kept == 0 {
        return Ok((Array2::zeros((m, n)), 0.0));
    }
    let shrunk = svd.s.slice(ndarray::s![..kept]).mapv(|s| s - tau);
    let us = &svd.u.slice(ndarray::s![.., ..kept]) * &shrunk.view().insert_axis(Axis(0));
    let out = us.dot(&svd.v.slice(ndarray::s![.., ..kept]).t());
    Ok((out, shrunk.sum()))
}

pub fn nuclear_norm(a: ArrayView2<f64>) -> Result<f64> {
    Ok(singular_values(a)?.sum())
}

pub fn operator_norm(a: ArrayView2<f64>) -> Result<f64> {
    Ok(singular_values(a)?.first().copied().unwrap_or(0.0))
}

/// Number of singular values above `rtol * sigma_1`.
pub fn numerical_rank(a: ArrayView2<f64>, rtol: f64) -> Result<usize> {
    let s = singular_values(a)?;
    let smax = s.first().copied().unwrap_or(0.0);
    if smax <= 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&x| x > rtol * smax).count())
}

/// Largest row l2-norm, `||A||_{2,inf}`.
pub fn max_row_norm(a: ArrayView2<f64>) -> f64 {
    a.rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .fold(0.0, f64::max)
}

pub fn max_abs(a: ArrayView2<f64>) -> f64 {
    a.iter().fold(0.0, |m, &x| m.max(x.abs()))
}
