//! Diversified weighting matrices `W_β` (N×R) and `W_F` (T×R).
//!
//! Three constructors are provided: polynomial transformations of observed
//! characteristics, the same transformations applied to per-unit averages
//! from an extra sample, and truncated singular vectors of an extra sample.
//! Any pair of finite matrices with a common column count can also be
//! supplied directly.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Warning};
use crate::linalg;

/// Default truncation constant for scaled singular vectors.
pub const DEFAULT_GAMMA: f64 = 4.0;
/// Normalized Gram matrices with `σ_R` below this are flagged.
pub const GRAM_WARN_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Characteristics,
    SubsampleAverages,
    ScaledSingularVectors,
    UserSupplied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Unit side, producing `W_β`.
    Beta,
    /// Period side, producing `W_F`.
    F,
}

#[derive(Debug, Clone)]
pub struct DiversifiedWeights {
    w_beta: Array2<f64>,
    w_f: Array2<f64>,
    provenance: Provenance,
}

impl DiversifiedWeights {
    pub fn new(w_beta: Array2<f64>, w_f: Array2<f64>, provenance: Provenance) -> Result<Self> {
        if w_beta.ncols() != w_f.ncols() {
            return Err(Error::InvalidInput(format!(
                "W_beta has {} columns but W_F has {}",
                w_beta.ncols(),
                w_f.ncols()
            )));
        }
        if w_beta.ncols() == 0 {
            return Err(Error::InvalidInput("weights need at least one column".into()));
        }
        for (what, m) in [("W_beta", &w_beta), ("W_F", &w_f)] {
            if let Some(((row, col), _)) = m.indexed_iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite { what: what.into(), row, col });
            }
        }
        Ok(Self { w_beta, w_f, provenance })
    }

    pub fn w_beta(&self) -> &Array2<f64> {
        &self.w_beta
    }

    pub fn w_f(&self) -> &Array2<f64> {
        &self.w_f
    }

    pub fn rank(&self) -> usize {
        self.w_beta.ncols()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// `(W_β A, W_F B)`, same provenance.
    pub fn recombined(&self, a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Self> {
        Self::new(self.w_beta.dot(&a), self.w_f.dot(&b), self.provenance)
    }

    pub fn check_dims(&self, n: usize, t: usize) -> Result<()> {
        if self.w_beta.nrows() != n {
            return Err(Error::shape("W_beta vs panel rows", (n, self.rank()), self.w_beta.dim()));
        }
        if self.w_f.nrows() != t {
            return Err(Error::shape("W_F vs panel columns", (t, self.rank()), self.w_f.dim()));
        }
        Ok(())
    }
}

fn standardize(col: ArrayView1<f64>, index: usize) -> Result<Array1<f64>> {
    let n = col.len() as f64;
    let mean = col.sum() / n;
    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = col.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    if !(var.sqrt() > 1e-12 * scale) {
        return Err(Error::ZeroVariance { column: index + 1 });
    }
    let sd = var.sqrt();
    Ok(col.mapv(|v| (v - mean) / sd))
}

/// Standardize each characteristic, raise it to powers `1..=degree`,
/// optionally prepend a constant column, and rescale every column to
/// l2-norm `√n`.
pub fn polynomial_weights(chars: ArrayView2<f64>, degree: usize, include_constant: bool) -> Result<Array2<f64>> {
    if degree == 0 {
        return Err(Error::InvalidInput("degree must be at least 1".into()));
    }
    let (n, d) = chars.dim();
    if d == 0 {
        return Err(Error::InvalidInput("no characteristic columns".into()));
    }
    if let Some(((row, col), _)) = chars.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { what: "characteristics".into(), row, col });
    }
    let r = usize::from(include_constant) + d * degree;
    let mut w = Array2::zeros((n, r));
    let mut k = 0;
    if include_constant {
        w.column_mut(0).fill(1.0);
        k = 1;
    }
    for j in 0..d {
        let z = standardize(chars.column(j), j)?;
        for p in 1..=degree {
            w.column_mut(k).assign(&z.mapv(|v| v.powi(p as i32)));
            k += 1;
        }
    }
    let target = (n as f64).sqrt();
    for (idx, mut col) in w.axis_iter_mut(Axis(1)).enumerate() {
        let norm = col.dot(&col).sqrt();
        if !(norm > 0.0) {
            return Err(Error::RankDeficient {
                what: format!("transformed characteristic column {}", idx + 1),
                rank: 0,
                required: 1,
            });
        }
        col.mapv_inplace(|v| v * target / norm);
    }
    Ok(w)
}

/// Weights from unit characteristics `z` (N×d) and period characteristics
/// `f` (T×d'). Both sides must end up with the same number of columns.
pub fn from_characteristics(
    z: ArrayView2<f64>,
    f: ArrayView2<f64>,
    degree: usize,
    include_constant: bool,
) -> Result<DiversifiedWeights> {
    let c = usize::from(include_constant);
    let (rb, rf) = (c + z.ncols() * degree, c + f.ncols() * degree);
    if rb != rf {
        return Err(Error::InvalidInput(format!(
            "characteristics give R = {rb} for W_beta but R = {rf} for W_F"
        )));
    }
    DiversifiedWeights::new(
        polynomial_weights(z, degree, include_constant)?,
        polynomial_weights(f, degree, include_constant)?,
        Provenance::Characteristics,
    )
}

/// Per-unit (side `Beta`) or per-period (side `F`) regression averages
/// `b̄ = Σ X Y / Σ X²` from an extra sample.
pub fn subsample_averages(extra_y: ArrayView2<f64>, extra_x: ArrayView2<f64>, side: Side) -> Result<Array1<f64>> {
    if extra_y.dim() != extra_x.dim() {
        return Err(Error::shape("extra Y vs extra X", extra_y.dim(), extra_x.dim()));
    }
    let axis = match side {
        Side::Beta => Axis(1),
        Side::F => Axis(0),
    };
    let xy = (&extra_x * &extra_y).sum_axis(axis);
    let xx = extra_x.mapv(|v| v * v).sum_axis(axis);
    let label = match side {
        Side::Beta => "subject",
        Side::F => "period",
    };
    let mut out = Array1::zeros(xy.len());
    for (k, (&num, &den)) in xy.iter().zip(xx.iter()).enumerate() {
        if !(den > 0.0) {
            return Err(Error::MissingExtraObservations { side: label, index: k + 1 });
        }
        out[k] = num / den;
    }
    Ok(out)
}

/// One side of the weights from polynomial transformations of
/// [`subsample_averages`].
pub fn from_subsample_averages(
    extra_y: ArrayView2<f64>,
    extra_x: ArrayView2<f64>,
    side: Side,
    degree: usize,
    include_constant: bool,
) -> Result<Array2<f64>> {
    let b = subsample_averages(extra_y, extra_x, side)?;
    polynomial_weights(b.view().insert_axis(Axis(1)), degree, include_constant)
}

/// Truncate orthonormal columns: `W_ik = √n Ũ_ik / max(1, (√n/γ) max_i |Ũ_ik|)`.
pub fn diversify_singular_vectors(u: ArrayView2<f64>, gamma: f64) -> Result<Array2<f64>> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidInput(format!("gamma must be positive, got {gamma}")));
    }
    let root_n = (u.nrows() as f64).sqrt();
    let mut w = u.to_owned();
    for mut col in w.axis_iter_mut(Axis(1)) {
        let peak = col.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let denom = (root_n / gamma * peak).max(1.0);
        col.mapv_inplace(|v| root_n * v / denom);
    }
    Ok(w)
}

/// One side of the weights from the top-`r` singular vectors of an extra
/// sample. The extra sample must not overlap the data used for inference;
/// that is the caller's responsibility.
///
/// Rows of `X ∘ Y` are divided by the row second moment of `X` before the
/// decomposition; all-zero rows are left as zero.
pub fn from_scaled_singular_vectors(
    sub_y: ArrayView2<f64>,
    sub_x: ArrayView2<f64>,
    r: usize,
    gamma: f64,
    side: Side,
) -> Result<Array2<f64>> {
    if sub_y.dim() != sub_x.dim() {
        return Err(Error::shape("subsample Y vs X", sub_y.dim(), sub_x.dim()));
    }
    let (rows, cols) = sub_y.dim();
    if r == 0 || r > rows.min(cols) {
        return Err(Error::InvalidInput(format!(
            "rank {r} must lie in 1..={} for a {rows}x{cols} subsample",
            rows.min(cols)
        )));
    }
    let mut scaled = &sub_x * &sub_y;
    for (mut row, x_row) in scaled.rows_mut().into_iter().zip(sub_x.rows()) {
        let second = x_row.dot(&x_row) / cols as f64;
        if second > 0.0 {
            row.mapv_inplace(|v| v / second);
        }
    }
    let svd = linalg::thin_svd(scaled.view(), None)?;
    let rank = svd.numerical_rank(linalg::rank_tolerance(rows, cols));
    if rank < r {
        return Err(Error::RankDeficient {
            what: "subsample matrix".into(),
            rank,
            required: r,
        });
    }
    let basis = match side {
        Side::Beta => svd.u.slice(ndarray::s![.., ..r]).to_owned(),
        Side::F => svd.v.slice(ndarray::s![.., ..r]).to_owned(),
    };
    diversify_singular_vectors(basis.view(), gamma)
}

/// Conditioning summary of a pair of weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightCheck {
    /// `σ_R(N⁻¹ W_β' W_β)`.
    pub gram_min_sv_beta: f64,
    /// `σ_R(T⁻¹ W_F' W_F)`.
    pub gram_min_sv_f: f64,
    pub row_norm_max_beta: f64,
    pub row_norm_max_f: f64,
    pub warnings: Vec<Warning>,
}

fn normalized_gram_min_sv(w: &Array2<f64>) -> Result<f64> {
    let gram = w.t().dot(w) / w.nrows() as f64;
    Ok(linalg::singular_values(gram.view())?.last().copied().unwrap_or(0.0))
}

pub fn validate_weights(w: &DiversifiedWeights, n: usize, t: usize) -> Result<WeightCheck> {
    w.check_dims(n, t)?;
    let gram_min_sv_beta = normalized_gram_min_sv(w.w_beta())?;
    let gram_min_sv_f = normalized_gram_min_sv(w.w_f())?;
    let mut warnings = Vec::new();
    for (name, sv) in [("W_beta", gram_min_sv_beta), ("W_F", gram_min_sv_f)] {
        if sv < GRAM_WARN_THRESHOLD {
            warnings.push(Warning::new(
                "weight-gram-singular",
                format!("smallest singular value of the normalized {name} Gram is {sv:e}"),
            ));
        }
    }
    Ok(WeightCheck {
        gram_min_sv_beta,
        gram_min_sv_f,
        row_norm_max_beta: linalg::max_row_norm(w.w_beta().view()),
        row_norm_max_f: linalg::max_row_norm(w.w_f().view()),
        warnings,
    })
}
