//! Advisory checks of the checkable parts of the modelling assumptions.
//!
//! Nothing here blocks estimation; every finding is reported as a number
//! and, when it looks suspicious, a warning.

use ndarray::{ArrayView2, Axis};
use serde::Serialize;

use crate::error::{Error, Result, Warning};
use crate::group::GroupSpec;
use crate::linalg;
use crate::panel::{ObservedPanel, DEFAULT_P_FLOOR};
use crate::pipeline::FitResult;
use crate::weights::{validate_weights, DiversifiedWeights};

/// Group-size ratios for the block-shape conditions, with the cluster size
/// set to one. Values at or above one suggest the group is large for `N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupShape {
    pub rows: usize,
    pub cols: usize,
    /// `|I|² ln³N / N`.
    pub rows_squared_ratio: f64,
    /// `|I| ln⁶N / N`.
    pub rows_log6_ratio: f64,
    /// `|T|² ln³T / N`.
    pub cols_squared_ratio: f64,
    /// `|T| ln⁶T / N`.
    pub cols_log6_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub p_min: f64,
    pub weight_row_norm_max: f64,
    pub weight_gram_min_sv: f64,
    pub weight_gram_min_sv_beta: f64,
    pub weight_gram_min_sv_f: f64,
    /// `√(N/k) ‖U‖_{2,∞}` and `√(T/k) ‖V‖_{2,∞}` for the top `k = R` singular
    /// vectors of `M_init` (or of `Y` when no fit is given). Both equal one
    /// for perfectly spread singular vectors.
    pub incoherence_ratios: (f64, f64),
    pub group_shape: GroupShape,
    /// Leading singular values of `M_init`; empty without a fit.
    pub singular_values: Vec<f64>,
    /// `σ_j / σ_{j+1}`, starting at `j = 1`.
    pub eigenvalue_ratios: Vec<f64>,
    /// Position (1-based) of the largest eigenvalue ratio.
    pub eigenvalue_ratio_rank: Option<usize>,
    pub warnings: Vec<Warning>,
}

/// Singular values are listed up to this many.
const MAX_REPORTED: usize = 20;

/// `σ_j / σ_{j+1}` for the leading values. Denominators are floored at
/// `1e-12 σ₁` so an exactly low-rank matrix gives a large but finite ratio,
/// and the list stops at the first such floored denominator.
pub fn eigenvalue_ratios(s: &[f64], max_len: usize) -> Vec<f64> {
    let Some(&top) = s.first() else {
        return Vec::new();
    };
    if !(top > 0.0) {
        return Vec::new();
    }
    let floor = top * 1e-12;
    let mut out = Vec::new();
    for pair in s.windows(2).take(max_len) {
        let denom = pair[1].max(floor);
        out.push(pair[0] / denom);
        if pair[1] <= floor {
            break;
        }
    }
    out
}

fn argmax(v: &[f64]) -> Option<usize> {
    v.iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (j, &x)| match best {
            Some((_, b)) if b >= x => best,
            _ => Some((j, x)),
        })
        .map(|(j, _)| j + 1)
}

fn coherence(a: ArrayView2<f64>, k: usize) -> Result<(f64, f64)> {
    let (n, t) = a.dim();
    let k = k.min(n.min(t)).max(1);
    let svd = linalg::thin_svd(a, Some(k))?;
    let u = linalg::max_row_norm(svd.u.view()) * (n as f64 / k as f64).sqrt();
    let v = linalg::max_row_norm(svd.v.view()) * (t as f64 / k as f64).sqrt();
    Ok((u, v))
}

fn group_shape(group: &GroupSpec, n: usize, t: usize) -> GroupShape {
    let (ln_n, ln_t) = ((n as f64).ln(), (t as f64).ln());
    let (i, c) = (group.rows().len() as f64, group.cols().len() as f64);
    let nf = n as f64;
    GroupShape {
        rows: group.rows().len(),
        cols: group.cols().len(),
        rows_squared_ratio: i * i * ln_n.powi(3) / nf,
        rows_log6_ratio: i * ln_n.powi(6) / nf,
        cols_squared_ratio: c * c * ln_t.powi(3) / nf,
        cols_log6_ratio: c * ln_t.powi(6) / nf,
    }
}

pub fn diagnose(
    panel: &ObservedPanel,
    w: &DiversifiedWeights,
    group: &GroupSpec,
    fit: Option<&FitResult>,
) -> Result<DiagnosticsReport> {
    let (n, t) = panel.dim();
    if group.dims() != (n, t) {
        return Err(Error::shape("group vs panel", (n, t), group.dims()));
    }
    if let Some(f) = fit {
        if f.m_init.dim() != (n, t) {
            return Err(Error::shape("fit vs panel", (n, t), f.m_init.dim()));
        }
    }
    let check = validate_weights(w, n, t)?;
    let mut warnings = check.warnings.clone();

    let p_min = panel
        .x()
        .mapv(|v| v * v)
        .mean_axis(Axis(1))
        .map(|p| p.fold(f64::INFINITY, |m, &v| m.min(v)))
        .unwrap_or(0.0);
    if p_min <= DEFAULT_P_FLOOR {
        warnings.push(Warning::new(
            "p-min-small",
            format!("smallest row second moment {p_min:e} is at or below {DEFAULT_P_FLOOR:e}"),
        ));
    }

    let shape = group_shape(group, n, t);
    for (side, ratio) in [("row", shape.rows_squared_ratio), ("column", shape.cols_squared_ratio)] {
        if group.kind() == crate::group::GroupKind::Block && ratio >= 1.0 {
            warnings.push(Warning::new(
                "group-large",
                format!("group {side} count looks large relative to N (heuristic ratio {ratio:.3})"),
            ));
        }
    }

    let target = match fit {
        Some(f) => f.m_init.view(),
        None => panel.y().view(),
    };
    let incoherence_ratios = coherence(target, w.rank())?;

    let (singular_values, eigenvalue_ratios_v) = match fit {
        Some(f) => {
            let s = linalg::singular_values(f.m_init.view())?.to_vec();
            let ratios = eigenvalue_ratios(&s, n.min(t) / 2);
            (s.into_iter().take(MAX_REPORTED).collect(), ratios)
        }
        None => (Vec::new(), Vec::new()),
    };
    let eigenvalue_ratio_rank = argmax(&eigenvalue_ratios_v);
    if let Some(k) = eigenvalue_ratio_rank {
        if k > w.rank() {
            warnings.push(Warning::new(
                "rank-above-weights",
                format!("eigenvalue-ratio rank {k} exceeds the weight rank {}", w.rank()),
            ));
        }
    }

    Ok(DiagnosticsReport {
        p_min,
        weight_row_norm_max: check.row_norm_max_beta.max(check.row_norm_max_f),
        weight_gram_min_sv: check.gram_min_sv_beta.min(check.gram_min_sv_f),
        weight_gram_min_sv_beta: check.gram_min_sv_beta,
        weight_gram_min_sv_f: check.gram_min_sv_f,
        incoherence_ratios,
        group_shape: shape,
        singular_values,
        eigenvalue_ratios: eigenvalue_ratios_v,
        eigenvalue_ratio_rank,
        warnings,
    })
}
