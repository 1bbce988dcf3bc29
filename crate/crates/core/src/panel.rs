//! Observed panels `Y = X ∘ M + E` and the heterogeneity weights derived
//! from the regressor.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// Default bound on `max |X_it|`.
pub const DEFAULT_X_BOUND: f64 = 1e6;
/// Default floor below which a row second moment counts as degenerate.
pub const DEFAULT_P_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PanelMode {
    /// `X` is an arbitrary bounded regressor.
    GeneralRegressor,
    /// `X` is a 0/1 observation mask and `Y` is zero where unobserved.
    BinaryMask,
}

impl std::str::FromStr for PanelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general" | "general-regressor" => Ok(PanelMode::GeneralRegressor),
            "binary" | "binary-mask" | "mask" => Ok(PanelMode::BinaryMask),
            other => Err(Error::InvalidInput(format!("unknown panel mode `{other}`"))),
        }
    }
}

/// Outcome and regressor matrices of identical shape. Immutable once built.
#[derive(Debug, Clone)]
pub struct ObservedPanel {
    y: Array2<f64>,
    x: Array2<f64>,
    mode: PanelMode,
}

impl ObservedPanel {
    pub fn new(y: Array2<f64>, x: Array2<f64>, mode: PanelMode) -> Result<Self> {
        Self::with_bound(y, x, mode, DEFAULT_X_BOUND)
    }

    pub fn with_bound(y: Array2<f64>, x: Array2<f64>, mode: PanelMode, x_bound: f64) -> Result<Self> {
        if y.dim() != x.dim() {
            return Err(Error::shape("panel Y vs X", y.dim(), x.dim()));
        }
        let (n, t) = y.dim();
        if n < 2 || t < 2 {
            return Err(Error::InvalidInput(format!(
                "panel must be at least 2x2, got {n}x{t}"
            )));
        }
        for ((i, j), &v) in y.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite { what: "Y".into(), row: i, col: j });
            }
        }
        for ((i, j), &v) in x.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite { what: "X".into(), row: i, col: j });
            }
            if v.abs() > x_bound {
                return Err(Error::InvalidInput(format!(
                    "|X| = {} at ({}, {}) exceeds the bound {x_bound}",
                    v.abs(),
                    i + 1,
                    j + 1
                )));
            }
            if mode == PanelMode::BinaryMask {
                if v != 0.0 && v != 1.0 {
                    return Err(Error::InvalidInput(format!(
                        "binary mask has value {v} at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
                if v == 0.0 && y[[i, j]] != 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "Y = {} at unobserved cell ({}, {}); masked cells must be 0",
                        y[[i, j]],
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self { y, x, mode })
    }

    pub fn y(&self) -> &Array2<f64> {
        &self.y
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn mode(&self) -> PanelMode {
        self.mode
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn t(&self) -> usize {
        self.y.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.y.dim()
    }

    /// Same panel with the outcome replaced, e.g. a rescaled `c * Y`.
    pub fn with_outcome(&self, y: Array2<f64>) -> Result<Self> {
        Self::new(y, self.x.clone(), self.mode)
    }
}

/// Load a panel from CSV.
///
/// Without an `x` file in binary-mask mode the mask is derived from which
/// outcome cells are present. With an `x` file, missing outcome cells must
/// sit where `X = 0` (binary mode); general-regressor mode accepts no gaps.
pub fn load_panel(y_path: &Path, x_path: Option<&Path>, mode: PanelMode) -> Result<ObservedPanel> {
    let grid = io::read_grid(y_path)?;
    let (n, t) = (grid.len(), grid[0].len());
    let x = match x_path {
        Some(p) => {
            let x = io::read_matrix(p)?;
            if x.dim() != (n, t) {
                return Err(Error::shape("Y file vs X file", (n, t), x.dim()));
            }
            x
        }
        None => match mode {
            PanelMode::BinaryMask => {
                Array2::from_shape_fn((n, t), |(i, j)| if grid[i][j].is_some() { 1.0 } else { 0.0 })
            }
            PanelMode::GeneralRegressor => {
                return Err(Error::InvalidInput(
                    "general-regressor mode requires an X file".into(),
                ))
            }
        },
    };
    let mut y = Array2::zeros((n, t));
    for (i, row) in grid.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            match (cell, mode) {
                (Some(v), _) => y[[i, j]] = *v,
                (None, PanelMode::BinaryMask) if x[[i, j]] == 0.0 => {}
                (None, PanelMode::BinaryMask) => {
                    return Err(Error::InvalidInput(format!(
                        "Y is missing at ({}, {}) where X = {}",
                        i + 1,
                        j + 1,
                        x[[i, j]]
                    )))
                }
                (None, PanelMode::GeneralRegressor) => {
                    return Err(Error::InvalidInput(format!(
                        "Y is missing at ({}, {}); general-regressor mode needs a complete panel",
                        i + 1,
                        j + 1
                    )))
                }
            }
        }
    }
    ObservedPanel::new(y, x, mode)
}

/// Row second moments `p̂_i = T⁻¹ Σ_t X_it²` and the column weights
/// `Ψ̂_t = N⁻¹ Σ_j X_jt² p̂_j⁻²`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeterogeneityWeights {
    pub p_hat: Array1<f64>,
    pub psi_hat: Array1<f64>,
}

impl HeterogeneityWeights {
    pub fn p_min(&self) -> f64 {
        self.p_hat.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn compute_heterogeneity(panel: &ObservedPanel) -> Result<HeterogeneityWeights> {
    compute_heterogeneity_with_floor(panel.x().view(), DEFAULT_P_FLOOR)
}

pub fn compute_heterogeneity_with_floor(x: ArrayView2<f64>, p_floor: f64) -> Result<HeterogeneityWeights> {
    let (n, t) = x.dim();
    let x2 = x.mapv(|v| v * v);
    let p_hat = x2.sum_axis(ndarray::Axis(1)) / t as f64;
    if let Some((row, &p)) = p_hat.iter().enumerate().find(|(_, &p)| !(p > p_floor)) {
        return Err(Error::DegenerateRow { row: row + 1, p_hat: p, floor: p_floor });
    }
    let inv_p2 = p_hat.mapv(|p| 1.0 / (p * p));
    let psi_hat = x2.t().dot(&inv_p2) / n as f64;
    Ok(HeterogeneityWeights { p_hat, psi_hat })
}
