//! Debiasing and diversified projection (steps 2 and 3 of the estimator).
//!
//! Starting from the merged initial estimate `M_init`:
//!
//! ```text
//! B1      = Π̂⁻¹ X ∘ (X ∘ M_init − Y)
//! M_naive = M_init − B1
//! β̃       = T⁻¹ M_naive W_F          F̃ = N⁻¹ M_naive' W_β
//! M_proj  = P_β̃ M_naive P_F̃
//! B2      = σ̃² [ (T/N) P_β̃ Π̂⁻¹ W_β (F̃'F̃)⁻¹F̃' + (N/T) β̃(β̃'β̃)⁻¹ W_F' Ψ̂ P_F̃ ]
//! M̂       = M_proj − B2
//! ```
//!
//! Every inverse is a truncated pseudo-inverse, since `β̃` and `F̃` can be
//! close to rank deficient when the weight rank exceeds the true rank.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use serde::Serialize;

use crate::error::{Error, Result, Warning};
use crate::group::GroupSpec;
use crate::linalg::{self, ColumnSpace};
use crate::nuclear::{build_init, InitEstimate, NuclearConfig};
use crate::panel::{compute_heterogeneity, HeterogeneityWeights, ObservedPanel, PanelMode};
use crate::weights::DiversifiedWeights;

#[derive(Debug, Clone, Default)]
pub struct PipelineConfig {
    pub nuclear: NuclearConfig,
    /// Skip the second debiasing step (`M̂ = M_proj`).
    pub ablate_b2: bool,
    /// Use `σ̃² = 0`, which removes `B2` and zeroes the variance estimate.
    pub force_sigma2_zero: bool,
}

/// All intermediates of one pipeline run.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub m_init: Array2<f64>,
    pub b1: Array2<f64>,
    pub m_naive: Array2<f64>,
    pub beta_tilde: Array2<f64>,
    pub f_tilde: Array2<f64>,
    pub m_proj: Array2<f64>,
    pub b2: Array2<f64>,
    pub m_hat: Array2<f64>,
    pub sigma2_tilde: f64,
    pub ablation_no_b2: bool,
    pub lambda_used: f64,
    pub solver_iters: (usize, usize),
    pub warnings: Vec<Warning>,
}

/// Scalar summary of a [`FitResult`] for reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub n: usize,
    pub t: usize,
    pub weight_rank: usize,
    pub lambda: f64,
    pub sigma2_tilde: f64,
    pub solver_iters_full: usize,
    pub solver_iters_restricted: usize,
    pub rank_beta_tilde: usize,
    pub rank_f_tilde: usize,
    pub rank_m_proj: usize,
    pub ablation_no_b2: bool,
}

impl FitResult {
    pub fn summary(&self) -> Result<FitSummary> {
        let (n, t) = self.m_hat.dim();
        let rank_m_proj = linalg::numerical_rank(self.m_proj.view(), 1e-8)?;
        Ok(FitSummary {
            n,
            t,
            weight_rank: self.beta_tilde.ncols(),
            lambda: self.lambda_used,
            sigma2_tilde: self.sigma2_tilde,
            solver_iters_full: self.solver_iters.0,
            solver_iters_restricted: self.solver_iters.1,
            rank_beta_tilde: ColumnSpace::new(self.beta_tilde.view())?.rank(),
            rank_f_tilde: ColumnSpace::new(self.f_tilde.view())?.rank(),
            rank_m_proj,
            ablation_no_b2: self.ablation_no_b2,
        })
    }
}

fn check_panel_shape(panel: &ObservedPanel, m: ArrayView2<f64>, what: &str) -> Result<()> {
    if m.dim() != panel.dim() {
        return Err(Error::shape(what, panel.dim(), m.dim()));
    }
    Ok(())
}

/// `B1_it = p̂_i⁻¹ X_it (X_it M_it − Y_it)`.
pub fn bias1(panel: &ObservedPanel, hw: &HeterogeneityWeights, m_init: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_panel_shape(panel, m_init, "M_init vs panel")?;
    let mut b1 = Array2::zeros(panel.dim());
    Zip::indexed(&mut b1)
        .and(panel.x())
        .and(panel.y())
        .and(m_init)
        .for_each(|(i, _), b, &x, &y, &m| *b = x * (x * m - y) / hw.p_hat[i]);
    Ok(b1)
}

/// `(β̃, F̃) = (T⁻¹ M W_F, N⁻¹ M' W_β)`.
pub fn diversified_factors(m_naive: ArrayView2<f64>, w: &DiversifiedWeights) -> Result<(Array2<f64>, Array2<f64>)> {
    let (n, t) = m_naive.dim();
    w.check_dims(n, t)?;
    let beta = m_naive.dot(w.w_f()) / t as f64;
    let f = m_naive.t().dot(w.w_beta()) / n as f64;
    Ok((beta, f))
}

fn projected(m: ArrayView2<f64>, sb: &ColumnSpace, sf: &ColumnSpace) -> (Array2<f64>, Vec<Warning>) {
    let mut warnings = Vec::new();
    if sb.rank() == 0 || sf.rank() == 0 {
        warnings.push(Warning::new(
            "zero-projector",
            "a diversified factor matrix is numerically zero; the projected estimate is zero",
        ));
    }
    let ub = sb.basis();
    let uf = sf.basis();
    // P_β̃ M P_F̃ = U_b (U_b' M U_f) U_f'
    let core = ub.t().dot(&m).dot(uf);
    (ub.dot(&core).dot(&uf.t()), warnings)
}

/// `P_β̃ M_naive P_F̃` with rank-tolerant projectors.
pub fn project(
    m_naive: ArrayView2<f64>,
    beta_tilde: ArrayView2<f64>,
    f_tilde: ArrayView2<f64>,
) -> Result<(Array2<f64>, Vec<Warning>)> {
    let (n, t) = m_naive.dim();
    if beta_tilde.nrows() != n || f_tilde.nrows() != t {
        return Err(Error::shape(
            "diversified factors vs M_naive",
            (n, t),
            (beta_tilde.nrows(), f_tilde.nrows()),
        ));
    }
    let sb = ColumnSpace::new(beta_tilde)?;
    let sf = ColumnSpace::new(f_tilde)?;
    Ok(projected(m_naive, &sb, &sf))
}

/// Residual variance from `M_init`. The general mode averages over all `NT`
/// cells, the binary mode over observed cells only.
pub fn estimate_sigma2(panel: &ObservedPanel, m_init: ArrayView2<f64>) -> Result<f64> {
    check_panel_shape(panel, m_init, "M_init vs panel")?;
    let mut rss = 0.0;
    Zip::from(panel.y())
        .and(panel.x())
        .and(m_init)
        .for_each(|&y, &x, &m| rss += (y - x * m).powi(2));
    let denom = match panel.mode() {
        PanelMode::GeneralRegressor => (panel.n() * panel.t()) as f64,
        PanelMode::BinaryMask => {
            let observed = panel.x().sum();
            if !(observed > 0.0) {
                return Err(Error::DegenerateProblem("no observed cells for the variance estimate".into()));
            }
            observed
        }
    };
    Ok(rss / denom)
}

fn rank_warnings(sb: &ColumnSpace, sf: &ColumnSpace) -> Vec<Warning> {
    let mut out = Vec::new();
    for (name, s) in [("beta_tilde", sb), ("F_tilde", sf)] {
        if s.is_rank_deficient() {
            out.push(Warning::new(
                "pinv-truncated",
                format!(
                    "{name} has numerical rank {} < {}; pseudo-inverse truncated",
                    s.rank(),
                    s.cols()
                ),
            ));
        }
    }
    out
}

fn bias2_with(
    w: &DiversifiedWeights,
    hw: &HeterogeneityWeights,
    sb: &ColumnSpace,
    sf: &ColumnSpace,
    sigma2: f64,
) -> Array2<f64> {
    let (n, t) = (hw.p_hat.len(), hw.psi_hat.len());
    if sigma2 == 0.0 {
        return Array2::zeros((n, t));
    }
    let ub = sb.basis();
    let uf = sf.basis();

    // first term: (T/N) P_β̃ Π̂⁻¹ W_β pinv(F̃)
    let pi_wb = w.w_beta() / &hw.p_hat.view().insert_axis(Axis(1));
    let left = ub.dot(&ub.t().dot(&pi_wb));
    let first = left.dot(&sf.pinv()) * (t as f64 / n as f64);

    // second term: (N/T) β̃(β̃'β̃)⁺ W_F' Ψ̂ P_F̃
    let psi_wf = w.w_f() * &hw.psi_hat.view().insert_axis(Axis(1));
    let right = uf.dot(&uf.t().dot(&psi_wf));
    let second = sb.pinv_t().dot(&right.t()) * (n as f64 / t as f64);

    (first + second) * sigma2
}

/// Second debiasing term. Returns the matrix and any pseudo-inverse
/// truncation warnings.
pub fn bias2(
    w: &DiversifiedWeights,
    hw: &HeterogeneityWeights,
    beta_tilde: ArrayView2<f64>,
    f_tilde: ArrayView2<f64>,
    sigma2: f64,
) -> Result<(Array2<f64>, Vec<Warning>)> {
    let (n, t) = (beta_tilde.nrows(), f_tilde.nrows());
    w.check_dims(n, t)?;
    if hw.p_hat.len() != n || hw.psi_hat.len() != t {
        return Err(Error::shape("heterogeneity weights", (n, t), (hw.p_hat.len(), hw.psi_hat.len())));
    }
    if !(sigma2 >= 0.0) {
        return Err(Error::InvalidInput(format!("sigma2 must be non-negative, got {sigma2}")));
    }
    let sb = ColumnSpace::new(beta_tilde)?;
    let sf = ColumnSpace::new(f_tilde)?;
    let warnings = rank_warnings(&sb, &sf);
    Ok((bias2_with(w, hw, &sb, &sf, sigma2), warnings))
}

/// Steps 2 and 3 given an already built initial estimate. The initial
/// estimate does not depend on the weights, so one `init` can serve
/// several weight choices or ablation settings.
pub fn run_from_init(
    panel: &ObservedPanel,
    hw: &HeterogeneityWeights,
    w: &DiversifiedWeights,
    init: &InitEstimate,
    cfg: &PipelineConfig,
) -> Result<FitResult> {
    w.check_dims(panel.n(), panel.t())?;
    let m_init = init.m_init.clone();
    let b1 = bias1(panel, hw, m_init.view())?;
    let m_naive = &m_init - &b1;
    let (beta_tilde, f_tilde) = diversified_factors(m_naive.view(), w)?;
    let sb = ColumnSpace::new(beta_tilde.view())?;
    let sf = ColumnSpace::new(f_tilde.view())?;
    let mut warnings = init.warnings.clone();
    let (m_proj, proj_warnings) = projected(m_naive.view(), &sb, &sf);
    warnings.extend(proj_warnings);
    warnings.extend(rank_warnings(&sb, &sf));

    let sigma2_tilde = if cfg.force_sigma2_zero {
        0.0
    } else {
        estimate_sigma2(panel, m_init.view())?
    };
    let b2 = bias2_with(w, hw, &sb, &sf, sigma2_tilde);
    let m_hat = if cfg.ablate_b2 { m_proj.clone() } else { &m_proj - &b2 };

    Ok(FitResult {
        m_init,
        b1,
        m_naive,
        beta_tilde,
        f_tilde,
        m_proj,
        b2,
        m_hat,
        sigma2_tilde,
        ablation_no_b2: cfg.ablate_b2,
        lambda_used: init.lambda_used,
        solver_iters: init.solver_iters,
        warnings,
    })
}

/// Full estimator with precomputed heterogeneity weights.
pub fn run_pipeline_with(
    panel: &ObservedPanel,
    hw: &HeterogeneityWeights,
    w: &DiversifiedWeights,
    group: &GroupSpec,
    cfg: &PipelineConfig,
) -> Result<FitResult> {
    w.check_dims(panel.n(), panel.t())?;
    let init = build_init(panel, hw, group, &cfg.nuclear, w.rank())?;
    run_from_init(panel, hw, w, &init, cfg)
}

/// Full estimator: initial fits, both debiasing steps and the projection.
pub fn run_pipeline(
    panel: &ObservedPanel,
    w: &DiversifiedWeights,
    group: &GroupSpec,
    cfg: &PipelineConfig,
) -> Result<FitResult> {
    let hw = compute_heterogeneity(panel)?;
    run_pipeline_with(panel, &hw, w, group, cfg)
}
