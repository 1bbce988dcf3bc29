#![allow(dead_code)]

use lrinfer::group::GroupSpec;
use lrinfer::inference::{group_average, variance_group};
use lrinfer::linalg;
use lrinfer::nuclear::smooth_gradient;
use lrinfer::panel::{compute_heterogeneity, HeterogeneityWeights, ObservedPanel, PanelMode};
use lrinfer::pipeline::{run_pipeline_with, FitResult, PipelineConfig};
use lrinfer::weights::{DiversifiedWeights, Provenance};
use nalgebra::DMatrix;
use ndarray::{s, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// Bernoulli(p) mask with at least one observed cell per row and column.
pub fn mask(n: usize, t: usize, p: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut x = Array2::from_shape_fn((n, t), |_| if rng.random::<f64>() < p { 1.0 } else { 0.0 });
    for i in 0..n {
        x[[i, i % t]] = 1.0;
    }
    for s in 0..t {
        x[[s % n, s]] = 1.0;
    }
    x
}

/// Rank-`r` truth plus `sigma` noise, observed through a Bernoulli mask.
pub fn masked_instance(
    n: usize,
    t: usize,
    r: usize,
    p: f64,
    sigma: f64,
    seed: u64,
) -> (ObservedPanel, Array2<f64>) {
    let mut g = rng(seed);
    let truth = gaussian(n, r, &mut g).dot(&gaussian(t, r, &mut g).t());
    let x = mask(n, t, p, &mut g);
    let y = &x * &(&truth + &(gaussian(n, t, &mut g) * sigma));
    let panel = ObservedPanel::new(y, x, PanelMode::BinaryMask).expect("valid panel");
    (panel, truth)
}

pub fn random_weights(n: usize, t: usize, rank: usize, seed: u64) -> DiversifiedWeights {
    let mut g = rng(seed);
    DiversifiedWeights::new(gaussian(n, rank, &mut g), gaussian(t, rank, &mut g), Provenance::UserSupplied)
        .expect("valid weights")
}

/// A random matrix far from singular.
pub fn invertible(k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    gaussian(k, k, rng) + Array2::<f64>::eye(k) * 3.0
}

pub fn max_abs_diff(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// `max |a − b| / max(1, max |b|)`.
pub fn rel_diff(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    max_abs_diff(a, b) / linalg::max_abs(b).max(1.0)
}

pub fn to_na(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn from_na(a: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), a.ncols()), |(i, j)| a[(i, j)])
}

/// `B (B'B + εI)⁻¹ B'` through the normal equations.
pub fn ridge_projector(b: &DMatrix<f64>) -> DMatrix<f64> {
    b * ridge_inverse_gram(b) * b.transpose()
}

/// `(B'B + εI)⁻¹` with `ε = 1e-12`.
pub fn ridge_inverse_gram(b: &DMatrix<f64>) -> DMatrix<f64> {
    let k = b.ncols();
    (b.transpose() * b + DMatrix::identity(k, k) * 1e-12)
        .try_inverse()
        .expect("well-conditioned Gram")
}

/// Optimality residuals of a nuclear-norm fit, both divided by `λ`:
/// `‖U'GV + λI‖_max` on the top singular subspace and the spectral norm of
/// `G` projected onto the orthogonal complements.
pub fn kkt_residuals(
    panel: &ObservedPanel,
    hw: &HeterogeneityWeights,
    include: &dyn Fn(usize, usize) -> bool,
    lambda: f64,
    m: &Array2<f64>,
) -> (f64, f64) {
    let g = smooth_gradient(panel, hw, include, m);
    let svd = linalg::thin_svd(m.view(), None).expect("svd");
    let top = svd.s.first().copied().unwrap_or(0.0);
    let k = svd.s.iter().filter(|&&v| v > 1e-6 * top && v > 0.0).count();
    let u = svd.u.slice(s![.., ..k]).to_owned();
    let v = svd.v.slice(s![.., ..k]).to_owned();
    let core = u.t().dot(&g).dot(&v) + Array2::<f64>::eye(k) * lambda;
    let top_resid = linalg::max_abs(core.view()) / lambda;
    let (n, t) = m.dim();
    let pu = Array2::<f64>::eye(n) - u.dot(&u.t());
    let pv = Array2::<f64>::eye(t) - v.dot(&v.t());
    let orth = pu.dot(&g).dot(&pv);
    let orth_norm = linalg::operator_norm(orth.view()).expect("norm") / lambda;
    (top_resid, orth_norm)
}

/// Best objective value reached by plain subgradient descent from zero with
/// step `1 / (L √(k + 1))`, `L` being the Lipschitz bound of the smooth part.
pub fn subgradient_oracle(
    panel: &ObservedPanel,
    hw: &HeterogeneityWeights,
    include: &dyn Fn(usize, usize) -> bool,
    lambda: f64,
    iters: usize,
) -> f64 {
    let lip = hw.p_hat.iter().map(|p| 1.0 / p).fold(0.0, f64::max)
        * panel.x().iter().fold(0.0_f64, |m, &x| m.max(x * x));
    let mut m = Array2::<f64>::zeros(panel.dim());
    let mut best = f64::INFINITY;
    for k in 0..=iters {
        let svd = linalg::thin_svd(m.view(), None).expect("svd");
        let value = smooth_value(panel, hw, include, &m) + lambda * svd.s.sum();
        best = best.min(value);
        if k == iters {
            break;
        }
        let mut g = smooth_gradient(panel, hw, include, &m);
        let top = svd.s.first().copied().unwrap_or(0.0);
        let rank = svd.s.iter().filter(|&&v| v > 1e-12 * top && v > 0.0).count();
        if rank > 0 {
            let u = svd.u.slice(s![.., ..rank]);
            let v = svd.v.slice(s![.., ..rank]);
            g = g + u.dot(&v.t()) * lambda;
        }
        m = m - g / (lip * ((k + 1) as f64).sqrt());
    }
    best
}

fn smooth_value(
    panel: &ObservedPanel,
    hw: &HeterogeneityWeights,
    include: &dyn Fn(usize, usize) -> bool,
    m: &Array2<f64>,
) -> f64 {
    let (x, y) = (panel.x(), panel.y());
    let mut acc = 0.0;
    for ((j, s), &v) in m.indexed_iter() {
        if include(j, s) {
            acc += (y[[j, s]] - x[[j, s]] * v).powi(2) / hw.p_hat[j];
        }
    }
    0.5 * acc
}

/// Fenchel lower bound on the optimal objective, built from the gradient at
/// `m` scaled into the dual ball `‖Z‖₂ ≤ λ`. `objective(m)` minus this bound
/// caps the suboptimality of `m`.
pub fn dual_lower_bound(
    panel: &ObservedPanel,
    hw: &HeterogeneityWeights,
    include: &dyn Fn(usize, usize) -> bool,
    lambda: f64,
    m: &Array2<f64>,
) -> f64 {
    let g = smooth_gradient(panel, hw, include, m);
    let norm = linalg::operator_norm(g.view()).expect("norm");
    let scale = if norm > lambda { lambda / norm } else { 1.0 };
    let z = g * scale;
    let (x, y) = (panel.x(), panel.y());
    let mut conj = 0.0;
    for ((j, s), &zv) in z.indexed_iter() {
        let curvature = if include(j, s) { x[[j, s]] * x[[j, s]] / hw.p_hat[j] } else { 0.0 };
        if curvature > 0.0 {
            conj += zv * zv / (2.0 * curvature) + zv * y[[j, s]] / x[[j, s]];
        }
    }
    -conj
}

/// A random 10×12 instance run through the full estimator.
pub struct OracleCase {
    pub panel: ObservedPanel,
    pub hw: HeterogeneityWeights,
    pub w: DiversifiedWeights,
    pub group: GroupSpec,
    pub fit: FitResult,
}

pub fn oracle_case(seed: u64) -> OracleCase {
    let (n, t) = (10, 12);
    let (panel, _) = masked_instance(n, t, 2, 0.75, 0.5, seed);
    let hw = compute_heterogeneity(&panel).expect("heterogeneity");
    let w = random_weights(n, t, 3, seed ^ 0x5eed);
    let group = GroupSpec::block(vec![1, 4], vec![0, 2, 5], n, t).expect("group");
    let fit = run_pipeline_with(&panel, &hw, &w, &group, &PipelineConfig::default()).expect("fit");
    OracleCase { panel, hw, w, group, fit }
}

/// Relative discrepancy between each formula and an independent
/// re-evaluation (double loops, normal equations with a tiny ridge).
pub fn oracle_discrepancies(case: &OracleCase) -> Vec<(&'static str, f64)> {
    let OracleCase { panel, hw, w, group, fit } = case;
    let (n, t) = panel.dim();
    let (x, y) = (panel.x(), panel.y());
    let mut out = Vec::new();

    let mut p_err: f64 = 0.0;
    for i in 0..n {
        let mut acc = 0.0;
        for s in 0..t {
            acc += x[[i, s]] * x[[i, s]];
        }
        p_err = p_err.max((acc / t as f64 - hw.p_hat[i]).abs());
    }
    out.push(("Pi_hat", p_err));

    let mut psi_err: f64 = 0.0;
    for s in 0..t {
        let mut acc = 0.0;
        for j in 0..n {
            acc += x[[j, s]] * x[[j, s]] / (hw.p_hat[j] * hw.p_hat[j]);
        }
        psi_err = psi_err.max((acc / n as f64 - hw.psi_hat[s]).abs());
    }
    out.push(("Psi_hat", psi_err));

    let b1 = Array2::from_shape_fn((n, t), |(i, s)| {
        x[[i, s]] * (x[[i, s]] * fit.m_init[[i, s]] - y[[i, s]]) / hw.p_hat[i]
    });
    out.push(("B1", rel_diff(fit.b1.view(), b1.view())));

    let r = w.rank();
    let (wb, wf) = (w.w_beta(), w.w_f());
    let beta = Array2::from_shape_fn((n, r), |(i, k)| {
        (0..t).map(|s| fit.m_naive[[i, s]] * wf[[s, k]]).sum::<f64>() / t as f64
    });
    let f = Array2::from_shape_fn((t, r), |(s, k)| {
        (0..n).map(|i| fit.m_naive[[i, s]] * wb[[i, k]]).sum::<f64>() / n as f64
    });
    out.push((
        "beta_tilde/F_tilde",
        rel_diff(fit.beta_tilde.view(), beta.view()).max(rel_diff(fit.f_tilde.view(), f.view())),
    ));

    let bt = to_na(fit.beta_tilde.view());
    let ft = to_na(fit.f_tilde.view());
    let pb = ridge_projector(&bt);
    let pf = ridge_projector(&ft);
    let pi_inv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, hw.p_hat.iter().map(|p| 1.0 / p)));
    let psi = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(t, hw.psi_hat.iter().copied()));
    let first = &pb * pi_inv * to_na(wb.view()) * ridge_inverse_gram(&ft) * ft.transpose() * (t as f64 / n as f64);
    let second = &bt * ridge_inverse_gram(&bt) * to_na(wf.view()).transpose() * psi * &pf * (n as f64 / t as f64);
    let b2 = from_na(&((first + second) * fit.sigma2_tilde));
    out.push(("B2", rel_diff(fit.b2.view(), b2.view())));

    let m_proj = from_na(&(&pb * to_na(fit.m_naive.view()) * &pf));
    out.push(("M_proj", rel_diff(fit.m_proj.view(), m_proj.view())));

    let (rows, cols) = (group.rows(), group.cols());
    let (ni, nt) = (rows.len() as f64, cols.len() as f64);
    let m_i: Vec<f64> = (0..t).map(|s| rows.iter().map(|&i| fit.m_hat[[i, s]]).sum::<f64>() / ni).collect();
    let m_t: Vec<f64> = (0..n).map(|i| cols.iter().map(|&s| fit.m_hat[[i, s]]).sum::<f64>() / nt).collect();
    let gf = ridge_inverse_gram(&ft);
    let gb = ridge_inverse_gram(&bt);
    let mut a_row = vec![0.0; r];
    for k in 0..r {
        for l in 0..r {
            a_row[l] += (0..t).map(|s| m_i[s] * ft[(s, k)]).sum::<f64>() * gf[(k, l)];
        }
    }
    let mut b_row = vec![0.0; r];
    for k in 0..r {
        for l in 0..r {
            b_row[l] += (0..n).map(|i| m_t[i] * bt[(i, k)]).sum::<f64>() * gb[(k, l)];
        }
    }
    let mut term1 = 0.0;
    for &s in cols {
        for j in 0..n {
            let c: f64 = (0..r).map(|l| a_row[l] * wb[[j, l]]).sum();
            term1 += (c * x[[j, s]] / hw.p_hat[j]).powi(2);
        }
    }
    let mut term2 = 0.0;
    for &i in rows {
        for s in 0..t {
            let d: f64 = (0..r).map(|l| b_row[l] * wf[[s, l]]).sum();
            term2 += (d * x[[i, s]] / hw.p_hat[i]).powi(2);
        }
    }
    let v = fit.sigma2_tilde * (term1 / (nt * nt * (n * n) as f64) + term2 / (ni * ni * (t * t) as f64));
    let v_hat = variance_group(fit, panel, hw, w, group).expect("variance");
    out.push(("V_hat", (v_hat - v).abs() / v.abs().max(1e-300)));

    let mut acc = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for s in 0..t {
            if group.contains(i, s) {
                acc += fit.m_hat[[i, s]];
                count += 1;
            }
        }
    }
    let avg = group_average(fit.m_hat.view(), group).expect("average");
    out.push(("group average", (avg - acc / count as f64).abs()));
    out
}

