//! Group averages of `M̂`, their plug-in variance, and normal confidence
//! intervals, for one panel or for the difference of two treatment arms.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result, Warning};
use crate::group::{GroupKind, GroupSpec};
use crate::linalg::ColumnSpace;
use crate::panel::{HeterogeneityWeights, ObservedPanel};
use crate::pipeline::FitResult;
use crate::weights::DiversifiedWeights;

/// Flag attached to serial and cross-sectional variances, which reuse the
/// block formula with the full index set on the other side.
pub const SPECIALIZED_VARIANCE: &str = "specialized-variance";

/// `|G|⁻¹ Σ_{(i,t)∈G} M_it`.
pub fn group_average(m: ArrayView2<f64>, group: &GroupSpec) -> Result<f64> {
    if m.dim() != group.dims() {
        return Err(Error::shape("matrix vs group", group.dims(), m.dim()));
    }
    let mut acc = 0.0;
    for &i in group.rows() {
        let row = m.row(i);
        for &t in group.cols() {
            acc += row[t];
        }
    }
    Ok(acc / group.size() as f64)
}

fn nonzero_space(b: ArrayView2<f64>, what: &str) -> Result<ColumnSpace> {
    let space = ColumnSpace::new(b)?;
    if space.rank() == 0 {
        return Err(Error::RankDeficient {
            what: what.to_string(),
            rank: 0,
            required: 1,
        });
    }
    Ok(space)
}

/// The two sums of the plug-in variance, without the `σ̃²` factor.
fn variance_terms(
    fit: &FitResult,
    panel: &ObservedPanel,
    hw: &HeterogeneityWeights,
    w: &DiversifiedWeights,
    rows: &[usize],
    cols: &[usize],
) -> Result<(f64, f64)> {
    let (n, t) = panel.dim();
    w.check_dims(n, t)?;
    if fit.m_hat.dim() != (n, t) {
        return Err(Error::shape("fit vs panel", (n, t), fit.m_hat.dim()));
    }
    let x = panel.x();
    let sb = nonzero_space(fit.beta_tilde.view(), "beta_tilde")?;
    // The variance describes the fully debiased estimator, also when the
    // reported point estimate skips the second debiasing step.
    let debiased;
    let m_hat = if fit.ablation_no_b2 {
        debiased = &fit.m_proj - &fit.b2;
        &debiased
    } else {
        &fit.m_hat
    };
    let sf = nonzero_space(fit.f_tilde.view(), "F_tilde")?;

    // c = W_β (F̃'F̃)⁺ F̃' m_I, with m_I the row average of M̂ over I
    let m_i = rows
        .iter()
        .fold(Array1::<f64>::zeros(t), |acc, &i| acc + m_hat.row(i))
        / rows.len() as f64;
    let c = w.w_beta().dot(&sf.pinv().dot(&m_i));
    let mut first = 0.0;
    for &s in cols {
        for j in 0..n {
            first += (c[j] * x[[j, s]] / hw.p_hat[j]).powi(2);
        }
    }
    first /= (cols.len() * cols.len()) as f64 * (n * n) as f64;

    // d = W_F (β̃'β̃)⁺ β̃' m_T, with m_T the column average of M̂ over T
    let m_t = cols
        .iter()
        .fold(Array1::<f64>::zeros(n), |acc, &s| acc + m_hat.column(s))
        / cols.len() as f64;
    let d = w.w_f().dot(&sb.pinv().dot(&m_t));
    let mut second = 0.0;
    for &i in rows {
        let mut row = 0.0;
        for s in 0..t {
            row += (d[s] * x[[i, s]]).powi(2);
        }
        second += row / (hw.p_hat[i] * hw.p_hat[i]);
    }
    second /= (rows.len() * rows.len()) as f64 * (t * t) as f64;

    Ok((first, second))
}

/// Plug-in variance for a block group.
pub fn variance_block(
    fit: &FitResult,
    panel: &ObservedPanel,
    hw: &HeterogeneityWeights,
    w: &DiversifiedWeights,
    group: &GroupSpec,
) -> Result<f64> {
    if group.kind() != GroupKind::Block {
        return Err(Error::InvalidInput(format!(
            "variance_block needs a block group, got {:?}",
            group.kind()
        )));
    }
    variance_group(fit, panel, hw, w, group)
}

/// Plug-in variance for any group kind. Serial groups use every column and
/// cross-sectional groups every row in the block formula.
pub fn variance_group(
    fit: &FitResult,
    panel: &ObservedPanel,
    hw: &HeterogeneityWeights,
    w: &DiversifiedWeights,
    group: &GroupSpec,
) -> Result<f64> {
    if group.dims() != panel.dim() {
        return Err(Error::shape("group vs panel", panel.dim(), group.dims()));
    }
    let (a, b) = variance_terms(fit, panel, hw, w, group.rows(), group.cols())?;
    Ok(fit.sigma2_tilde * (a + b))
}

fn group_flags(group: &GroupSpec) -> Vec<String> {
    match group.kind() {
        GroupKind::Block => Vec::new(),
        _ => vec![SPECIALIZED_VARIANCE.to_string()],
    }
}

fn serialize_z<S: Serializer>(z: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if z.is_infinite() {
        s.serialize_str(if *z > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*z)
    }
}

/// Point estimate, variance, test statistics and confidence interval for a
/// group average.
#[derive(Debug, Clone, Serialize)]
pub struct InferenceResult {
    pub estimate: f64,
    pub variance: f64,
    #[serde(rename = "se")]
    pub std_error: f64,
    #[serde(rename = "z", serialize_with = "serialize_z")]
    pub z_stat: f64,
    /// `P(Z ≥ z)`, for the alternative that the average exceeds the null.
    pub p_one_sided: f64,
    pub p_two_sided: f64,
    pub ci: [f64; 2],
    pub level: f64,
    pub null_value: f64,
    pub group: GroupSpec,
    pub flags: Vec<String>,
    pub warnings: Vec<Warning>,
}

impl InferenceResult {
    pub fn ci_lower(&self) -> f64 {
        self.ci[0]
    }

    pub fn ci_upper(&self) -> f64 {
        self.ci[1]
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci[0] <= value && value <= self.ci[1]
    }
}

/// `Φ⁻¹((1 + level) / 2)`.
pub fn normal_quantile(level: f64) -> Result<f64> {
    check_level(level)?;
    Ok(standard_normal().inverse_cdf((1.0 + level) / 2.0))
}

fn standard_normal() -> Normal {
    Normal::standard()
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.5 && level < 1.0) {
        return Err(Error::InvalidInput(format!("level must lie in (0.5, 1), got {level}")));
    }
    Ok(())
}

/// Assemble a result from an estimate and its variance.
pub fn from_estimate(
    estimate: f64,
    variance: f64,
    level: f64,
    null_value: f64,
    group: &GroupSpec,
    flags: Vec<String>,
) -> Result<InferenceResult> {
    let q = normal_quantile(level)?;
    if !(variance >= 0.0) || !estimate.is_finite() {
        return Err(Error::DegenerateProblem(format!(
            "non-finite estimate {estimate} or invalid variance {variance}"
        )));
    }
    let se = variance.sqrt();
    let diff = estimate - null_value;
    let mut warnings = Vec::new();
    let z = if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        warnings.push(Warning::new(
            "zero-variance",
            "estimated variance is zero; z is reported as infinite",
        ));
        diff.signum() * f64::INFINITY
    };
    let normal = standard_normal();
    Ok(InferenceResult {
        estimate,
        variance,
        std_error: se,
        z_stat: z,
        p_one_sided: normal.sf(z),
        p_two_sided: (2.0 * normal.sf(z.abs())).min(1.0),
        ci: [estimate - q * se, estimate + q * se],
        level,
        null_value,
        group: group.clone(),
        flags,
        warnings,
    })
}

/// Inference on the group average of `M̂`.
pub fn infer(
    fit: &FitResult,
    panel: &ObservedPanel,
    hw: &HeterogeneityWeights,
    w: &DiversifiedWeights,
    group: &GroupSpec,
    level: f64,
    null_value: f64,
) -> Result<InferenceResult> {
    check_level(level)?;
    let estimate = group_average(fit.m_hat.view(), group)?;
    let variance = variance_group(fit, panel, hw, w, group)?;
    let mut flags = group_flags(group);
    if fit.ablation_no_b2 {
        flags.push("ablation-no-B2".into());
    }
    from_estimate(estimate, variance, level, null_value, group, flags)
}

/// One arm of a two-arm comparison.
#[derive(Debug, Clone, Copy)]
pub struct Arm<'a> {
    pub fit: &'a FitResult,
    pub panel: &'a ObservedPanel,
    pub hw: &'a HeterogeneityWeights,
}

/// Check that the two regressor matrices sum to one in every cell.
pub fn check_complementary(x1: ArrayView2<f64>, x0: ArrayView2<f64>) -> Result<()> {
    if x1.dim() != x0.dim() {
        return Err(Error::shape("treated vs control mask", x1.dim(), x0.dim()));
    }
    for (((i, t), &a), &b) in x1.indexed_iter().zip(x0.iter()) {
        if a + b != 1.0 || !(a == 0.0 || a == 1.0) {
            return Err(Error::NonComplementaryMasks { row: i + 1, col: t + 1 });
        }
    }
    Ok(())
}

/// Inference on the group average of `M̂⁽¹⁾ − M̂⁽⁰⁾`, with variance
/// `V̂⁽¹⁾ + V̂⁽⁰⁾`. Both arms must share the weights.
pub fn hte_infer(
    treated: Arm<'_>,
    control: Arm<'_>,
    w: &DiversifiedWeights,
    group: &GroupSpec,
    level: f64,
    null_value: f64,
) -> Result<InferenceResult> {
    check_level(level)?;
    check_complementary(treated.panel.x().view(), control.panel.x().view())?;
    let diff: Array2<f64> = &treated.fit.m_hat - &control.fit.m_hat;
    let estimate = group_average(diff.view(), group)?;
    let v1 = variance_group(treated.fit, treated.panel, treated.hw, w, group)?;
    let v0 = variance_group(control.fit, control.panel, control.hw, w, group)?;
    let mut flags = group_flags(group);
    flags.push("two-arm".into());
    if treated.fit.ablation_no_b2 || control.fit.ablation_no_b2 {
        flags.push("ablation-no-B2".into());
    }
    from_estimate(estimate, v1 + v0, level, null_value, group, flags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{compute_heterogeneity, PanelMode};
    use crate::pipeline::{run_pipeline_with, PipelineConfig};
    use crate::weights::Provenance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
    }

    struct Case {
        panel: ObservedPanel,
        hw: HeterogeneityWeights,
        w: DiversifiedWeights,
        group: GroupSpec,
        fit: FitResult,
    }

    fn case(n: usize, t: usize, seed: u64) -> Case {
        case_p(n, t, 0.8, seed)
    }

    fn case_p(n: usize, t: usize, p: f64, seed: u64) -> Case {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let beta = gaussian(n, 2, &mut rng);
        let f = gaussian(t, 2, &mut rng);
        let x = Array2::from_shape_fn((n, t), |_| if rng.random::<f64>() < p { 1.0 } else { 0.0 });
        let y = (beta.dot(&f.t()) + gaussian(n, t, &mut rng) * 0.5) * &x;
        let panel = ObservedPanel::new(y, x, PanelMode::BinaryMask).unwrap();
        let hw = compute_heterogeneity(&panel).unwrap();
        let w = DiversifiedWeights::new(beta, f, Provenance::UserSupplied).unwrap();
        let group = GroupSpec::block(vec![0, 1], vec![1, 2], n, t).unwrap();
        let fit = run_pipeline_with(&panel, &hw, &w, &group, &PipelineConfig::default()).unwrap();
        Case { panel, hw, w, group, fit }
    }

    #[test]
    fn ablation_changes_estimate_but_not_variance() {
        let c = case(12, 10, 21);
        let cfg = PipelineConfig { ablate_b2: true, ..PipelineConfig::default() };
        let ablated = run_pipeline_with(&c.panel, &c.hw, &c.w, &c.group, &cfg).unwrap();
        let full = infer(&c.fit, &c.panel, &c.hw, &c.w, &c.group, 0.95, 0.0).unwrap();
        let abl = infer(&ablated, &c.panel, &c.hw, &c.w, &c.group, 0.95, 0.0).unwrap();
        assert_eq!(abl.variance, full.variance);
        assert_ne!(abl.estimate, full.estimate);
        assert!(abl.flags.iter().any(|f| f == "ablation-no-B2"));
    }

    #[test]
    fn group_average_cases() {
        let g = GroupSpec::block(vec![0], vec![1], 3, 3).unwrap();
        let m = Array2::from_shape_fn((3, 3), |(i, j)| (i * 3 + j) as f64);
        assert_eq!(group_average(m.view(), &g).unwrap(), 1.0);
        let ones = Array2::ones((3, 3));
        let s = GroupSpec::serial(vec![1, 2], 3, 3).unwrap();
        assert_eq!(group_average(ones.view(), &s).unwrap(), 1.0);
    }

    #[test]
    fn group_average_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = gaussian(10, 12, &mut rng);
        let g = GroupSpec::block(vec![1, 4, 7], vec![0, 5, 6, 11], 10, 12).unwrap();
        let mut acc = 0.0;
        let mut count = 0;
        for i in 0..10 {
            for t in 0..12 {
                if g.contains(i, t) {
                    acc += m[[i, t]];
                    count += 1;
                }
            }
        }
        assert!((group_average(m.view(), &g).unwrap() - acc / count as f64).abs() <= 1e-14);
    }

    fn variance_oracle(c: &Case, group: &GroupSpec) -> f64 {
        let (n, t) = c.panel.dim();
        let to_na = |a: &Array2<f64>| nalgebra::DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]]);
        let bt = to_na(&c.fit.beta_tilde);
        let ft = to_na(&c.fit.f_tilde);
        let ginv = |b: &nalgebra::DMatrix<f64>| (b.transpose() * b).try_inverse().unwrap();
        let fg = &ft * ginv(&ft);
        let bg = &bt * ginv(&bt);
        let (rows, cols) = (group.rows(), group.cols());
        let x = c.panel.x();
        let wb = c.w.w_beta();
        let wf = c.w.w_f();
        let r = wb.ncols();
        let mut first = 0.0;
        for &s in cols {
            for j in 0..n {
                let mut inner = 0.0;
                for tt in 0..t {
                    let mut m_i = 0.0;
                    for &i in rows {
                        m_i += c.fit.m_hat[[i, tt]];
                    }
                    m_i /= rows.len() as f64;
                    for k in 0..r {
                        inner += m_i * fg[(tt, k)] * wb[[j, k]];
                    }
                }
                first += (inner * x[[j, s]] / c.hw.p_hat[j]).powi(2);
            }
        }
        let mut second = 0.0;
        for &i in rows {
            for s in 0..t {
                let mut inner = 0.0;
                for j in 0..n {
                    let mut m_t = 0.0;
                    for &tt in cols {
                        m_t += c.fit.m_hat[[j, tt]];
                    }
                    m_t /= cols.len() as f64;
                    for k in 0..r {
                        inner += m_t * bg[(j, k)] * wf[[s, k]];
                    }
                }
                second += (inner * x[[i, s]] / c.hw.p_hat[i]).powi(2);
            }
        }
        let s2 = c.fit.sigma2_tilde;
        s2 / ((cols.len() * cols.len() * n * n) as f64) * first
            + s2 / ((rows.len() * rows.len() * t * t) as f64) * second
    }

    #[test]
    fn variance_matches_double_loop() {
        let c = case(10, 10, 2);
        let v = variance_block(&c.fit, &c.panel, &c.hw, &c.w, &c.group).unwrap();
        let oracle = variance_oracle(&c, &c.group);
        assert!(v > 0.0);
        assert!((v - oracle).abs() <= 1e-10 * oracle.max(1.0), "{v} vs {oracle}");
        let serial = GroupSpec::serial(vec![3], 10, 10).unwrap();
        let vs = variance_group(&c.fit, &c.panel, &c.hw, &c.w, &serial).unwrap();
        assert!((vs - variance_oracle(&c, &serial)).abs() <= 1e-10 * vs.max(1.0));
        assert!(variance_block(&c.fit, &c.panel, &c.hw, &c.w, &serial).is_err());
    }

    #[test]
    fn cross_sectional_dispatch_matches_block_with_all_rows() {
        let c = case(8, 9, 3);
        let cs = GroupSpec::cross_sectional((0..8).collect(), 8, 9).unwrap();
        let v_cs = variance_group(&c.fit, &c.panel, &c.hw, &c.w, &cs).unwrap();
        let (a, b) = variance_terms(&c.fit, &c.panel, &c.hw, &c.w, &(0..8).collect::<Vec<_>>(), &(0..8).collect::<Vec<_>>())
            .unwrap();
        assert_eq!(v_cs, c.fit.sigma2_tilde * (a + b));
        let res = infer(&c.fit, &c.panel, &c.hw, &c.w, &cs, 0.95, 0.0).unwrap();
        assert_eq!(res.flags, vec![SPECIALIZED_VARIANCE.to_string()]);
    }

    #[test]
    fn variance_scales_with_sigma2() {
        let c = case(9, 11, 4);
        let v = variance_group(&c.fit, &c.panel, &c.hw, &c.w, &c.group).unwrap();
        let mut doubled = c.fit.clone();
        doubled.sigma2_tilde *= 2.0;
        let v2 = variance_group(&doubled, &c.panel, &c.hw, &c.w, &c.group).unwrap();
        assert!((v2 - 2.0 * v).abs() <= 1e-15 * v2);
        let mut zero = c.fit.clone();
        zero.sigma2_tilde = 0.0;
        assert_eq!(variance_group(&zero, &c.panel, &c.hw, &c.w, &c.group).unwrap(), 0.0);
    }

    #[test]
    fn quantile_and_interval_width() {
        assert!((normal_quantile(0.95).unwrap() - 1.959964).abs() < 1e-5);
        assert!(normal_quantile(0.4).is_err());
        assert!(normal_quantile(1.0).is_err());
        let g = GroupSpec::block(vec![0], vec![0], 2, 2).unwrap();
        let r = from_estimate(1.3, 0.25, 0.9, 0.0, &g, vec![]).unwrap();
        let q = normal_quantile(0.9).unwrap();
        assert!((r.ci_upper() - r.ci_lower() - 2.0 * q * 0.5).abs() <= 1e-12);
        assert_eq!(r.std_error, 0.5);
        let at_null = from_estimate(1.3, 0.25, 0.9, 1.3, &g, vec![]).unwrap();
        assert_eq!(at_null.z_stat, 0.0);
        assert!((at_null.p_one_sided - 0.5).abs() < 1e-15);
        assert!((at_null.p_two_sided - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_variance_gives_infinite_z() {
        let g = GroupSpec::block(vec![0], vec![0], 2, 2).unwrap();
        let r = from_estimate(-2.0, 0.0, 0.95, 0.0, &g, vec![]).unwrap();
        assert_eq!(r.z_stat, f64::NEG_INFINITY);
        assert_eq!(r.warnings.len(), 1);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["z"], "-inf");
        assert_eq!(json["ci"][0], -2.0);
        assert_eq!(json["group"]["kind"], "block");
    }

    #[test]
    fn hte_identical_arms_and_swap() {
        let c = case_p(10, 10, 0.5, 5);
        let mut x0 = c.panel.x().mapv(|v| 1.0 - v);
        let y0 = Array2::from_shape_fn((10, 10), |(i, t)| (i as f64 - t as f64) * 0.1) * &x0;
        let control = ObservedPanel::new(y0, x0.clone(), PanelMode::BinaryMask).unwrap();
        let hw0 = compute_heterogeneity(&control).unwrap();
        let fit0 = run_pipeline_with(&control, &hw0, &c.w, &c.group, &PipelineConfig::default()).unwrap();
        let a1 = Arm { fit: &c.fit, panel: &c.panel, hw: &c.hw };
        let a0 = Arm { fit: &fit0, panel: &control, hw: &hw0 };
        let fwd = hte_infer(a1, a0, &c.w, &c.group, 0.95, 0.0).unwrap();
        let back = hte_infer(a0, a1, &c.w, &c.group, 0.95, 0.0).unwrap();
        assert_eq!(fwd.estimate, -back.estimate);
        assert_eq!(fwd.variance, back.variance);
        let v1 = variance_group(&c.fit, &c.panel, &c.hw, &c.w, &c.group).unwrap();
        let v0 = variance_group(&fit0, &control, &hw0, &c.w, &c.group).unwrap();
        assert_eq!(fwd.variance, v1 + v0);

        // identical fitted matrices give a zero estimate
        let mut same = fit0.clone();
        same.m_hat = c.fit.m_hat.clone();
        let a_same = Arm { fit: &same, panel: &control, hw: &hw0 };
        assert_eq!(hte_infer(a1, a_same, &c.w, &c.group, 0.95, 0.0).unwrap().estimate, 0.0);

        x0[[0, 0]] = 1.0 - x0[[0, 0]];
        assert!(matches!(
            check_complementary(c.panel.x().view(), x0.view()),
            Err(Error::NonComplementaryMasks { row: 1, col: 1 })
        ));
    }
}
