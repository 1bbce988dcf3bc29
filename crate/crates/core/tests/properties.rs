mod common;

use common::*;
use lrinfer::group::GroupSpec;
use lrinfer::inference::{infer, normal_quantile, variance_group};
use lrinfer::linalg::{self, projector, svt};
use lrinfer::nuclear::{build_init, fit_weighted_nuclear, LambdaChoice, NuclearConfig};
use lrinfer::panel::{compute_heterogeneity, compute_heterogeneity_with_floor, ObservedPanel, PanelMode};
use lrinfer::pipeline::{run_pipeline_with, PipelineConfig};
use lrinfer::weights::{diversify_singular_vectors, from_characteristics};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

fn fixed(lambda: f64) -> PipelineConfig {
    PipelineConfig {
        nuclear: NuclearConfig {
            lambda: LambdaChoice::Fixed(lambda),
            ..NuclearConfig::default()
        },
        ..PipelineConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projector_is_invariant_under_recombination(seed in any::<u64>(), n in 4usize..12, k in 1usize..4) {
        let mut g = rng(seed);
        let b = gaussian(n, k, &mut g);
        let a = invertible(k, &mut g);
        let p = projector(b.view()).unwrap();
        let pa = projector(b.dot(&a).view()).unwrap();
        prop_assert!(max_abs_diff(p.view(), pa.view()) <= 1e-9);
        prop_assert!(max_abs_diff(p.dot(&p).view(), p.view()) <= 1e-9);
        prop_assert!(max_abs_diff(p.t(), p.view()) <= 1e-12);
    }

    #[test]
    fn svt_is_non_expansive(seed in any::<u64>(), tau in 0.0f64..3.0) {
        let mut g = rng(seed);
        let a = gaussian(6, 5, &mut g);
        let b = &a + &(gaussian(6, 5, &mut g) * 0.5);
        let diff = &svt(a.view(), tau).unwrap() - &svt(b.view(), tau).unwrap();
        let lhs = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rhs = (&a - &b).iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(lhs <= rhs + 1e-12);
    }

    #[test]
    fn svt_nuclear_norm_is_shrunk_spectrum(seed in any::<u64>(), tau in 0.0f64..3.0) {
        let mut g = rng(seed);
        let a = gaussian(7, 4, &mut g);
        let s = linalg::singular_values(a.view()).unwrap();
        let expected: f64 = s.iter().map(|v| (v - tau).max(0.0)).sum();
        let got = linalg::nuclear_norm(svt(a.view(), tau).unwrap().view()).unwrap();
        prop_assert!((got - expected).abs() <= 1e-9);
    }

    #[test]
    fn heterogeneity_is_permutation_equivariant(seed in any::<u64>()) {
        let mut g = rng(seed);
        let (n, t) = (9, 7);
        let x = gaussian(n, t, &mut g).mapv(|v| v + 0.5);
        let hw = compute_heterogeneity_with_floor(x.view(), 1e-8).unwrap();
        let mut rows: Vec<usize> = (0..n).collect();
        let mut cols: Vec<usize> = (0..t).collect();
        rows.shuffle(&mut g);
        cols.shuffle(&mut g);
        let xp = x.select(Axis(0), &rows).select(Axis(1), &cols);
        let hp = compute_heterogeneity_with_floor(xp.view(), 1e-8).unwrap();
        for (k, &i) in rows.iter().enumerate() {
            prop_assert!(relative(hp.p_hat[k], hw.p_hat[i]) <= 1e-12);
        }
        for (k, &s) in cols.iter().enumerate() {
            prop_assert!(relative(hp.psi_hat[k], hw.psi_hat[s]) <= 1e-12);
        }
    }

    #[test]
    fn heterogeneity_ignores_outcome(seed in any::<u64>()) {
        let mut g = rng(seed);
        let x = mask(8, 6, 0.6, &mut g);
        let y1 = &x * &gaussian(8, 6, &mut g);
        let y2 = &x * &(gaussian(8, 6, &mut g) * 10.0);
        let h1 = compute_heterogeneity(&ObservedPanel::new(y1, x.clone(), PanelMode::BinaryMask).unwrap()).unwrap();
        let h2 = compute_heterogeneity(&ObservedPanel::new(y2, x.clone(), PanelMode::BinaryMask).unwrap()).unwrap();
        prop_assert_eq!(&h1, &h2);
        for s in 0..6 {
            let direct: f64 = (0..8).map(|j| x[[j, s]] / (h1.p_hat[j] * h1.p_hat[j])).sum::<f64>() / 8.0;
            prop_assert!((direct - h1.psi_hat[s]).abs() <= 1e-14);
        }
    }

    #[test]
    fn scaled_singular_vectors_are_bounded(seed in any::<u64>(), gamma in 0.5f64..5.0) {
        let mut g = rng(seed);
        let u = gaussian(15, 3, &mut g) / 4.0;
        let w = diversify_singular_vectors(u.view(), gamma).unwrap();
        prop_assert!(w.iter().all(|v| v.abs() <= gamma + 1e-12));
        let bound = gamma * 3f64.sqrt();
        prop_assert!(linalg::max_row_norm(w.view()) <= bound + 1e-12);
    }

    #[test]
    fn characteristic_weights_have_full_rank_gram(seed in any::<u64>()) {
        let mut g = rng(seed);
        let z = gaussian(40, 2, &mut g);
        let f = gaussian(30, 2, &mut g);
        let w = from_characteristics(z.view(), f.view(), 2, true).unwrap();
        for side in [w.w_beta(), w.w_f()] {
            let gram = side.t().dot(side) / side.nrows() as f64;
            let s = linalg::singular_values(gram.view()).unwrap();
            prop_assert!(s[s.len() - 1] > 1e-8);
        }
    }

    #[test]
    fn interval_width_matches_quantile(est in -5.0f64..5.0, var in 0.0f64..4.0, level in 0.55f64..0.995) {
        let res = lrinfer::inference::from_estimate(
            est, var, level, 0.0, &GroupSpec::block(vec![0], vec![0], 2, 2).unwrap(), Vec::new(),
        ).unwrap();
        let width = res.ci_upper() - res.ci_lower();
        prop_assert!((width - 2.0 * normal_quantile(level).unwrap() * var.sqrt()).abs() <= 1e-12);
        prop_assert!((res.std_error - var.sqrt()).abs() <= 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn solver_is_scale_equivariant(seed in any::<u64>(), c in prop::sample::select(vec![0.5, 3.0])) {
        let (panel, _) = masked_instance(12, 10, 2, 0.7, 0.3, seed);
        let hw = compute_heterogeneity(&panel).unwrap();
        let cfg = NuclearConfig::default();
        let base = fit_weighted_nuclear(&panel, &hw, &|_, _| true, 1.5, &cfg).unwrap();
        let scaled_panel = panel.with_outcome(panel.y() * c).unwrap();
        let scaled = fit_weighted_nuclear(&scaled_panel, &hw, &|_, _| true, 1.5 * c, &cfg).unwrap();
        prop_assert!(rel_diff(scaled.estimate.view(), (base.estimate * c).view()) <= 1e-8);
    }

    #[test]
    fn solver_satisfies_optimality_conditions(seed in any::<u64>()) {
        let (panel, _) = masked_instance(15, 12, 2, 0.7, 0.5, seed);
        let hw = compute_heterogeneity(&panel).unwrap();
        let lambda = 2.0;
        let fit = fit_weighted_nuclear(&panel, &hw, &|_, _| true, lambda, &NuclearConfig::default()).unwrap();
        let (top, orth) = kkt_residuals(&panel, &hw, &|_, _| true, lambda, &fit.estimate);
        prop_assert!(top <= 1e-2, "top-subspace residual {}", top);
        prop_assert!(orth <= 1.0 + 1e-2, "complement spectral norm {}", orth);
        prop_assert!(fit.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn merge_identity_is_exact(seed in any::<u64>(), kind in 0usize..3) {
        let (n, t) = (10, 9);
        let (panel, _) = masked_instance(n, t, 1, 0.8, 0.4, seed);
        let hw = compute_heterogeneity(&panel).unwrap();
        let group = match kind {
            0 => GroupSpec::block(vec![1, 3], vec![2], n, t),
            1 => GroupSpec::serial(vec![0, 5], n, t),
            _ => GroupSpec::cross_sectional(vec![4, 8], n, t),
        }
        .unwrap();
        let init = build_init(&panel, &hw, &group, &NuclearConfig::default(), 1).unwrap();
        for ((i, s), &v) in init.m_init.indexed_iter() {
            let expected = if group.in_restricted_sample(i, s) { init.m_rest[[i, s]] } else { init.m_full[[i, s]] };
            prop_assert_eq!(v.to_bits(), expected.to_bits());
        }
    }

    #[test]
    fn pipeline_is_scale_equivariant(seed in any::<u64>(), c in prop::sample::select(vec![0.5, 3.0])) {
        let (n, t) = (14, 12);
        let (panel, _) = masked_instance(n, t, 2, 0.8, 0.3, seed);
        let hw = compute_heterogeneity(&panel).unwrap();
        let w = random_weights(n, t, 3, seed.wrapping_add(1));
        let group = GroupSpec::block(vec![0, 1], vec![0, 1], n, t).unwrap();
        let lambda = 1.0;
        let base = run_pipeline_with(&panel, &hw, &w, &group, &fixed(lambda)).unwrap();
        let scaled_panel = panel.with_outcome(panel.y() * c).unwrap();
        let scaled = run_pipeline_with(&scaled_panel, &hw, &w, &group, &fixed(lambda * c)).unwrap();
        prop_assert!(rel_diff(scaled.m_hat.view(), (&base.m_hat * c).view()) <= 1e-7);
        prop_assert!(rel_diff(scaled.b1.view(), (&base.b1 * c).view()) <= 1e-7);
        prop_assert!(rel_diff(scaled.b2.view(), (&base.b2 * c).view()) <= 1e-7);
        prop_assert!(relative(scaled.sigma2_tilde, base.sigma2_tilde * c * c) <= 1e-7);

        let z0 = infer(&base, &panel, &hw, &w, &group, 0.95, 0.0).unwrap();
        let z1 = infer(&scaled, &scaled_panel, &hw, &w, &group, 0.95, 0.0).unwrap();
        prop_assert!(relative(z1.variance, z0.variance * c * c) <= 1e-6);
        prop_assert!((z1.z_stat - z0.z_stat).abs() <= 1e-6 * z0.z_stat.abs().max(1.0));
    }

    #[test]
    fn estimates_are_invariant_under_weight_recombination(seed in any::<u64>()) {
        let (n, t) = (14, 12);
        let (panel, _) = masked_instance(n, t, 2, 0.8, 0.3, seed);
        let hw = compute_heterogeneity(&panel).unwrap();
        let w = random_weights(n, t, 3, seed.wrapping_add(7));
        let mut g = rng(seed.wrapping_mul(3));
        let wr = w.recombined(invertible(3, &mut g).view(), invertible(3, &mut g).view()).unwrap();
        let group = GroupSpec::block(vec![2], vec![3, 4], n, t).unwrap();
        let cfg = fixed(1.0);
        let a = run_pipeline_with(&panel, &hw, &w, &group, &cfg).unwrap();
        let b = run_pipeline_with(&panel, &hw, &wr, &group, &cfg).unwrap();
        prop_assert!(rel_diff(b.m_hat.view(), a.m_hat.view()) <= 1e-8);
        let va = variance_group(&a, &panel, &hw, &w, &group).unwrap();
        let vb = variance_group(&b, &panel, &hw, &wr, &group).unwrap();
        prop_assert!(relative(vb, va) <= 1e-6);
        let za = infer(&a, &panel, &hw, &w, &group, 0.95, 0.0).unwrap().z_stat;
        let zb = infer(&b, &panel, &hw, &wr, &group, 0.95, 0.0).unwrap().z_stat;
        prop_assert!((za - zb).abs() <= 1e-6 * za.abs().max(1.0));
    }

    #[test]
    fn projection_rank_is_bounded(seed in any::<u64>(), rank in 1usize..4) {
        let (n, t) = (16, 14);
        let (panel, _) = masked_instance(n, t, 2, 0.8, 1.0, seed);
        let hw = compute_heterogeneity(&panel).unwrap();
        let w = random_weights(n, t, rank, seed.wrapping_add(11));
        let group = GroupSpec::block(vec![0], vec![0], n, t).unwrap();
        let fit = run_pipeline_with(&panel, &hw, &w, &group, &PipelineConfig::default()).unwrap();
        prop_assert!(linalg::numerical_rank(fit.m_proj.view(), 1e-8).unwrap() <= rank);
        prop_assert!(linalg::numerical_rank(fit.m_hat.view(), 1e-8).unwrap() <= 2 * rank);
        for b in [&fit.beta_tilde, &fit.f_tilde] {
            let p = projector(b.view()).unwrap();
            prop_assert!(max_abs_diff(p.dot(&p).view(), p.view()) <= 1e-9);
            prop_assert!(max_abs_diff(p.t(), p.view()) <= 1e-12);
        }
    }

    #[test]
    fn variance_is_linear_in_sigma2(seed in any::<u64>()) {
        let case = oracle_case(seed);
        let mut doubled = case.fit.clone();
        doubled.sigma2_tilde *= 2.0;
        let v = variance_group(&case.fit, &case.panel, &case.hw, &case.w, &case.group).unwrap();
        let v2 = variance_group(&doubled, &case.panel, &case.hw, &case.w, &case.group).unwrap();
        prop_assert_eq!(v2, 2.0 * v);
    }
}

#[test]
fn noiseless_pipeline_recovers_truth_for_over_specified_weights() {
    let mut g = rng(5);
    let (n, t) = (30, 30);
    let beta = gaussian(n, 2, &mut g);
    let f = gaussian(t, 2, &mut g);
    let truth = beta.dot(&f.t());
    let panel = ObservedPanel::new(truth.clone(), Array2::ones((n, t)), PanelMode::BinaryMask).unwrap();
    let hw = compute_heterogeneity(&panel).unwrap();
    let group = GroupSpec::block(vec![0, 1], vec![0, 1], n, t).unwrap();
    let cfg = PipelineConfig {
        force_sigma2_zero: true,
        ..fixed(1e-8)
    };
    for extra in 0..3 {
        let wb = ndarray::concatenate![Axis(1), beta, gaussian(n, extra, &mut g)];
        let wf = ndarray::concatenate![Axis(1), f, gaussian(t, extra, &mut g)];
        let w = lrinfer::weights::DiversifiedWeights::new(wb, wf, lrinfer::weights::Provenance::UserSupplied).unwrap();
        let fit = run_pipeline_with(&panel, &hw, &w, &group, &cfg).unwrap();
        assert!(max_abs_diff(fit.m_hat.view(), truth.view()) <= 1e-6);
    }
}
