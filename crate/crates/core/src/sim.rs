//! Simulated factor panels and a Monte Carlo harness for the coverage of
//! the group-average confidence intervals.
//!
//! Every draw is a deterministic function of a 64-bit seed. Replication `k`
//! of an experiment uses the seed [`rep_seed`]`(seed, k)`, so results do not
//! depend on how replications are scheduled across threads.

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Warning};
use crate::group::GroupSpec;
use crate::inference::{group_average, hte_infer, infer, normal_quantile, Arm, InferenceResult};
use crate::linalg;
use crate::nuclear::{build_init, NuclearConfig};
use crate::panel::{compute_heterogeneity, ObservedPanel, PanelMode};
use crate::pipeline::{run_from_init, PipelineConfig};
use crate::weights::{self, DiversifiedWeights, Provenance, Side};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
/// Salt separating the weight stream from the data stream of a draw.
const WEIGHT_STREAM: u64 = 0xD1B5_4A32_D192_ED03;

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `rep`: `splitmix64(seed + (rep + 1) * φ)` with `φ`
/// the 64-bit golden-ratio constant.
pub fn rep_seed(seed: u64, rep: usize) -> u64 {
    splitmix64(seed.wrapping_add((rep as u64 + 1).wrapping_mul(GOLDEN)))
}

/// Observation probability: one value for every row or one per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Probability {
    Constant(f64),
    PerRow(Vec<f64>),
}

impl Probability {
    fn get(&self, i: usize) -> f64 {
        match self {
            Probability::Constant(p) => *p,
            Probability::PerRow(v) => v[i],
        }
    }

    fn mean(&self) -> f64 {
        match self {
            Probability::Constant(p) => *p,
            Probability::PerRow(v) => v.iter().sum::<f64>() / v.len() as f64,
        }
    }
}

/// How `X` is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Design {
    /// `X_it ~ Bernoulli(p_i)` and `Y = X ∘ (M* + E)`.
    BinaryMask { p: Probability },
    /// `X_it ~ Uniform(lo, hi)` and `Y = X ∘ M* + E`.
    GeneralRegressor { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum WeightScheme {
    /// True `β` (or `F`) followed by Gaussian columns, every column scaled
    /// to norm `√N` (or `√T`).
    OracleAugmented,
    /// Polynomials of noisy characteristics `z = β₀ + noise_sd·ξ`. The
    /// weight rank must equal `r·degree` (plus one with a constant).
    Characteristics { noise_sd: f64, include_constant: bool },
    /// Scaled singular vectors of an independent extra sample of
    /// `extra` periods (for `W_β`) and `extra` units (for `W_F`).
    ScaledSingularVectors { extra: usize, gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    pub n: usize,
    pub t: usize,
    /// True rank.
    pub r: usize,
    /// Loading strength: `β = a_N β₀`.
    pub a_n: f64,
    pub sigma: f64,
    pub design: Design,
    /// Weight rank `R`.
    pub weight_rank: usize,
    pub weight_scheme: WeightScheme,
    pub seed: u64,
    /// Keep `β` and `F` fixed at the base seed and redraw only `X` and `E`
    /// across replications.
    #[serde(default)]
    pub fixed_factors: bool,
}

impl DgpConfig {
    /// Binary design with constant `p` and oracle-augmented weights.
    pub fn binary(n: usize, t: usize, r: usize, weight_rank: usize, p: f64, sigma: f64, seed: u64) -> Self {
        Self {
            n,
            t,
            r,
            a_n: 1.0,
            sigma,
            design: Design::BinaryMask { p: Probability::Constant(p) },
            weight_rank,
            weight_scheme: WeightScheme::OracleAugmented,
            seed,
            fixed_factors: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.n < 2 || self.t < 2 {
            return bad(format!("panel must be at least 2x2, got {}x{}", self.n, self.t));
        }
        if self.r == 0 || self.r > self.weight_rank || 4 * self.weight_rank > self.n.min(self.t) {
            return bad(format!(
                "need 1 <= r <= R <= min(N,T)/4, got r={}, R={}, N={}, T={}",
                self.r, self.weight_rank, self.n, self.t
            ));
        }
        if !(self.a_n > 0.0 && self.a_n.is_finite()) {
            return bad(format!("a_N must be positive, got {}", self.a_n));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be non-negative, got {}", self.sigma));
        }
        match &self.design {
            Design::BinaryMask { p } => {
                if let Probability::PerRow(v) = p {
                    if v.len() != self.n {
                        return bad(format!("p has {} entries, expected N = {}", v.len(), self.n));
                    }
                }
                let ok = match p {
                    Probability::Constant(p) => *p > 0.0 && *p <= 1.0,
                    Probability::PerRow(v) => v.iter().all(|&p| p > 0.0 && p <= 1.0),
                };
                if !ok {
                    return bad("observation probabilities must lie in (0, 1]".into());
                }
            }
            Design::GeneralRegressor { lo, hi } => {
                if !(*lo > 0.0 && hi > lo && hi.is_finite()) {
                    return bad(format!("need 0 < lo < hi for the regressor range, got [{lo}, {hi}]"));
                }
            }
        }
        match &self.weight_scheme {
            WeightScheme::OracleAugmented => {}
            WeightScheme::Characteristics { noise_sd, include_constant } => {
                if !(*noise_sd >= 0.0) {
                    return bad(format!("noise_sd must be non-negative, got {noise_sd}"));
                }
                characteristic_degree(self.r, self.weight_rank, *include_constant)?;
            }
            WeightScheme::ScaledSingularVectors { extra, gamma } => {
                if *extra < self.weight_rank {
                    return bad(format!("extra sample size {extra} is below R = {}", self.weight_rank));
                }
                if !(*gamma > 0.0) {
                    return bad(format!("gamma must be positive, got {gamma}"));
                }
            }
        }
        Ok(())
    }

    fn mode(&self) -> PanelMode {
        match self.design {
            Design::BinaryMask { .. } => PanelMode::BinaryMask,
            Design::GeneralRegressor { .. } => PanelMode::GeneralRegressor,
        }
    }
}

fn characteristic_degree(r: usize, big_r: usize, include_constant: bool) -> Result<usize> {
    let body = big_r - usize::from(include_constant);
    if body == 0 || body % r != 0 {
        return Err(Error::InvalidInput(format!(
            "characteristic weights with r = {r} cannot produce R = {big_r} columns{}",
            if include_constant { " with a constant" } else { "" }
        )));
    }
    Ok(body / r)
}

/// One simulated panel with its ground truth.
#[derive(Debug, Clone)]
pub struct SimDraw {
    pub panel: ObservedPanel,
    pub truth: Array2<f64>,
    pub beta: Array2<f64>,
    pub f: Array2<f64>,
    pub warnings: Vec<Warning>,
}

/// Two complementary arms sharing loadings and noise.
#[derive(Debug, Clone)]
pub struct HteDraw {
    pub treated: ObservedPanel,
    pub control: ObservedPanel,
    /// `Γ = β (F⁽¹⁾ − F⁽⁰⁾)'`.
    pub gamma: Array2<f64>,
    pub beta: Array2<f64>,
    pub f0: Array2<f64>,
    pub f1: Array2<f64>,
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn draw_x(design: &Design, n: usize, t: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    match design {
        Design::BinaryMask { p } => {
            let mut x = Array2::zeros((n, t));
            for i in 0..n {
                let b = Bernoulli::new(p.get(i)).expect("probability validated");
                for s in 0..t {
                    x[[i, s]] = if b.sample(rng) { 1.0 } else { 0.0 };
                }
            }
            x
        }
        Design::GeneralRegressor { lo, hi } => {
            let u = Uniform::new(*lo, *hi).expect("range validated");
            Array2::from_shape_fn((n, t), |_| u.sample(rng))
        }
    }
}

fn outcome(design: &Design, x: &Array2<f64>, m: &Array2<f64>, e: &Array2<f64>) -> Array2<f64> {
    match design {
        Design::BinaryMask { .. } => x * &(m + e),
        Design::GeneralRegressor { .. } => x * m + e,
    }
}

fn draw_factors(cfg: &DgpConfig, rng: &mut ChaCha8Rng) -> (Array2<f64>, Array2<f64>) {
    let beta = gaussian(cfg.n, cfg.r, rng) * cfg.a_n;
    let f = gaussian(cfg.t, cfg.r, rng);
    (beta, f)
}

fn incoherence_warning(beta: &Array2<f64>) -> Option<Warning> {
    let n = beta.nrows() as f64;
    let smax = linalg::operator_norm(beta.view()).ok()?;
    let rows = linalg::max_row_norm(beta.view());
    (rows > 5.0 * smax / n.sqrt()).then(|| {
        Warning::new(
            "loadings-coherent",
            format!("max loading row norm {rows:.3} exceeds 5 sigma_max/sqrt(N) = {:.3}", 5.0 * smax / n.sqrt()),
        )
    })
}

/// Draw a panel using `factor_seed` for `β, F` and `noise_seed` for `E, X`.
pub fn generate_with(cfg: &DgpConfig, factor_seed: u64, noise_seed: u64) -> Result<SimDraw> {
    cfg.validate()?;
    let mut frng = ChaCha8Rng::seed_from_u64(factor_seed);
    let (beta, f) = draw_factors(cfg, &mut frng);
    let mut rng = if factor_seed == noise_seed {
        frng
    } else {
        ChaCha8Rng::seed_from_u64(noise_seed)
    };
    let truth = beta.dot(&f.t());
    let e = gaussian(cfg.n, cfg.t, &mut rng) * cfg.sigma;
    let x = draw_x(&cfg.design, cfg.n, cfg.t, &mut rng);
    let y = outcome(&cfg.design, &x, &truth, &e);
    let panel = ObservedPanel::new(y, x, cfg.mode())?;
    let warnings = incoherence_warning(&beta).into_iter().collect();
    Ok(SimDraw { panel, truth, beta, f, warnings })
}

/// Draw `(panel, M*, β, F)` from `cfg.seed`.
pub fn generate(cfg: &DgpConfig) -> Result<SimDraw> {
    generate_with(cfg, cfg.seed, cfg.seed)
}

/// Two-arm panel. `β`, `E` and the assignment `D_it ~ Bernoulli(p_i)` are
/// shared; the treated arm uses `F⁽¹⁾ = F⁽⁰⁾ + effect_size` in its first
/// factor column, so `Γ = effect_size · β_{·1} 1'`.
pub fn generate_hte(cfg: &DgpConfig, effect_size: f64) -> Result<HteDraw> {
    hte_with(cfg, cfg.seed, cfg.seed, effect_size)
}

fn hte_with(cfg: &DgpConfig, factor_seed: u64, noise_seed: u64, effect_size: f64) -> Result<HteDraw> {
    cfg.validate()?;
    if !matches!(cfg.design, Design::BinaryMask { .. }) {
        return Err(Error::InvalidInput("treatment simulations need a binary design".into()));
    }
    if !effect_size.is_finite() {
        return Err(Error::InvalidInput(format!("effect size must be finite, got {effect_size}")));
    }
    let mut frng = ChaCha8Rng::seed_from_u64(factor_seed);
    let (beta, f0) = draw_factors(cfg, &mut frng);
    let mut rng = if factor_seed == noise_seed {
        frng
    } else {
        ChaCha8Rng::seed_from_u64(noise_seed)
    };
    let mut f1 = f0.clone();
    f1.column_mut(0).mapv_inplace(|v| v + effect_size);
    let e = gaussian(cfg.n, cfg.t, &mut rng) * cfg.sigma;
    let d = draw_x(&cfg.design, cfg.n, cfg.t, &mut rng);
    let x0 = d.mapv(|v| 1.0 - v);
    let m1 = beta.dot(&f1.t());
    let m0 = beta.dot(&f0.t());
    let treated = ObservedPanel::new(&d * &(&m1 + &e), d, PanelMode::BinaryMask)?;
    let control = ObservedPanel::new(&x0 * &(&m0 + &e), x0, PanelMode::BinaryMask)?;
    Ok(HteDraw {
        treated,
        control,
        gamma: m1 - m0,
        beta,
        f0,
        f1,
    })
}

fn scale_columns(mut w: Array2<f64>) -> Array2<f64> {
    let target = (w.nrows() as f64).sqrt();
    for mut col in w.axis_iter_mut(Axis(1)) {
        let norm = col.dot(&col).sqrt();
        if norm > 0.0 {
            col.mapv_inplace(|v| v * target / norm);
        }
    }
    w
}

/// `[base, Gaussian columns]` with `total` columns, each scaled to norm √rows.
/// The Gaussian columns come from `rng` in order, so a smaller `total`
/// gives a prefix of a larger one.
fn oracle_side(base: ArrayView2<f64>, total: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    if base.ncols() > total {
        return Err(Error::InvalidInput(format!(
            "oracle weights need R >= {}, got {total}",
            base.ncols()
        )));
    }
    let extra = gaussian(base.nrows(), total - base.ncols(), rng);
    Ok(scale_columns(concatenate![Axis(1), base, extra]))
}

fn weight_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ WEIGHT_STREAM))
}

/// Weights of rank `cfg.weight_rank` for a draw, from the weight stream of
/// `seed`. Oracle-augmented weights of different ranks share their leading
/// columns.
pub fn generate_weights(cfg: &DgpConfig, draw: &SimDraw, seed: u64) -> Result<DiversifiedWeights> {
    cfg.validate()?;
    let mut rng = weight_rng(seed);
    let big_r = cfg.weight_rank;
    match &cfg.weight_scheme {
        WeightScheme::OracleAugmented => {
            let mut rng_f = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ WEIGHT_STREAM ^ GOLDEN));
            DiversifiedWeights::new(
                oracle_side(draw.beta.view(), big_r, &mut rng)?,
                oracle_side(draw.f.view(), big_r, &mut rng_f)?,
                Provenance::UserSupplied,
            )
        }
        WeightScheme::Characteristics { noise_sd, include_constant } => {
            let degree = characteristic_degree(cfg.r, big_r, *include_constant)?;
            let z = &draw.beta / cfg.a_n + gaussian(cfg.n, cfg.r, &mut rng) * *noise_sd;
            let g = &draw.f + &(gaussian(cfg.t, cfg.r, &mut rng) * *noise_sd);
            weights::from_characteristics(z.view(), g.view(), degree, *include_constant)
        }
        WeightScheme::ScaledSingularVectors { extra, gamma } => {
            // extra periods for the unit side
            let f_extra = gaussian(*extra, cfg.r, &mut rng);
            let e = gaussian(cfg.n, *extra, &mut rng) * cfg.sigma;
            let x = draw_x(&cfg.design, cfg.n, *extra, &mut rng);
            let y = outcome(&cfg.design, &x, &draw.beta.dot(&f_extra.t()), &e);
            let wb = weights::from_scaled_singular_vectors(y.view(), x.view(), big_r, *gamma, Side::Beta)?;
            // extra units for the period side
            let b_extra = gaussian(*extra, cfg.r, &mut rng) * cfg.a_n;
            let e = gaussian(*extra, cfg.t, &mut rng) * cfg.sigma;
            let design = match &cfg.design {
                Design::BinaryMask { p } => Design::BinaryMask {
                    p: Probability::Constant(p.mean()),
                },
                other => other.clone(),
            };
            let x = draw_x(&design, *extra, cfg.t, &mut rng);
            let y = outcome(&design, &x, &b_extra.dot(&draw.f.t()), &e);
            let wf = weights::from_scaled_singular_vectors(y.view(), x.view(), big_r, *gamma, Side::F)?;
            DiversifiedWeights::new(wb, wf, Provenance::ScaledSingularVectors)
        }
    }
}

/// Oracle weights for the two-arm design: `W_F` starts with `[F⁽⁰⁾, 1]`,
/// which spans the factors of both arms.
pub fn generate_hte_weights(cfg: &DgpConfig, draw: &HteDraw, seed: u64) -> Result<DiversifiedWeights> {
    let mut rng = weight_rng(seed);
    let mut rng_f = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ WEIGHT_STREAM ^ GOLDEN));
    let ones = Array2::ones((cfg.t, 1));
    let base_f = concatenate![Axis(1), draw.f0, ones];
    DiversifiedWeights::new(
        oracle_side(draw.beta.view(), cfg.weight_rank, &mut rng)?,
        oracle_side(base_f.view(), cfg.weight_rank, &mut rng_f)?,
        Provenance::UserSupplied,
    )
}

/// Outcome of one replication.
#[derive(Debug, Clone, Serialize)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub truth: f64,
    pub estimate: f64,
    pub variance: f64,
    pub z_truth: f64,
    pub z_null: f64,
    pub covered: bool,
    pub ci_width: f64,
}

impl RepRecord {
    fn new(rep: usize, seed: u64, truth: f64, res: &InferenceResult) -> Self {
        let z_truth = if res.std_error > 0.0 {
            (res.estimate - truth) / res.std_error
        } else {
            0.0
        };
        Self {
            rep,
            seed,
            truth,
            estimate: res.estimate,
            variance: res.variance,
            z_truth,
            z_null: res.z_stat,
            covered: res.covers(truth),
            ci_width: res.ci_upper() - res.ci_lower(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FailedRep {
    pub rep: usize,
    pub seed: u64,
    pub error: String,
}

/// Summary of a Monte Carlo experiment. Rates are over successful
/// replications.
#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    pub label: String,
    pub reps: usize,
    pub reps_requested: usize,
    pub failed_reps: usize,
    pub level: f64,
    pub coverage: f64,
    pub mean_bias: f64,
    pub rmse: f64,
    /// Sample variance of `estimate − truth` over the median `V̂`.
    pub variance_ratio: f64,
    pub median_variance: f64,
    pub mean_ci_width: f64,
    /// Share of replications with `z_null > Φ⁻¹(level)`.
    pub rejection_rate_one_sided: f64,
    /// Share of replications with `|z_null| > Φ⁻¹((1 + level) / 2)`.
    pub rejection_rate_two_sided: f64,
    pub records: Vec<RepRecord>,
    pub failures: Vec<FailedRep>,
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0_f64, 0.0_f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

impl CoverageReport {
    /// Aggregate records (in replication order) into a report.
    pub fn from_records(
        label: impl Into<String>,
        level: f64,
        reps_requested: usize,
        records: Vec<RepRecord>,
        failures: Vec<FailedRep>,
    ) -> Result<Self> {
        let n = records.len();
        let nf = n as f64;
        let two = normal_quantile(level)?;
        let one = statrs::distribution::ContinuousCDF::inverse_cdf(&statrs::distribution::Normal::standard(), level);
        let errs: Vec<f64> = records.iter().map(|r| r.estimate - r.truth).collect();
        let mean_bias = compensated_sum(errs.iter().copied()) / nf;
        let rmse = (compensated_sum(errs.iter().map(|e| e * e)) / nf).sqrt();
        let err_var = if n > 1 {
            compensated_sum(errs.iter().map(|e| (e - mean_bias).powi(2))) / (nf - 1.0)
        } else {
            f64::NAN
        };
        let median_variance = median(records.iter().map(|r| r.variance).collect());
        let share = |f: &dyn Fn(&RepRecord) -> bool| records.iter().filter(|r| f(r)).count() as f64 / nf;
        Ok(Self {
            label: label.into(),
            reps: n,
            reps_requested,
            failed_reps: failures.len(),
            level,
            coverage: share(&|r| r.covered),
            mean_bias,
            rmse,
            variance_ratio: err_var / median_variance,
            median_variance,
            mean_ci_width: compensated_sum(records.iter().map(|r| r.ci_width)) / nf,
            rejection_rate_one_sided: share(&|r| r.z_null > one),
            rejection_rate_two_sided: share(&|r| r.z_null.abs() > two),
            records,
            failures,
        })
    }
}

/// One estimator configuration evaluated inside an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub weight_rank: usize,
    pub ablate_b2: bool,
}

/// Shared settings of a Monte Carlo experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub reps: usize,
    pub level: f64,
    pub null_value: f64,
    pub nuclear: NuclearConfig,
    pub force_sigma2_zero: bool,
}

impl ExperimentConfig {
    pub fn new(reps: usize, level: f64) -> Self {
        Self {
            reps,
            level,
            null_value: 0.0,
            nuclear: NuclearConfig::default(),
            force_sigma2_zero: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidInput("need at least one replication".into()));
        }
        normal_quantile(self.level)?;
        Ok(())
    }
}

type RepOutcome = std::result::Result<Vec<RepRecord>, String>;

fn collect(
    labels: &[String],
    exp: &ExperimentConfig,
    seeds: &[u64],
    outcomes: Vec<RepOutcome>,
) -> Result<Vec<CoverageReport>> {
    let mut per_variant: Vec<Vec<RepRecord>> = vec![Vec::new(); labels.len()];
    let mut failures = Vec::new();
    for (rep, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(recs) => {
                for (k, r) in recs.into_iter().enumerate() {
                    per_variant[k].push(r);
                }
            }
            Err(error) => failures.push(FailedRep {
                rep,
                seed: seeds[rep],
                error,
            }),
        }
    }
    labels
        .iter()
        .zip(per_variant)
        .map(|(label, recs)| CoverageReport::from_records(label.clone(), exp.level, exp.reps, recs, failures.clone()))
        .collect()
}

fn rep_seeds(cfg: &DgpConfig, reps: usize) -> Vec<u64> {
    (0..reps).map(|k| rep_seed(cfg.seed, k)).collect()
}

/// Several estimator variants evaluated on the same draws. Each
/// replication draws one panel and builds one initial estimate (with the
/// support check of the largest weight rank); the variants differ only in
/// the weights and in whether `B2` is applied.
pub fn coverage_variants(
    cfg: &DgpConfig,
    group: &GroupSpec,
    exp: &ExperimentConfig,
    variants: &[Variant],
) -> Result<Vec<CoverageReport>> {
    exp.validate()?;
    if variants.is_empty() {
        return Err(Error::InvalidInput("no variants requested".into()));
    }
    let mut cfgs = Vec::with_capacity(variants.len());
    for v in variants {
        let c = DgpConfig {
            weight_rank: v.weight_rank,
            ..cfg.clone()
        };
        c.validate()?;
        cfgs.push(c);
    }
    if group.dims() != (cfg.n, cfg.t) {
        return Err(Error::shape("group vs simulated panel", (cfg.n, cfg.t), group.dims()));
    }
    let max_rank = variants.iter().map(|v| v.weight_rank).max().unwrap_or(1);
    let seeds = rep_seeds(cfg, exp.reps);

    let run_rep = |rep: usize| -> RepOutcome {
        let seed = seeds[rep];
        let factor_seed = if cfg.fixed_factors { cfg.seed } else { seed };
        let draw = generate_with(cfg, factor_seed, seed).map_err(|e| e.to_string())?;
        let truth = group_average(draw.truth.view(), group).map_err(|e| e.to_string())?;
        let hw = compute_heterogeneity(&draw.panel).map_err(|e| e.to_string())?;
        let init = build_init(&draw.panel, &hw, group, &exp.nuclear, max_rank).map_err(|e| e.to_string())?;
        let mut out = Vec::with_capacity(variants.len());
        for (v, vcfg) in variants.iter().zip(&cfgs) {
            let w = generate_weights(vcfg, &draw, factor_seed).map_err(|e| e.to_string())?;
            let pcfg = PipelineConfig {
                nuclear: exp.nuclear.clone(),
                ablate_b2: v.ablate_b2,
                force_sigma2_zero: exp.force_sigma2_zero,
            };
            let fit = run_from_init(&draw.panel, &hw, &w, &init, &pcfg).map_err(|e| e.to_string())?;
            let res = infer(&fit, &draw.panel, &hw, &w, group, exp.level, exp.null_value).map_err(|e| e.to_string())?;
            out.push(RepRecord::new(rep, seed, truth, &res));
        }
        Ok(out)
    };
    let outcomes: Vec<RepOutcome> = (0..exp.reps).into_par_iter().map(run_rep).collect();
    let labels: Vec<String> = variants.iter().map(|v| v.label.clone()).collect();
    collect(&labels, exp, &seeds, outcomes)
}

/// Coverage of the group-average interval for one configuration.
pub fn coverage_experiment(
    cfg: &DgpConfig,
    group: &GroupSpec,
    exp: &ExperimentConfig,
    ablate_b2: bool,
) -> Result<CoverageReport> {
    let variant = Variant {
        label: format!("R={}{}", cfg.weight_rank, if ablate_b2 { ", no B2" } else { "" }),
        weight_rank: cfg.weight_rank,
        ablate_b2,
    };
    Ok(coverage_variants(cfg, group, exp, &[variant])?.remove(0))
}

/// Treatment-effect experiments for several effect sizes on shared draws.
/// The control arm does not depend on the effect size, so it is fitted
/// once per replication.
pub fn hte_experiment(
    cfg: &DgpConfig,
    group: &GroupSpec,
    exp: &ExperimentConfig,
    effect_sizes: &[f64],
) -> Result<Vec<CoverageReport>> {
    exp.validate()?;
    cfg.validate()?;
    if effect_sizes.is_empty() {
        return Err(Error::InvalidInput("no effect sizes requested".into()));
    }
    if group.dims() != (cfg.n, cfg.t) {
        return Err(Error::shape("group vs simulated panel", (cfg.n, cfg.t), group.dims()));
    }
    let seeds = rep_seeds(cfg, exp.reps);
    let pcfg = PipelineConfig {
        nuclear: exp.nuclear.clone(),
        ablate_b2: false,
        force_sigma2_zero: exp.force_sigma2_zero,
    };
    let run_rep = |rep: usize| -> RepOutcome {
        let seed = seeds[rep];
        let factor_seed = if cfg.fixed_factors { cfg.seed } else { seed };
        let err = |e: Error| e.to_string();
        let mut control_fit = None;
        let mut out = Vec::with_capacity(effect_sizes.len());
        for &effect in effect_sizes {
            let draw = hte_with(cfg, factor_seed, seed, effect).map_err(err)?;
            let w = generate_hte_weights(cfg, &draw, factor_seed).map_err(err)?;
            let hw0 = compute_heterogeneity(&draw.control).map_err(err)?;
            if control_fit.is_none() {
                let init0 = build_init(&draw.control, &hw0, group, &exp.nuclear, cfg.weight_rank).map_err(err)?;
                control_fit = Some(run_from_init(&draw.control, &hw0, &w, &init0, &pcfg).map_err(err)?);
            }
            let fit0 = control_fit.as_ref().expect("fitted above");
            let hw1 = compute_heterogeneity(&draw.treated).map_err(err)?;
            let init1 = build_init(&draw.treated, &hw1, group, &exp.nuclear, cfg.weight_rank).map_err(err)?;
            let fit1 = run_from_init(&draw.treated, &hw1, &w, &init1, &pcfg).map_err(err)?;
            let res = hte_infer(
                Arm { fit: &fit1, panel: &draw.treated, hw: &hw1 },
                Arm { fit: fit0, panel: &draw.control, hw: &hw0 },
                &w,
                group,
                exp.level,
                exp.null_value,
            )
            .map_err(err)?;
            let truth = group_average(draw.gamma.view(), group).map_err(err)?;
            out.push(RepRecord::new(rep, seed, truth, &res));
        }
        Ok(out)
    };
    let outcomes: Vec<RepOutcome> = (0..exp.reps).into_par_iter().map(run_rep).collect();
    let labels: Vec<String> = effect_sizes.iter().map(|e| format!("effect={e}")).collect();
    collect(&labels, exp, &seeds, outcomes)
}

/// Per-replication `z` statistics as CSV lines (`rep,seed,z_truth,z_null`).
pub fn z_table_csv(report: &CoverageReport) -> String {
    let mut out = String::from("rep,seed,z_truth,z_null\n");
    for r in &report.records {
        out.push_str(&format!("{},{},{:?},{:?}\n", r.rep, r.seed, r.z_truth, r.z_null));
    }
    out
}

/// Sample mean and variance of a vector.
pub fn mean_var(v: &Array1<f64>) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = compensated_sum(v.iter().copied()) / n;
    let var = compensated_sum(v.iter().map(|x| (x - mean).powi(2))) / (n - 1.0);
    (mean, var)
}
