use std::fs;
use std::path::Path;

use lrinfer::diagnostics::{diagnose, DiagnosticsReport};
use lrinfer::group::GroupSpec;
use lrinfer::inference::{check_complementary, hte_infer, infer, Arm, InferenceResult};
use lrinfer::io::{read_matrix, write_masked, write_matrix};
use lrinfer::nuclear::NuclearConfig;
use lrinfer::panel::{compute_heterogeneity, load_panel, ObservedPanel, PanelMode};
use lrinfer::pipeline::{run_pipeline_with, FitResult, FitSummary, PipelineConfig};
use lrinfer::sim::{
    coverage_variants, generate, generate_weights, hte_experiment, CoverageReport, DgpConfig, ExperimentConfig,
    Variant,
};
use lrinfer::Warning;
use serde::Serialize;

use crate::args::{DiagnoseArgs, FitArgs, GenerateArgs, HteArgs, InferArgs, SimulateArgs, TestArgs};
use crate::error::{CliError, CliResult};
use crate::inputs::{self, SimulateConfig};

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub command: &'static str,
    pub fit: FitSummary,
    pub group: GroupSpec,
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Serialize)]
pub struct InferReport {
    pub command: &'static str,
    pub inference: InferenceResult,
    pub alternative: &'static str,
    pub p_value: f64,
    pub fit: FitSummary,
    pub diagnostics: DiagnosticsReport,
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Serialize)]
pub struct HteReport {
    pub command: &'static str,
    pub inference: InferenceResult,
    pub alternative: &'static str,
    pub p_value: f64,
    pub treated: FitSummary,
    pub control: FitSummary,
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Serialize)]
pub struct SimulateReport {
    pub command: &'static str,
    pub config: SimulateConfig,
    pub reports: Vec<CoverageReport>,
}

#[derive(Debug, Serialize)]
pub struct DiagnoseReport {
    pub command: &'static str,
    pub diagnostics: DiagnosticsReport,
    pub fit: Option<FitSummary>,
}

#[derive(Debug, Serialize)]
pub struct GenerateReport {
    pub command: &'static str,
    pub config: DgpConfig,
    pub files: Vec<String>,
    pub warnings: Vec<Warning>,
}

fn p_value(res: &InferenceResult, test: &TestArgs) -> (&'static str, f64) {
    if test.one_sided {
        ("greater", res.p_one_sided)
    } else {
        ("two-sided", res.p_two_sided)
    }
}

struct Fitted {
    panel: ObservedPanel,
    hw: lrinfer::panel::HeterogeneityWeights,
    weights: lrinfer::weights::DiversifiedWeights,
    group: GroupSpec,
    fit: FitResult,
}

fn run_estimator(args: &crate::args::EstimateArgs) -> CliResult<Fitted> {
    let inputs::EstimateInputs { panel, weights, group, config } = inputs::estimate(args)?;
    let hw = compute_heterogeneity(&panel)?;
    let fit = run_pipeline_with(&panel, &hw, &weights, &group, &config)?;
    Ok(Fitted { panel, hw, weights, group, fit })
}

pub fn fit(args: &FitArgs) -> CliResult<FitReport> {
    let f = run_estimator(&args.estimate)?;
    if let Some(path) = &args.m_hat_out {
        write_matrix(path, f.fit.m_hat.view())?;
    }
    Ok(FitReport {
        command: "fit",
        fit: f.fit.summary()?,
        group: f.group,
        warnings: f.fit.warnings,
    })
}

pub fn infer_cmd(args: &InferArgs) -> CliResult<InferReport> {
    let level = inputs::level(&args.test)?;
    let f = run_estimator(&args.estimate)?;
    let inference = infer(&f.fit, &f.panel, &f.hw, &f.weights, &f.group, level, args.test.null_value)?;
    let diagnostics = diagnose(&f.panel, &f.weights, &f.group, Some(&f.fit))?;
    let (alternative, p_value) = p_value(&inference, &args.test);
    Ok(InferReport {
        command: "infer",
        alternative,
        p_value,
        inference,
        fit: f.fit.summary()?,
        diagnostics,
        warnings: f.fit.warnings,
    })
}

fn binary_indicator(d: &ndarray::Array2<f64>, path: &Path) -> CliResult<()> {
    if let Some(((i, j), v)) = d.indexed_iter().find(|(_, &v)| v != 0.0 && v != 1.0) {
        return Err(CliError::validation(format!(
            "{}: treatment indicator must be 0 or 1, found {v} at ({}, {})",
            path.display(),
            i + 1,
            j + 1
        )));
    }
    Ok(())
}

fn hte_arms(args: &HteArgs) -> CliResult<(ObservedPanel, ObservedPanel)> {
    let single = args.y.is_some() || args.treatment.is_some();
    let split = [&args.y1, &args.x1, &args.y0, &args.x0].iter().any(|p| p.is_some());
    match (single, split) {
        (true, true) => Err(CliError::validation(
            "give either --y with --treatment or the per-arm files, not both",
        )),
        (true, false) => {
            let y_path = inputs::require(&args.y, "y")?;
            let d_path = inputs::require(&args.treatment, "treatment")?;
            let y = read_matrix(y_path)?;
            let d = read_matrix(d_path)?;
            if y.dim() != d.dim() {
                return Err(CliError::validation(format!(
                    "outcome is {}x{} but treatment is {}x{}",
                    y.nrows(),
                    y.ncols(),
                    d.nrows(),
                    d.ncols()
                )));
            }
            binary_indicator(&d, d_path)?;
            let c = d.mapv(|v| 1.0 - v);
            let treated = ObservedPanel::new(&y * &d, d, PanelMode::BinaryMask)?;
            let control = ObservedPanel::new(&y * &c, c, PanelMode::BinaryMask)?;
            Ok((treated, control))
        }
        (false, _) => {
            let y1 = inputs::require(&args.y1, "y1")?;
            let y0 = inputs::require(&args.y0, "y0")?;
            let treated = load_panel(y1, args.x1.as_deref(), PanelMode::BinaryMask)?;
            let control = load_panel(y0, args.x0.as_deref(), PanelMode::BinaryMask)?;
            Ok((treated, control))
        }
    }
}

pub fn hte(args: &HteArgs) -> CliResult<HteReport> {
    let level = inputs::level(&args.test)?;
    inputs::require(&args.group, "group")?;
    let (treated, control) = hte_arms(args)?;
    check_complementary(treated.x().view(), control.x().view())?;
    let weights = inputs::weights(&args.weights)?;
    let group = inputs::group(&args.group, treated.n(), treated.t())?;
    let config = PipelineConfig {
        nuclear: inputs::nuclear(&args.solver)?,
        ablate_b2: args.ablate_b2,
        force_sigma2_zero: args.force_sigma0,
    };
    let hw1 = compute_heterogeneity(&treated)?;
    let hw0 = compute_heterogeneity(&control)?;
    let fit1 = run_pipeline_with(&treated, &hw1, &weights, &group, &config)?;
    let fit0 = run_pipeline_with(&control, &hw0, &weights, &group, &config)?;
    let inference = hte_infer(
        Arm { fit: &fit1, panel: &treated, hw: &hw1 },
        Arm { fit: &fit0, panel: &control, hw: &hw0 },
        &weights,
        &group,
        level,
        args.test.null_value,
    )?;
    let (alternative, p_value) = p_value(&inference, &args.test);
    let mut warnings = fit1.warnings.clone();
    warnings.extend(fit0.warnings.iter().cloned());
    Ok(HteReport {
        command: "hte",
        alternative,
        p_value,
        inference,
        treated: fit1.summary()?,
        control: fit0.summary()?,
        warnings,
    })
}

pub fn simulate(args: &SimulateArgs) -> CliResult<(SimulateReport, Option<String>)> {
    let mut config: SimulateConfig = inputs::read_json(inputs::config_path(&args.config)?)?;
    if let Some(seed) = args.seed {
        config.dgp.seed = seed;
    }
    if let Some(reps) = args.reps {
        config.reps = reps;
    }
    config.dgp.validate()?;
    let group = config.group.resolve(config.dgp.n, config.dgp.t)?;
    let nuclear = NuclearConfig {
        lambda: config.lambda,
        lambda_const: config.lambda_const,
        ..NuclearConfig::default()
    };
    nuclear.validate()?;
    let exp = ExperimentConfig {
        null_value: config.null_value,
        nuclear,
        ..ExperimentConfig::new(config.reps, config.level)
    };
    let reports = match &config.effect_sizes {
        Some(effects) => hte_experiment(&config.dgp, &group, &exp, effects)?,
        None => {
            let base = config.dgp.weight_rank;
            let mut variants = vec![Variant { label: format!("R={base}"), weight_rank: base, ablate_b2: false }];
            if config.compare_ablation {
                variants.push(Variant { label: format!("R={base} no-B2"), weight_rank: base, ablate_b2: true });
            }
            for &r in &config.extra_weight_ranks {
                variants.push(Variant { label: format!("R={r}"), weight_rank: r, ablate_b2: false });
            }
            coverage_variants(&config.dgp, &group, &exp, &variants)?
        }
    };
    let z_csv = args.z_csv.as_ref().map(|_| z_table(&reports));
    Ok((SimulateReport { command: "simulate", config, reports }, z_csv))
}

/// `label,rep,seed,z_truth,z_null`, one row per successful replication.
fn z_table(reports: &[CoverageReport]) -> String {
    let mut out = String::from("label,rep,seed,z_truth,z_null\n");
    for report in reports {
        for r in &report.records {
            out.push_str(&format!("{},{},{},{:?},{:?}\n", report.label, r.rep, r.seed, r.z_truth, r.z_null));
        }
    }
    out
}

pub fn diagnose_cmd(args: &DiagnoseArgs) -> CliResult<DiagnoseReport> {
    if args.no_fit {
        let inputs::EstimateInputs { panel, weights, group, .. } = inputs::estimate(&args.estimate)?;
        let diagnostics = diagnose(&panel, &weights, &group, None)?;
        return Ok(DiagnoseReport { command: "diagnose", diagnostics, fit: None });
    }
    let f = run_estimator(&args.estimate)?;
    let diagnostics = diagnose(&f.panel, &f.weights, &f.group, Some(&f.fit))?;
    Ok(DiagnoseReport { command: "diagnose", diagnostics, fit: Some(f.fit.summary()?) })
}

pub fn generate_cmd(args: &GenerateArgs) -> CliResult<GenerateReport> {
    let mut config: DgpConfig = inputs::read_json(inputs::config_path(&args.config)?)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let dir = inputs::require(&args.out_dir, "out_dir")?;
    fs::create_dir_all(dir).map_err(|e| CliError::validation(format!("cannot create {}: {e}", dir.display())))?;
    let draw = generate(&config)?;
    let w = generate_weights(&config, &draw, config.seed)?;
    let mut files = Vec::new();
    let mut put = |name: &str| {
        files.push(name.to_string());
        dir.join(name)
    };
    match draw.panel.mode() {
        PanelMode::BinaryMask => write_masked(&put("y.csv"), draw.panel.y().view(), draw.panel.x().view())?,
        PanelMode::GeneralRegressor => {
            write_matrix(&put("y.csv"), draw.panel.y().view())?;
            write_matrix(&put("x.csv"), draw.panel.x().view())?;
        }
    }
    write_matrix(&put("truth.csv"), draw.truth.view())?;
    write_matrix(&put("weights_beta.csv"), w.w_beta().view())?;
    write_matrix(&put("weights_f.csv"), w.w_f().view())?;
    Ok(GenerateReport { command: "generate", config, files, warnings: draw.warnings })
}
