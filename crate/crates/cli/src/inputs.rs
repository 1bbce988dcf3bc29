//! Turning command-line arguments into validated library inputs.

use std::path::{Path, PathBuf};

use lrinfer::group::{GroupRequest, GroupSpec};
use lrinfer::io::read_matrix;
use lrinfer::nuclear::{LambdaChoice, NuclearConfig};
use lrinfer::panel::{load_panel, ObservedPanel, PanelMode};
use lrinfer::pipeline::PipelineConfig;
use lrinfer::sim::DgpConfig;
use lrinfer::weights::{from_characteristics, DiversifiedWeights, Provenance};
use serde::{Deserialize, Serialize};

use crate::args::{EstimateArgs, ModeArg, PanelArgs, SolverArgs, TestArgs, WeightArgs};
use crate::error::{CliError, CliResult};

pub fn require<'a, T>(value: &'a Option<T>, field: &str) -> CliResult<&'a T> {
    value.as_ref().ok_or_else(|| CliError::missing(field))
}

pub fn mode(arg: ModeArg) -> PanelMode {
    match arg {
        ModeArg::Binary => PanelMode::BinaryMask,
        ModeArg::General => PanelMode::GeneralRegressor,
    }
}

pub fn panel(args: &PanelArgs) -> CliResult<ObservedPanel> {
    let y = require(&args.y, "y")?;
    Ok(load_panel(y, args.x.as_deref(), mode(args.mode))?)
}

pub fn weights(args: &WeightArgs) -> CliResult<DiversifiedWeights> {
    let csv = (&args.weights_beta, &args.weights_f);
    let chars = (&args.chars_beta, &args.chars_f);
    match (csv, chars) {
        ((Some(wb), Some(wf)), (None, None)) => Ok(DiversifiedWeights::new(
            read_matrix(wb)?,
            read_matrix(wf)?,
            Provenance::UserSupplied,
        )?),
        ((None, None), (Some(zb), Some(zf))) => Ok(from_characteristics(
            read_matrix(zb)?.view(),
            read_matrix(zf)?.view(),
            args.degree,
            args.constant,
        )?),
        ((None, None), (None, None)) => Err(CliError::validation(
            "missing required field `weights`: give --weights-beta/--weights-f or --chars-beta/--chars-f",
        )),
        ((Some(_), None), _) | ((None, Some(_)), _) => Err(CliError::validation(
            "--weights-beta and --weights-f must be given together",
        )),
        (_, (Some(_), None)) | (_, (None, Some(_))) => Err(CliError::validation(
            "--chars-beta and --chars-f must be given together",
        )),
        _ => Err(CliError::validation(
            "give either weight CSVs or characteristics, not both",
        )),
    }
}

pub fn group(text: &Option<String>, n: usize, t: usize) -> CliResult<GroupSpec> {
    let text = require(text, "group")?;
    Ok(GroupRequest::parse(text)?.resolve(n, t)?)
}

pub fn nuclear(args: &SolverArgs) -> CliResult<NuclearConfig> {
    let cfg = NuclearConfig {
        lambda: args.lambda.parse::<LambdaChoice>()?,
        max_iters: args.max_iters,
        tol: args.tol,
        lambda_const: args.lambda_const,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn pipeline(args: &EstimateArgs) -> CliResult<PipelineConfig> {
    Ok(PipelineConfig {
        nuclear: nuclear(&args.solver)?,
        ablate_b2: args.ablate_b2,
        force_sigma2_zero: args.force_sigma0,
    })
}

pub fn level(args: &TestArgs) -> CliResult<f64> {
    if !(args.level > 0.5 && args.level < 1.0) {
        return Err(CliError::validation(format!(
            "field `level` must lie in (0.5, 1), got {}",
            args.level
        )));
    }
    Ok(args.level)
}

/// Everything an estimation command needs, loaded and checked.
pub struct EstimateInputs {
    pub panel: ObservedPanel,
    pub weights: DiversifiedWeights,
    pub group: GroupSpec,
    pub config: PipelineConfig,
}

pub fn estimate(args: &EstimateArgs) -> CliResult<EstimateInputs> {
    require(&args.group, "group")?;
    let panel = panel(&args.panel)?;
    let weights = weights(&args.weights)?;
    let group = group(&args.group, panel.n(), panel.t())?;
    let config = pipeline(args)?;
    Ok(EstimateInputs { panel, weights, group, config })
}

/// A group given either inline (`"block:1-5x1-5"`) or as a JSON object.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroupInput {
    Inline(String),
    Object(GroupRequest),
}

impl GroupInput {
    pub fn resolve(&self, n: usize, t: usize) -> CliResult<GroupSpec> {
        let req = match self {
            GroupInput::Inline(s) => GroupRequest::parse(s)?,
            GroupInput::Object(r) => r.clone(),
        };
        Ok(req.resolve(n, t)?)
    }
}

fn default_level() -> f64 {
    0.95
}

fn default_lambda() -> LambdaChoice {
    LambdaChoice::Auto
}

fn default_lambda_const() -> f64 {
    NuclearConfig::default().lambda_const
}

/// Config file of `simulate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub dgp: DgpConfig,
    pub group: GroupInput,
    pub reps: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub null_value: f64,
    #[serde(default = "default_lambda")]
    pub lambda: LambdaChoice,
    #[serde(default = "default_lambda_const")]
    pub lambda_const: f64,
    /// Also run the variant without the second debiasing step.
    #[serde(default)]
    pub compare_ablation: bool,
    /// Extra weight ranks evaluated on the same draws.
    #[serde(default)]
    pub extra_weight_ranks: Vec<usize>,
    /// Run the two-arm treatment experiment with these effect sizes instead.
    #[serde(default)]
    pub effect_sizes: Option<Vec<f64>>,
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

pub fn config_path(path: &Option<PathBuf>) -> CliResult<&PathBuf> {
    require(path, "config")
}
