//! Rank-robust inference for group averages of a low-rank coefficient
//! matrix observed through `Y = X ∘ M* + E`.
//!
//! The estimator fits a weighted nuclear-norm problem on the full sample and
//! away from the target group, removes the shrinkage bias, projects onto
//! spaces spanned by user-chosen diversified weights, and removes the
//! second-order bias introduced when the weight rank exceeds the true rank.
//! Confidence intervals follow from a plug-in variance and a normal limit.
//!
//! ```no_run
//! use lrinfer::{group::GroupSpec, inference, panel, pipeline, weights};
//! # fn main() -> lrinfer::error::Result<()> {
//! # let (y, x, wb, wf) = unimplemented!();
//! let panel = panel::ObservedPanel::new(y, x, panel::PanelMode::BinaryMask)?;
//! let hw = panel::compute_heterogeneity(&panel)?;
//! let w = weights::DiversifiedWeights::new(wb, wf, weights::Provenance::UserSupplied)?;
//! let group = GroupSpec::block(vec![0, 1, 2], vec![5, 6], panel.n(), panel.t())?;
//! let fit = pipeline::run_pipeline_with(&panel, &hw, &w, &group, &Default::default())?;
//! let res = inference::infer(&fit, &panel, &hw, &w, &group, 0.95, 0.0)?;
//! println!("{} [{}, {}]", res.estimate, res.ci[0], res.ci[1]);
//! # Ok(())
//! # }
//! ```

pub mod diagnostics;
pub mod error;
pub mod group;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod nuclear;
pub mod panel;
pub mod pipeline;
pub mod sim;
pub mod weights;

pub use error::{Error, Result, Warning};
