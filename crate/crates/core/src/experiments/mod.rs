//! Reproduction of the 1D porous-medium, 1D p-Laplace and 2D porous-medium
//! studies: presets, pipeline, metrics and CSV artifacts.

pub mod config;
pub mod run;

use std::path::Path;

pub use config::{Case, CaseConfig, Geometry};
pub use run::{
    build_dataset, coarse_error, fine_oracle, interpolation_error, run_case, run_scenario, ErrorReport, FineOracle,
    ScenarioReport, ScenarioRun, ITERATION_ERROR_LEVEL,
};
pub use crate::substructure::error_l2;

use crate::error::Result;
use crate::surrogate::train;

/// `reproduce <case>`: the preset with `seed`, written to `out`.
pub fn reproduce(case: Case, seed: u64, out: &Path) -> Result<ErrorReport> {
    let mut cfg = CaseConfig::preset(case);
    cfg.seed = seed;
    run_case(&cfg, None, Some(out))
}

/// One point of an interpolation-error study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyPoint {
    pub ns: usize,
    pub n_samples: usize,
    pub interpolation_error: f64,
    /// Dataset generation plus training plus evaluation.
    pub seconds: f64,
}

/// Trains at every `ns` in `per_axis` and measures the interpolation error
/// on the 20×20 evaluation grid (1D cases).
pub fn interpolation_study(cfg: &CaseConfig, per_axis: &[usize]) -> Result<Vec<StudyPoint>> {
    let geo = cfg.geometry()?;
    per_axis
        .iter()
        .map(|&ns| {
            let cfg = CaseConfig { ns, ..cfg.clone() };
            let clock = std::time::Instant::now();
            let dataset = build_dataset(&cfg, &geo)?;
            let (model, _) = train(&dataset, &cfg.train_config())?;
            let (e, _, _) = interpolation_error(&cfg, &geo, &model, 20)?;
            Ok(StudyPoint { ns, n_samples: dataset.len(), interpolation_error: e, seconds: clock.elapsed().as_secs_f64() })
        })
        .collect()
}
