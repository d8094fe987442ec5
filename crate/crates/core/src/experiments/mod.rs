//! Replayable experiment driver: configurations, the per-topic verification
//! suites, the sharpness run, and CSV/JSON outputs.
//!
//! Identical (config, seed) runs produce byte-identical outputs. Suites run
//! sequentially for deterministic logs; all parallelism lives in the
//! underlying modules.

mod output;
mod sharpness;
mod suites;

pub use output::{write_manifest, write_outputs, RunManifest};
pub use sharpness::{run_sharpness, SharpnessOutcome, SharpnessRow};
pub use suites::{
    verify_dyadic, verify_geometry, verify_measure_and_boxes, verify_operators, verify_weights,
};

use thiserror::Error;

use crate::dyadic::{AdjacentFamily, DyadicError, FamilyParams};
use crate::measure::{AlphaMeasure, MeasureError};
use crate::operators::{OperatorError, SamplePool};
use crate::weights::WeightError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Dyadic(#[from] DyadicError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Config(String),
}

/// Everything a run needs, all derived from one seed.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub alpha: f64,
    /// Exponent of the weight suite.
    pub p: f64,
    /// Exponent of the extrapolation suite (must exceed 2).
    pub rdf_p: f64,
    pub eta: f64,
    pub depth: usize,
    pub systems: usize,
    /// Shared sample pool size.
    pub pool: usize,
    pub seed: u64,
    pub deltas: Vec<f64>,
    pub gamma: f64,
    pub r0: f64,
    pub net_candidates: usize,
    /// Radius count of the cap-box search grid.
    pub grid_radii: usize,
    /// Cap count of the coverage test grid.
    pub coverage_caps: usize,
    pub norm_tol: f64,
    pub norm_max_iters: usize,
    /// Truncation depth of the majorant series.
    pub rdf_depth: usize,
    /// Dedicated (smaller) pool for the extrapolation suite.
    pub rdf_pool: usize,
    pub rdf_h_count: usize,
    pub domination_pairs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 3,
            alpha: 0.0,
            p: 2.0,
            rdf_p: 4.0,
            eta: 0.5,
            depth: 6,
            systems: 3,
            pool: 2_000_000,
            seed: 7,
            deltas: vec![0.4, 0.2, 0.1, 0.05],
            gamma: 0.4,
            r0: 1.0,
            net_candidates: 1_000_000,
            grid_radii: 64,
            coverage_caps: 1000,
            norm_tol: 1e-6,
            norm_max_iters: 1000,
            rdf_depth: 6,
            rdf_pool: 200_000,
            rdf_h_count: 20,
            domination_pairs: 10_000,
        }
    }
}

impl ExperimentConfig {
    pub fn family_params(&self) -> FamilyParams {
        FamilyParams {
            n: self.n,
            eta: self.eta,
            depth: self.depth,
            systems: self.systems,
            seed: self.seed,
            net_candidates: self.net_candidates,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.rdf_p <= 2.0 {
            return Err(ExperimentError::Config("rdf_p must exceed 2".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 0.5) {
            return Err(ExperimentError::Config("gamma must lie in (0, 1/2)".into()));
        }
        if self.deltas.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
            return Err(ExperimentError::Config("deltas must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// One assertion of a suite: an observed quantity against its bound.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub observed: f64,
    pub bound: f64,
    pub detail: String,
}

impl CheckResult {
    /// observed <= bound
    pub fn le(name: &str, observed: f64, bound: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: observed <= bound && observed.is_finite(),
            observed,
            bound,
            detail,
        }
    }

    /// observed >= bound
    pub fn ge(name: &str, observed: f64, bound: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: observed >= bound && observed.is_finite(),
            observed,
            bound,
            detail,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub elapsed_s: f64,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn print(&self) {
        for c in &self.checks {
            println!(
                "[{}] {}/{}: observed {:.6e} vs bound {:.6e} {}",
                if c.passed { "PASS" } else { "FAIL" },
                self.suite,
                c.name,
                c.observed,
                c.bound,
                c.detail,
            );
        }
        println!(
            "[{}] suite {} finished in {:.2}s",
            if self.passed() { "PASS" } else { "FAIL" },
            self.suite,
            self.elapsed_s
        );
    }
}

/// A built run: the measure context, the adjacent family, and the shared
/// pool (the extrapolation suite derives its own smaller pool).
pub struct Workspace {
    pub config: ExperimentConfig,
    pub ctx: AlphaMeasure,
    pub family: AdjacentFamily,
    pub pool: SamplePool,
}

impl Workspace {
    pub fn build(config: ExperimentConfig) -> Result<Self, ExperimentError> {
        config.validate()?;
        let ctx = AlphaMeasure::new(config.n, config.alpha)?;
        let family = AdjacentFamily::build(config.family_params())?;
        let pool = SamplePool::build(config.pool, &ctx, &family, config.seed);
        Ok(Self { config, ctx, family, pool })
    }
}
