//! Running methods over drives, scoring them, tuning road variances, and
//! cross-validated evaluation.

mod evaluate;
mod grid;
mod methods;
mod metrics;
mod pipeline;
mod plot;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::roadnet::{PrimalNetwork, RoadDefaults, RoadGraph};
use crate::sim::{generate_drive, generate_network, DriveRecord, ScenarioConfig};

pub use evaluate::{
    evaluate, summarize, train_on, EvaluationConfig, FoldData, MethodSummary, Report, ResultRow, TrainingLog, Tuning,
};
pub use grid::{grid_search, parallel_grid, perpendicular_grid, GridPoint, GridResult};
pub use methods::{parse_methods, run_method, Method, MethodInputs};
pub use plot::cdf_svg;
pub use metrics::{cdf, mean_std, percentile, sorted, ErrorSummary};
pub use pipeline::{
    apply_road, finite_variance, gnss_step, horizontal_errors, oracle_labels, positions, run_kf, run_ls,
    InstantSelector, OracleMode, OracleSelector, PipelineConfig, RoadChoice, RoadSelector, RoadVariances, ViterbiSelector,
};

/// Shape of the reference benchmark: independent regions (folds), each with
/// its own network and drives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub regions: usize,
    pub drives_per_region: usize,
    pub scenario: ScenarioConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            regions: 3,
            drives_per_region: 6,
            scenario: ScenarioConfig::urban(),
        }
    }
}

pub struct Region {
    pub name: String,
    pub network: PrimalNetwork,
    pub graph: RoadGraph,
    pub drives: Vec<DriveRecord>,
}

pub fn network_seed(seed: u64, region: usize) -> u64 {
    seed.wrapping_mul(1000).wrapping_add(region as u64)
}

pub fn drive_seed(seed: u64, region: usize, drive: usize) -> u64 {
    network_seed(seed, region).wrapping_mul(100).wrapping_add(drive as u64)
}

pub fn generate_region(cfg: &BenchmarkConfig, seed: u64, region: usize) -> Result<Region> {
    let name = format!("region{region}");
    let network = generate_network(&cfg.scenario.network, network_seed(seed, region))?;
    let graph = network.build_graph(&RoadDefaults::default())?;
    let drives = (0..cfg.drives_per_region)
        .into_par_iter()
        .map(|d| generate_drive(&graph, &name, &cfg.scenario, drive_seed(seed, region, d)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Region {
        name,
        network,
        graph,
        drives,
    })
}

pub fn generate_benchmark(cfg: &BenchmarkConfig, seed: u64) -> Result<Vec<Region>> {
    (0..cfg.regions).map(|r| generate_region(cfg, seed, r)).collect()
}

