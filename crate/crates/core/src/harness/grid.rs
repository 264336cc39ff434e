use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::methods::{run_method, Method, MethodInputs};
use super::metrics::ErrorSummary;
use super::pipeline::{horizontal_errors, PipelineConfig, RoadVariances};
use crate::error::{Error, Result};
use crate::kalman::INFINITE_VARIANCE;
use crate::roadnet::RoadGraph;
use crate::sim::DriveRecord;

/// Candidate σ⊥² values (m²).
pub fn perpendicular_grid() -> Vec<f64> {
    (0..=10).map(f64::from).collect()
}

/// Candidate σ∥² values (m²); the last stands in for an infinite variance.
pub fn parallel_grid() -> Vec<f64> {
    let mut v: Vec<f64> = (0..=10).map(f64::from).collect();
    v.extend((1..=10).map(|i| 100.0 * f64::from(i)));
    v.push(INFINITE_VARIANCE);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub variances: RoadVariances,
    pub he95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: GridPoint,
    /// Every evaluated combination, σ⊥² major.
    pub points: Vec<GridPoint>,
}

/// Exhaustive search of the road variances of a classical selector, scored
/// by the pooled HE@95 over `drives`. Ties go to the smaller σ⊥², then the
/// smaller σ∥².
pub fn grid_search(method: Method, drives: &[(&RoadGraph, &DriveRecord)], cfg: &PipelineConfig) -> Result<GridResult> {
    if !method.is_tuned() {
        return Err(Error::Config(format!("{method} has no road variances to tune")));
    }
    if drives.is_empty() {
        return Err(Error::Invalid("grid search needs training drives".into()));
    }
    let combos: Vec<RoadVariances> = perpendicular_grid()
        .into_iter()
        .flat_map(|perp| parallel_grid().into_iter().map(move |par| RoadVariances::new(par, perp)))
        .collect();
    let points = combos
        .par_iter()
        .map(|&variances| {
            let inputs = MethodInputs {
                variances: Some(variances),
                ..MethodInputs::default()
            };
            let mut errors = Vec::new();
            for (graph, drive) in drives {
                let pos = run_method(method, drive, graph, &inputs, cfg)?;
                errors.extend(horizontal_errors(drive, &pos));
            }
            Ok(GridPoint {
                variances,
                he95: ErrorSummary::from_errors(&errors).he95,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    // combos are ordered by σ⊥² then σ∥², so the first minimum wins ties
    let best = points
        .iter()
        .copied()
        .reduce(|best, p| if p.he95 < best.he95 { p } else { best })
        .expect("grid is not empty");
    Ok(GridResult { best, points })
}
