use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::EnuPoint;
use crate::kalman::{
    build_road_observation, gnss_update, initialize, least_squares_fix_from, predict, road_update, KfEstimate,
    ProcessNoise, INFINITE_VARIANCE,
};
use crate::roadnet::{RoadGraph, FOV_CAP, FOV_RADIUS};
use crate::selection::{bidirectional_viterbi, instant_select, EmissionParams, RoadHmm, ViterbiBelief};
use crate::sim::DriveRecord;

/// Road-observation variances `(σ∥², σ⊥²)` in m².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadVariances {
    pub parallel: f64,
    pub perpendicular: f64,
}

impl RoadVariances {
    pub const ZERO: RoadVariances = RoadVariances {
        parallel: 0.0,
        perpendicular: 0.0,
    };

    pub fn new(parallel: f64, perpendicular: f64) -> Self {
        Self { parallel, perpendicular }
    }
}

/// A road chosen for one epoch and how much to trust it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadChoice {
    pub segment: usize,
    pub variances: RoadVariances,
}

/// Picks the road used in the road update, epoch by epoch.
pub trait RoadSelector {
    /// Called with the post-GNSS estimate at epoch `t` and the field of
    /// view around it (sorted by id, possibly empty).
    fn select(&mut self, t: usize, est: &KfEstimate, candidates: &[usize]) -> Result<Option<RoadChoice>>;
}

pub struct InstantSelector<'g> {
    pub graph: &'g RoadGraph,
    pub variances: RoadVariances,
}

impl RoadSelector for InstantSelector<'_> {
    fn select(&mut self, _t: usize, est: &KfEstimate, candidates: &[usize]) -> Result<Option<RoadChoice>> {
        Ok(instant_select(candidates, est, self.graph).map(|segment| RoadChoice {
            segment,
            variances: self.variances,
        }))
    }
}

pub struct ViterbiSelector<'h, 'g> {
    hmm: &'h RoadHmm<'g>,
    belief: ViterbiBelief,
    variances: RoadVariances,
}

impl<'h, 'g> ViterbiSelector<'h, 'g> {
    pub fn new(hmm: &'h RoadHmm<'g>, variances: RoadVariances) -> Self {
        Self {
            hmm,
            belief: ViterbiBelief::default(),
            variances,
        }
    }
}

impl RoadSelector for ViterbiSelector<'_, '_> {
    fn select(&mut self, _t: usize, est: &KfEstimate, candidates: &[usize]) -> Result<Option<RoadChoice>> {
        let (belief, selected) = self.hmm.step(&self.belief, candidates, est);
        self.belief = belief;
        Ok(selected.map(|segment| RoadChoice {
            segment,
            variances: self.variances,
        }))
    }
}

/// Replays stored labels with zero road variance.
pub struct OracleSelector<'a> {
    pub labels: &'a [Option<usize>],
}

impl RoadSelector for OracleSelector<'_> {
    fn select(&mut self, t: usize, _est: &KfEstimate, _candidates: &[usize]) -> Result<Option<RoadChoice>> {
        let label = self
            .labels
            .get(t)
            .ok_or_else(|| Error::Invalid(format!("no oracle label for epoch {t}")))?;
        Ok(label.map(|segment| RoadChoice {
            segment,
            variances: RoadVariances::ZERO,
        }))
    }
}

/// Which filter trajectory the offline labeler decodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    /// The GNSS-only filter.
    GnssOnly,
    /// The filter with online Viterbi road updates at zero variance. Its
    /// trajectory stays near the roads in urban drives, which the
    /// GNSS-only one does not.
    #[default]
    Feedback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub process_noise: ProcessNoise,
    pub fov_radius: f64,
    pub emission: EmissionParams,
    pub oracle: OracleMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            process_noise: ProcessNoise::default(),
            fov_radius: FOV_RADIUS,
            emission: EmissionParams::default(),
            oracle: OracleMode::default(),
        }
    }
}

/// Clamps the infinite-variance sentinel and beyond.
pub fn finite_variance(v: f64) -> f64 {
    if v.is_finite() {
        v.min(INFINITE_VARIANCE)
    } else {
        INFINITE_VARIANCE
    }
}

/// Applies a road choice to `est`. A singular innovation leaves the
/// estimate unchanged.
pub fn apply_road(est: &KfEstimate, graph: &RoadGraph, choice: &RoadChoice) -> Result<KfEstimate> {
    let road = &graph.segment(choice.segment)?.geometry;
    let obs = build_road_observation(
        est,
        road,
        finite_variance(choice.variances.parallel),
        finite_variance(choice.variances.perpendicular),
    );
    Ok(road_update(est, &obs).unwrap_or_else(|_| est.clone()))
}

/// Predict and GNSS update for epoch `t` (initialization at `t = 0`).
pub fn gnss_step(prev: Option<(&KfEstimate, f64)>, drive: &DriveRecord, t: usize, q: &ProcessNoise) -> Result<KfEstimate> {
    let epoch = &drive.epochs[t].gnss;
    match prev {
        None => Ok(initialize(epoch)?),
        Some((est, time)) => {
            let prior = predict(est, epoch.time - time, q)?;
            Ok(gnss_update(&prior, epoch))
        }
    }
}

/// Runs the filter over a drive, with road updates when a selector is given.
/// Returns the posterior of every epoch.
pub fn run_kf(
    drive: &DriveRecord,
    graph: &RoadGraph,
    mut selector: Option<&mut dyn RoadSelector>,
    cfg: &PipelineConfig,
) -> Result<Vec<KfEstimate>> {
    let mut out: Vec<KfEstimate> = Vec::with_capacity(drive.epochs.len());
    for t in 0..drive.epochs.len() {
        let prev = out.last().map(|e| (e, drive.epochs[t - 1].time()));
        let mut est = gnss_step(prev, drive, t, &cfg.process_noise)?;
        if let Some(sel) = selector.as_deref_mut() {
            let cands = graph.field_of_view_capped(&est.position(), cfg.fov_radius, FOV_CAP);
            if let Some(choice) = sel.select(t, &est, &cands)? {
                est = apply_road(&est, graph, &choice)?;
            }
        }
        out.push(est);
    }
    Ok(out)
}

/// Epoch-by-epoch least-squares fixes, each warm-started from the previous.
pub fn run_ls(drive: &DriveRecord) -> Result<Vec<EnuPoint>> {
    let mut out = Vec::with_capacity(drive.epochs.len());
    let mut start = (EnuPoint::default(), 0.0);
    for e in &drive.epochs {
        let fix = least_squares_fix_from(&e.gnss, start.0, start.1)?;
        start = (fix.position, fix.clock_bias);
        out.push(fix.position);
    }
    Ok(out)
}

/// Offline labels: bidirectional Viterbi over a whole filter trajectory.
pub fn oracle_labels(drive: &DriveRecord, graph: &RoadGraph, cfg: &PipelineConfig) -> Result<Vec<Option<usize>>> {
    let kf = match cfg.oracle {
        OracleMode::GnssOnly => run_kf(drive, graph, None, cfg)?,
        OracleMode::Feedback => {
            let hmm = RoadHmm::new(graph, cfg.emission);
            let mut sel = ViterbiSelector::new(&hmm, RoadVariances::ZERO);
            run_kf(drive, graph, Some(&mut sel), cfg)?
        }
    };
    Ok(bidirectional_viterbi(&kf, graph, &cfg.emission, cfg.fov_radius))
}

/// Planar distance of each estimate to the truth.
pub fn horizontal_errors(drive: &DriveRecord, positions: &[EnuPoint]) -> Vec<f64> {
    drive
        .epochs
        .iter()
        .zip(positions)
        .map(|(e, p)| e.truth.position.distance_2d(p))
        .collect()
}

pub fn positions(estimates: &[KfEstimate]) -> Vec<EnuPoint> {
    estimates.iter().map(KfEstimate::position).collect()
}
