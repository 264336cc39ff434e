use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{SparseMatrix, Tensor};
use crate::kalman::KfEstimate;
use crate::roadnet::{RoadGraph, RoadType};
use crate::selection::{costs, EmissionParams};

pub const USER_DIM: usize = 6;

/// Number of road feature columns for `k_hops` propagated priors.
pub fn road_dim(k_hops: usize) -> usize {
    ROAD_FIXED + k_hops
}

const ROAD_FIXED: usize = 2 + RoadType::COUNT + 1 + 2 + 1 + 1 + 1 + 1;

// column offsets
const J_POS: usize = 0;
const J_THETA: usize = 1;
const ROAD_TYPE: usize = 2;
const MAX_SPEED: usize = ROAD_TYPE + RoadType::COUNT;
const HEADING: usize = MAX_SPEED + 1;
const ONEWAY: usize = HEADING + 2;
const LENGTH: usize = ONEWAY + 1;
const LANES: usize = LENGTH + 1;
const PRIOR: usize = LANES + 1;

/// Input standardization constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureScales {
    /// m
    pub distance: f64,
    /// m/s
    pub speed: f64,
    /// m²
    pub variance: f64,
    /// m
    pub length: f64,
}

impl Default for FeatureScales {
    fn default() -> Self {
        Self {
            distance: 100.0,
            speed: 30.0,
            variance: 100.0,
            length: 25.0,
        }
    }
}

/// Which feature groups are fed to the network; disabled groups are zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureMask {
    pub distances: bool,
    pub road_type: bool,
    pub max_speed: bool,
    pub road_heading: bool,
    pub oneway: bool,
    pub length: bool,
    pub lanes: bool,
    pub prior: bool,
    pub user_heading: bool,
    pub user_speed: bool,
    pub uncertainty: bool,
}

impl Default for FeatureMask {
    fn default() -> Self {
        Self {
            distances: true,
            road_type: true,
            max_speed: true,
            road_heading: true,
            oneway: true,
            length: true,
            lanes: true,
            prior: true,
            user_heading: true,
            user_speed: true,
            uncertainty: true,
        }
    }
}

/// Where the road-prior features come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorSource {
    /// The network's own probabilities from the previous epoch.
    #[default]
    Model,
    /// The classical online Viterbi belief.
    Viterbi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub k_hops: usize,
    pub scales: FeatureScales,
    pub mask: FeatureMask,
    pub prior_source: PriorSource,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            k_hops: 2,
            scales: FeatureScales::default(),
            mask: FeatureMask::default(),
            prior_source: PriorSource::default(),
        }
    }
}

/// Road probabilities from the previous epoch, keyed by segment id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriorProbs {
    probs: HashMap<usize, f64>,
}

impl PriorProbs {
    pub fn new(ids: &[usize], probs: &[f64]) -> Self {
        debug_assert_eq!(ids.len(), probs.len());
        Self {
            probs: ids.iter().copied().zip(probs.iter().copied()).collect(),
        }
    }

    pub fn get(&self, id: usize) -> f64 {
        self.probs.get(&id).copied().unwrap_or(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// `out[k−1][i]` = max prior over segments that reach `candidates[i]`
    /// within `k` directed hops (the candidate itself included).
    pub fn propagated(&self, graph: &RoadGraph, candidates: &[usize], k_hops: usize) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; candidates.len()]; k_hops];
        if k_hops == 0 || self.probs.is_empty() {
            return out;
        }
        let local: HashMap<usize, usize> = candidates.iter().enumerate().map(|(k, &id)| (id, k)).collect();
        let mut sources: Vec<(usize, f64)> = self.probs.iter().map(|(&id, &p)| (id, p)).filter(|&(_, p)| p > 0.0).collect();
        sources.sort_unstable_by_key(|&(id, _)| id);
        let mut seen: Vec<usize> = Vec::new();
        let mut frontier: Vec<usize> = Vec::new();
        let mut next: Vec<usize> = Vec::new();
        for (src, p) in sources {
            if src >= graph.len() {
                continue;
            }
            seen.clear();
            frontier.clear();
            seen.push(src);
            frontier.push(src);
            for depth in 0..=k_hops {
                for &u in &frontier {
                    if let Some(&i) = local.get(&u) {
                        // reached at `depth`, so inside every k ≥ depth
                        for row in out.iter_mut().skip(depth.max(1) - 1) {
                            row[i] = row[i].max(p);
                        }
                    }
                }
                if depth == k_hops {
                    break;
                }
                next.clear();
                for &u in &frontier {
                    for &v in graph.successors(u) {
                        if !seen.contains(&v) {
                            seen.push(v);
                            next.push(v);
                        }
                    }
                }
                std::mem::swap(&mut frontier, &mut next);
            }
        }
        out
    }
}

/// Network inputs for one epoch of one drive.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochFeatures {
    /// Candidate segment ids, sorted.
    pub candidates: Vec<usize>,
    /// `[1, USER_DIM]`
    pub user: Tensor,
    /// `[N, road_dim]`
    pub roads: Tensor,
    /// Undirected candidate-subgraph adjacency, local indices.
    pub neighbors: Vec<Vec<usize>>,
}

pub fn user_features(est: &KfEstimate, cfg: &FeatureConfig) -> Tensor {
    let s = &cfg.scales;
    let m = &cfg.mask;
    let speed = est.horizontal_speed();
    let v = est.velocity();
    let (sin, cos) = if speed > 1e-9 { (v.y / speed, v.x / speed) } else { (0.0, 0.0) };
    let (sxx, sxy, syy) = est.horizontal_covariance();
    let on = |flag: bool, x: f64| if flag { x } else { 0.0 };
    Tensor::row(&[
        on(m.user_heading, sin),
        on(m.user_heading, cos),
        on(m.user_speed, speed / s.speed),
        on(m.uncertainty, sxx / s.variance),
        on(m.uncertainty, sxy / s.variance),
        on(m.uncertainty, syy / s.variance),
    ])
}

/// User features, road features and candidate adjacency for one epoch.
pub fn build_features(
    est: &KfEstimate,
    candidates: &[usize],
    graph: &RoadGraph,
    prior: &PriorProbs,
    p: &EmissionParams,
    cfg: &FeatureConfig,
) -> EpochFeatures {
    let s = &cfg.scales;
    let m = &cfg.mask;
    let dim = road_dim(cfg.k_hops);
    let hops = prior.propagated(graph, candidates, cfg.k_hops);
    let mut roads = Tensor::zeros(candidates.len(), dim);
    for (i, &id) in candidates.iter().enumerate() {
        let seg = &graph.segments()[id];
        let mut row = vec![0.0; dim];
        if m.distances {
            let (j_pos, j_theta) = costs(est, &seg.geometry, p);
            row[J_POS] = j_pos / s.distance;
            row[J_THETA] = j_theta;
        }
        if m.road_type {
            row[ROAD_TYPE + seg.road_type.index()] = 1.0;
        }
        if m.max_speed {
            row[MAX_SPEED] = seg.max_speed / s.speed;
        }
        if m.road_heading {
            let (sin, cos) = seg.heading_sincos();
            row[HEADING] = sin;
            row[HEADING + 1] = cos;
        }
        if m.oneway && seg.oneway {
            row[ONEWAY] = 1.0;
        }
        if m.length {
            row[LENGTH] = seg.geometry.length / s.length;
        }
        if m.lanes {
            row[LANES] = seg.lanes;
        }
        if m.prior {
            row[PRIOR] = prior.get(id);
            for (k, h) in hops.iter().enumerate() {
                row[PRIOR + 1 + k] = h[i];
            }
        }
        for (c, v) in row.into_iter().enumerate() {
            roads.set(i, c, v);
        }
    }
    EpochFeatures {
        candidates: candidates.to_vec(),
        user: user_features(est, cfg),
        roads,
        neighbors: graph.subgraph_neighbors(candidates),
    }
}

/// `D^−1/2 (A + I) D^−1/2` for a block-diagonal stack of graphs given as
/// local neighbor lists.
pub fn normalized_adjacency(graphs: &[&[Vec<usize>]]) -> SparseMatrix {
    let total: usize = graphs.iter().map(|g| g.len()).sum();
    let mut entries = Vec::with_capacity(total);
    let mut offset = 0;
    for g in graphs {
        let deg: Vec<f64> = g.iter().map(|n| (n.len() + 1) as f64).collect();
        for (i, nbrs) in g.iter().enumerate() {
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(nbrs.len() + 1);
            row.push((offset + i, 1.0 / deg[i]));
            for &j in nbrs {
                row.push((offset + j, 1.0 / (deg[i] * deg[j]).sqrt()));
            }
            row.sort_unstable_by_key(|e| e.0);
            entries.push(row);
        }
        offset += g.len();
    }
    SparseMatrix::new(total, total, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::EnuPoint;
    use crate::kalman::StateVector;
    use crate::roadnet::{RawRoad, RoadDefaults};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain(n: usize) -> RoadGraph {
        let roads: Vec<RawRoad> = (0..n)
            .map(|i| RawRoad {
                a: EnuPoint::horizontal(20.0 * i as f64, 0.0),
                b: EnuPoint::horizontal(20.0 * (i + 1) as f64, 0.0),
                lanes: Some(2),
                max_speed: Some(15.0),
                road_type: "primary".into(),
                oneway: Some(true),
                source: i,
            })
            .collect();
        RoadGraph::build(&roads, &RoadDefaults::default()).unwrap()
    }

    fn est_at(x: f64, y: f64) -> KfEstimate {
        let mut mean = StateVector::zeros();
        mean[0] = x;
        mean[1] = y;
        mean[3] = 10.0;
        KfEstimate {
            mean,
            cov: crate::kalman::StateMatrix::identity() * 4.0,
        }
    }

    #[test]
    fn layout() {
        assert_eq!(road_dim(2), 26);
        let g = chain(4);
        let f = build_features(&est_at(30.0, 3.0), &[0, 1, 2], &g, &PriorProbs::default(), &EmissionParams::default(), &FeatureConfig::default());
        assert_eq!(f.roads.shape(), [3, 26]);
        assert_eq!(f.user.shape(), [1, USER_DIM]);
        let r1 = f.roads.row_slice(1);
        assert!((r1[J_POS] - 0.03).abs() < 1e-12);
        assert_eq!(r1[J_THETA], 0.0);
        assert_eq!(r1[ROAD_TYPE + RoadType::Primary.index()], 1.0);
        assert_eq!(r1[MAX_SPEED], 0.5);
        assert_eq!((r1[HEADING], r1[HEADING + 1]), (0.0, 1.0));
        assert_eq!(r1[ONEWAY], 1.0);
        assert_eq!(r1[LENGTH], 0.8);
        assert_eq!(r1[LANES], 2.0);
        assert_eq!(f.user.data(), &[0.0, 1.0, 10.0 / 30.0, 0.04, 0.0, 0.04]);
        assert_eq!(f.neighbors, vec![vec![1], vec![0, 2], vec![1]]);
    }

    #[test]
    fn first_epoch_priors_are_zero() {
        let g = chain(5);
        let f = build_features(&est_at(30.0, 0.0), &[0, 1, 2, 3], &g, &PriorProbs::default(), &EmissionParams::default(), &FeatureConfig::default());
        for r in 0..4 {
            assert!(f.roads.row_slice(r)[PRIOR..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_selected_prior_spreads_downstream() {
        let g = chain(5);
        let prior = PriorProbs::new(&[1], &[1.0]);
        let f = build_features(&est_at(30.0, 0.0), &[0, 1, 2, 3, 4], &g, &prior, &EmissionParams::default(), &FeatureConfig::default());
        let col = |c: usize| (0..5).map(|r| f.roads.get(r, c)).collect::<Vec<_>>();
        assert_eq!(col(PRIOR), vec![0.0, 1.0, 0.0, 0.0, 0.0]);
        // oneway chain: only downstream segments are reachable
        assert_eq!(col(PRIOR + 1), vec![0.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(col(PRIOR + 2), vec![0.0, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn propagated_priors_match_bfs_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..20 {
            // random lattice with random oneways
            let mut roads = Vec::new();
            let n = 5;
            for i in 0..n {
                for j in 0..n {
                    for (di, dj) in [(1, 0), (0, 1)] {
                        if i + di < n && j + dj < n && rng.gen_bool(0.8) {
                            let (mut a, mut b) = ((i, j), (i + di, j + dj));
                            if rng.gen_bool(0.5) {
                                std::mem::swap(&mut a, &mut b);
                            }
                            roads.push(RawRoad {
                                a: EnuPoint::horizontal(20.0 * a.0 as f64, 20.0 * a.1 as f64),
                                b: EnuPoint::horizontal(20.0 * b.0 as f64, 20.0 * b.1 as f64),
                                lanes: None,
                                max_speed: None,
                                road_type: "residential".into(),
                                oneway: Some(rng.gen_bool(0.4)),
                                source: roads.len(),
                            });
                        }
                    }
                }
            }
            let g = RoadGraph::build(&roads, &RoadDefaults::default()).unwrap();
            let prev: Vec<usize> = (0..g.len()).filter(|_| rng.gen_bool(0.3)).collect();
            let probs: Vec<f64> = prev.iter().map(|_| rng.gen::<f64>()).collect();
            let prior = PriorProbs::new(&prev, &probs);
            let cands: Vec<usize> = (0..g.len()).filter(|_| rng.gen_bool(0.6)).collect();
            let k_hops = 1 + trial % 3;
            let got = prior.propagated(&g, &cands, k_hops);
            for k in 1..=k_hops {
                for (i, &c) in cands.iter().enumerate() {
                    let expected = prev
                        .iter()
                        .zip(&probs)
                        .filter(|(&j, _)| g.k_hop(j, k).unwrap().contains(&c))
                        .map(|(_, &p)| p)
                        .fold(0.0, f64::max);
                    assert_eq!(got[k - 1][i], expected, "trial {trial} k {k} cand {c}");
                }
            }
        }
    }

    #[test]
    fn mask_zeroes_groups() {
        let g = chain(3);
        let cfg = FeatureConfig {
            mask: FeatureMask {
                road_type: false,
                uncertainty: false,
                ..FeatureMask::default()
            },
            ..FeatureConfig::default()
        };
        let f = build_features(&est_at(10.0, 1.0), &[0, 1], &g, &PriorProbs::default(), &EmissionParams::default(), &cfg);
        for r in 0..2 {
            assert!(f.roads.row_slice(r)[ROAD_TYPE..MAX_SPEED].iter().all(|&v| v == 0.0));
        }
        assert_eq!(&f.user.data()[3..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn normalized_adjacency_blocks() {
        let a: Vec<Vec<usize>> = vec![vec![1], vec![0]];
        let b: Vec<Vec<usize>> = vec![vec![]];
        let m = normalized_adjacency(&[&a, &b]).to_dense();
        let h = 0.5;
        assert_eq!(m.data(), &[h, h, 0.0, h, h, 0.0, 0.0, 0.0, 1.0]);
    }
}
