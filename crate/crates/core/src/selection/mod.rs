//! Road-segment selection: nearest segment, online Viterbi, and the offline
//! (bidirectional) Viterbi decode used to label training data.
//!
//! The hidden Markov model has a uniform prior, emission
//! `max(1 − (β·J_pos + J_θ)/2, ε)` and a 0/1 transition that allows a move
//! from `r_j` to `r_i` iff `r_i` is within `k` directed hops of `r_j`.
//! Everything is computed in the log domain.

use serde::{Deserialize, Serialize};

use crate::geo::{heading_cost, point_segment_distance, Segment};
use crate::kalman::KfEstimate;
use crate::roadnet::{KHopTable, RoadGraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmissionParams {
    /// 1/m
    pub beta: f64,
    pub epsilon: f64,
    pub k: usize,
    /// Below this horizontal speed (m/s) the heading cost is dropped.
    pub min_heading_speed: f64,
}

impl Default for EmissionParams {
    fn default() -> Self {
        Self {
            beta: 0.01,
            epsilon: 0.01,
            k: 2,
            min_heading_speed: 0.5,
        }
    }
}

/// Heading of the filter velocity, or `None` when the vehicle is too slow
/// for it to mean anything.
pub fn user_heading(est: &KfEstimate, p: &EmissionParams) -> Option<f64> {
    (est.horizontal_speed() >= p.min_heading_speed).then(|| est.heading())
}

/// `(J_pos, J_θ)` of `road` for the current estimate.
pub fn costs(est: &KfEstimate, road: &Segment, p: &EmissionParams) -> (f64, f64) {
    let j_pos = point_segment_distance(&est.position(), road);
    let j_theta = user_heading(est, p).map_or(0.0, |h| heading_cost(h, road.heading));
    (j_pos, j_theta)
}

pub fn emission_from_costs(j_pos: f64, j_theta: f64, p: &EmissionParams) -> f64 {
    (1.0 - (p.beta * j_pos + j_theta) / 2.0).max(p.epsilon)
}

pub fn emission(est: &KfEstimate, road: &Segment, p: &EmissionParams) -> f64 {
    let (j_pos, j_theta) = costs(est, road, p);
    emission_from_costs(j_pos, j_theta, p)
}

/// Nearest candidate by point-to-segment distance, lowest id on ties.
pub fn instant_select(candidates: &[usize], est: &KfEstimate, graph: &RoadGraph) -> Option<usize> {
    let pos = est.position();
    let mut best: Option<(f64, usize)> = None;
    for &id in candidates {
        let d = point_segment_distance(&pos, &graph.segments()[id].geometry);
        let better = match best {
            None => true,
            Some((bd, bid)) => d < bd || (d == bd && id < bid),
        };
        if better {
            best = Some((d, id));
        }
    }
    best.map(|(_, id)| id)
}

/// Index of the largest value, first index on ties. `None` if empty.
fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.map_or(true, |b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Log-belief over the segments of the current field of view.
///
/// `log_probs` is normalized so its maximum is 0; `log_scale` accumulates
/// the subtracted maxima, so `log_scale + log_probs[i]` is the score of the
/// best path ending in `ids[i]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ViterbiBelief {
    ids: Vec<usize>,
    log_probs: Vec<f64>,
    log_scale: f64,
}

impl ViterbiBelief {
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Segment ids, sorted.
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn get(&self, id: usize) -> Option<f64> {
        self.ids.binary_search(&id).ok().map(|k| self.log_probs[k])
    }

    /// Current MAP segment.
    pub fn best(&self) -> Option<usize> {
        argmax(&self.log_probs).map(|k| self.ids[k])
    }

    /// Probabilities `exp(log p)` normalized to sum to one.
    pub fn probabilities(&self) -> Vec<f64> {
        let e: Vec<f64> = self.log_probs.iter().map(|v| v.exp()).collect();
        let total: f64 = e.iter().sum();
        e.into_iter().map(|v| v / total).collect()
    }
}

/// One forward step: new belief plus, for each new candidate, the index of
/// its best predecessor in the previous belief.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub belief: ViterbiBelief,
    pub back: Vec<Option<usize>>,
}

/// HMM over one road graph, with the k-hop reachability precomputed.
#[derive(Debug, Clone)]
pub struct RoadHmm<'g> {
    graph: &'g RoadGraph,
    table: KHopTable,
    params: EmissionParams,
}

impl<'g> RoadHmm<'g> {
    pub fn new(graph: &'g RoadGraph, params: EmissionParams) -> Self {
        Self {
            graph,
            table: graph.k_hop_table(params.k),
            params,
        }
    }

    pub fn graph(&self) -> &'g RoadGraph {
        self.graph
    }

    pub fn params(&self) -> &EmissionParams {
        &self.params
    }

    pub fn table(&self) -> &KHopTable {
        &self.table
    }

    pub fn log_emissions(&self, candidates: &[usize], est: &KfEstimate) -> Vec<f64> {
        candidates
            .iter()
            .map(|&id| emission(est, &self.graph.segments()[id].geometry, &self.params).ln())
            .collect()
    }

    /// Forward recursion with given log-emissions for `candidates` (sorted).
    ///
    /// A candidate that has no allowed predecessor and was not in the
    /// previous belief enters with `log ε` relative to the previous maximum,
    /// pointing back to the previous MAP segment. An empty candidate list
    /// carries the belief over unchanged.
    pub fn step_with(&self, belief: &ViterbiBelief, candidates: &[usize], log_em: &[f64]) -> StepResult {
        debug_assert!(candidates.windows(2).all(|w| w[0] < w[1]));
        if candidates.is_empty() {
            return StepResult {
                belief: belief.clone(),
                back: Vec::new(),
            };
        }
        let n = candidates.len();
        let mut score = vec![f64::NEG_INFINITY; n];
        let mut back = vec![None; n];
        if !belief.is_empty() {
            // push each predecessor's score along its reachable set
            for (j, &from) in belief.ids.iter().enumerate() {
                let bj = belief.log_probs[j];
                if bj == f64::NEG_INFINITY {
                    continue;
                }
                for to in self.table.reachable(from) {
                    if let Ok(i) = candidates.binary_search(to) {
                        if bj > score[i] {
                            score[i] = bj;
                            back[i] = Some(j);
                        }
                    }
                }
            }
            let prev_best = argmax(&belief.log_probs);
            let prev_max = prev_best.map_or(0.0, |b| belief.log_probs[b]);
            for (i, &id) in candidates.iter().enumerate() {
                if back[i].is_none() && belief.get(id).is_none() {
                    score[i] = prev_max + self.params.epsilon.ln();
                    back[i] = prev_best;
                }
            }
        } else {
            score.iter_mut().for_each(|s| *s = 0.0);
        }
        for (s, e) in score.iter_mut().zip(log_em) {
            *s += e;
        }
        let max = score.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut log_scale = belief.log_scale;
        if max == f64::NEG_INFINITY {
            // nothing reachable: restart from a uniform prior
            score.copy_from_slice(log_em);
            back.iter_mut().for_each(|b| *b = None);
        }
        let max = score.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        log_scale += max;
        score.iter_mut().for_each(|s| *s -= max);
        StepResult {
            belief: ViterbiBelief {
                ids: candidates.to_vec(),
                log_probs: score,
                log_scale,
            },
            back,
        }
    }

    /// Online Viterbi step; returns the new belief and the selected segment.
    pub fn step(
        &self,
        belief: &ViterbiBelief,
        candidates: &[usize],
        est: &KfEstimate,
    ) -> (ViterbiBelief, Option<usize>) {
        let log_em = self.log_emissions(candidates, est);
        let next = self.step_with(belief, candidates, &log_em).belief;
        let selected = if candidates.is_empty() { None } else { next.best() };
        (next, selected)
    }

    /// Offline max-product decode of a whole drive.
    pub fn decode_with(&self, epochs: &[(Vec<usize>, Vec<f64>)]) -> Decoded {
        let mut belief = ViterbiBelief::default();
        let mut trellis: Vec<StepResult> = Vec::with_capacity(epochs.len());
        for (cands, log_em) in epochs {
            let step = self.step_with(&belief, cands, log_em);
            belief = step.belief.clone();
            trellis.push(step);
        }
        let mut labels = vec![None; epochs.len()];
        // index into the candidates of the latest non-empty epoch
        let mut cursor = belief.best().and_then(|id| belief.ids.binary_search(&id).ok());
        for t in (0..epochs.len()).rev() {
            if epochs[t].0.is_empty() {
                continue;
            }
            let Some(k) = cursor else { break };
            labels[t] = Some(epochs[t].0[k]);
            cursor = trellis[t].back[k];
        }
        let log_score = if belief.is_empty() {
            0.0
        } else {
            belief.log_scale
        };
        Decoded { labels, log_score }
    }

    /// Offline decode over the field of view of each estimate.
    pub fn decode(&self, estimates: &[KfEstimate], radius: f64) -> Decoded {
        let epochs: Vec<(Vec<usize>, Vec<f64>)> = estimates
            .iter()
            .map(|est| {
                let cands = self.graph.field_of_view(&est.position(), radius);
                let em = self.log_emissions(&cands, est);
                (cands, em)
            })
            .collect();
        self.decode_with(&epochs)
    }
}

/// Result of an offline decode. `labels[t]` is `None` where the field of
/// view was empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub labels: Vec<Option<usize>>,
    /// Log-score of the decoded path.
    pub log_score: f64,
}

/// Offline bidirectional-Viterbi labels for a drive.
pub fn bidirectional_viterbi(
    estimates: &[KfEstimate],
    graph: &RoadGraph,
    p: &EmissionParams,
    radius: f64,
) -> Vec<Option<usize>> {
    RoadHmm::new(graph, *p).decode(estimates, radius).labels
}
