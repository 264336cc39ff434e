use super::features::{build_features, PriorProbs, PriorSource};
use super::model::{HiddenState, Model};
use crate::error::Result;
use crate::harness::{RoadChoice, RoadSelector, RoadVariances};
use crate::kalman::KfEstimate;
use crate::roadnet::RoadGraph;
use crate::selection::{EmissionParams, RoadHmm, ViterbiBelief};

/// Online road selection with a trained network. The road variances come
/// from the network unless `variances` overrides them.
pub struct TgnnSelector<'m, 'g> {
    model: &'m Model,
    graph: &'g RoadGraph,
    emission: EmissionParams,
    hmm: Option<RoadHmm<'g>>,
    belief: ViterbiBelief,
    prior: PriorProbs,
    hidden: HiddenState,
    pub variances: Option<RoadVariances>,
}

impl<'m, 'g> TgnnSelector<'m, 'g> {
    pub fn new(model: &'m Model, graph: &'g RoadGraph, emission: EmissionParams) -> Self {
        Self {
            model,
            graph,
            emission,
            hmm: (model.config().features.prior_source == PriorSource::Viterbi).then(|| RoadHmm::new(graph, emission)),
            belief: ViterbiBelief::default(),
            prior: PriorProbs::default(),
            hidden: HiddenState::default(),
            variances: None,
        }
    }

    pub fn with_variances(mut self, variances: RoadVariances) -> Self {
        self.variances = Some(variances);
        self
    }
}

impl RoadSelector for TgnnSelector<'_, '_> {
    fn select(&mut self, _t: usize, est: &KfEstimate, candidates: &[usize]) -> Result<Option<RoadChoice>> {
        if let Some(hmm) = &self.hmm {
            self.prior = PriorProbs::new(self.belief.ids(), &self.belief.probabilities());
            self.belief = hmm.step(&self.belief, candidates, est).0;
        }
        let features = build_features(est, candidates, self.graph, &self.prior, &self.emission, &self.model.config().features);
        let (probs, sigma) = self.model.infer(&features, &mut self.hidden)?;
        if self.hmm.is_none() {
            self.prior = PriorProbs::new(candidates, &probs);
        }
        let best = probs
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, &p)| match best {
                Some((_, b)) if b >= p => best,
                _ => Some((i, p)),
            });
        Ok(best.map(|(i, _)| RoadChoice {
            segment: candidates[i],
            variances: self.variances.unwrap_or(RoadVariances::new(sigma[0], sigma[1])),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::EnuPoint;
    use crate::roadnet::{RawRoad, RoadDefaults};
    use crate::tgnn::ModelConfig;

    fn straight_roads() -> RoadGraph {
        let road = |x0: f64, x1: f64, y: f64, source| RawRoad {
            a: EnuPoint::new(x0, y, 0.0),
            b: EnuPoint::new(x1, y, 0.0),
            lanes: None,
            max_speed: None,
            road_type: "primary".into(),
            oneway: None,
            source,
        };
        RoadGraph::build(&[road(0.0, 50.0, 0.0, 0), road(50.0, 100.0, 0.0, 0), road(0.0, 100.0, 30.0, 1)], &RoadDefaults::default()).unwrap()
    }

    fn estimate_at(e: f64, n: f64) -> KfEstimate {
        let mut mean = crate::kalman::StateVector::zeros();
        mean[0] = e;
        mean[1] = n;
        mean[3] = 10.0;
        KfEstimate {
            mean,
            cov: crate::kalman::StateMatrix::identity() * 4.0,
        }
    }

    #[test]
    fn untrained_model_picks_first_of_ties_with_unit_variance() {
        let graph = straight_roads();
        let model = Model::new(ModelConfig::default(), 0);
        let mut sel = TgnnSelector::new(&model, &graph, EmissionParams::default());
        let choice = sel.select(0, &estimate_at(20.0, 1.0), &[0, 1, 2]).unwrap().unwrap();
        assert_eq!(choice.segment, 0);
        assert_eq!(choice.variances, RoadVariances::new(1.0, 1.0));
    }

    #[test]
    fn override_and_empty_field_of_view() {
        let graph = straight_roads();
        let mut cfg = ModelConfig::default();
        cfg.features.prior_source = PriorSource::Viterbi;
        let model = Model::new(cfg, 0);
        let v = RoadVariances::new(3.0, 0.5);
        let mut sel = TgnnSelector::new(&model, &graph, EmissionParams::default()).with_variances(v);
        assert_eq!(sel.select(0, &estimate_at(20.0, 1.0), &[]).unwrap(), None);
        let choice = sel.select(1, &estimate_at(30.0, 1.0), &[0, 2]).unwrap().unwrap();
        assert_eq!(choice.variances, v);
        assert!([0, 2].contains(&choice.segment));
    }
}
