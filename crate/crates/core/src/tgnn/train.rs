use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::{build_features, EpochFeatures, PriorProbs, PriorSource};
use super::model::{Batch, BatchStats, Model};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::harness::{gnss_step, PipelineConfig};
use crate::kalman::{gnss_update_tracked, predict_tracked, road_update_tracked, KfEstimate, TrackedEstimate};
use crate::roadnet::{RoadGraph, FOV_CAP};
use crate::selection::{RoadHmm, ViterbiBelief};
use crate::sim::{stream_rng, DriveRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    /// Consecutive epochs per window.
    pub window: usize,
    /// Weight of the position loss (1/m²).
    pub lambda: f64,
    pub adam: AdamConfig,
    /// Update the filter with the labeled road instead of the model's pick.
    pub teacher_forcing: bool,
    /// Let gradients flow through the filter across the whole window
    /// instead of stopping them at each epoch's prior.
    pub full_window_backprop: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            batch_size: 8,
            window: 50,
            lambda: 0.01,
            adam: AdamConfig::default(),
            teacher_forcing: true,
            full_window_backprop: false,
        }
    }
}

/// A labeled drive ready for training.
#[derive(Clone, Copy)]
pub struct TrainingDrive<'a> {
    pub graph: &'a RoadGraph,
    pub drive: &'a DriveRecord,
    pub labels: &'a [Option<usize>],
    /// GNSS-only filter output; windows start from it.
    pub gnss_only: &'a [KfEstimate],
}

/// A window of `len` epochs starting at `start`.
#[derive(Clone, Copy)]
pub struct Window<'a> {
    pub data: TrainingDrive<'a>,
    pub start: usize,
    pub len: usize,
}

/// Frozen inputs of one window-epoch, so the loss can be re-evaluated as a
/// pure function of the weights.
#[derive(Debug, Clone)]
pub struct StepInput {
    pub estimate: KfEstimate,
    pub features: EpochFeatures,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: f64,
    pub ce: f64,
    pub mse: f64,
    pub accuracy: f64,
    /// Window-epochs that entered the loss.
    pub counted: usize,
    /// Window-epochs whose label was not among the candidates.
    pub skipped: usize,
}

pub struct Unrolled<'t> {
    pub loss: Option<Var<'t>>,
    pub record: IterationRecord,
    pub stats: Vec<BatchStats>,
}

fn argmax(values: &[f64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

/// Runs the filter and the network over `windows` in lock step and builds
/// the training loss on `tape`.
///
/// With `replay` the inputs recorded in `cache` by an earlier call are used
/// instead of being recomputed, which makes the loss a function of `params`
/// alone.
pub fn unroll<'t>(
    model: &Model,
    params: &[Var<'t>],
    windows: &[Window<'_>],
    cfg: &TrainConfig,
    pipeline: &PipelineConfig,
    cache: &mut Vec<Vec<StepInput>>,
    replay: bool,
) -> Result<Unrolled<'t>> {
    let tape = params[0].tape();
    let len = windows.iter().map(|w| w.len).min().unwrap_or(0);
    let b = windows.len();
    if !replay {
        cache.clear();
        cache.resize(len, Vec::new());
    }
    let hmms: Vec<Option<RoadHmm<'_>>> = windows
        .iter()
        .map(|w| (model.config().features.prior_source == PriorSource::Viterbi).then(|| RoadHmm::new(w.data.graph, pipeline.emission)))
        .collect();
    let mut beliefs = vec![ViterbiBelief::default(); b];
    let mut priors = vec![PriorProbs::default(); b];
    let mut carried: Vec<Option<KfEstimate>> = vec![None; b];
    let mut tracked: Vec<Option<TrackedEstimate<'t>>> = vec![None; b];
    let mut state = Vec::new();
    let mut terms: Vec<Var<'t>> = Vec::new();
    let mut record = IterationRecord::default();
    let (mut ce_sum, mut mse_sum, mut hits) = (0.0, 0.0, 0usize);
    let mut all_stats = Vec::with_capacity(len);

    for t in 0..len {
        if !replay {
            for (w, win) in windows.iter().enumerate() {
                let idx = win.start + t;
                let drive = win.data.drive;
                let est = match &carried[w] {
                    None => win.data.gnss_only[idx].clone(),
                    Some(post) => gnss_step(Some((post, drive.epochs[idx - 1].time())), drive, idx, &pipeline.process_noise)?,
                };
                let cands = win.data.graph.field_of_view_capped(&est.position(), pipeline.fov_radius, FOV_CAP);
                let prior = match &hmms[w] {
                    Some(_) => PriorProbs::new(beliefs[w].ids(), &beliefs[w].probabilities()),
                    None => priors[w].clone(),
                };
                if let Some(hmm) = &hmms[w] {
                    beliefs[w] = hmm.step(&beliefs[w], &cands, &est).0;
                }
                let features = build_features(&est, &cands, win.data.graph, &prior, &pipeline.emission, &model.config().features);
                let label = win.data.labels.get(idx).copied().flatten();
                cache[t].push(StepInput {
                    estimate: est,
                    features,
                    label,
                });
            }
        }
        let inputs = &cache[t];
        let feats: Vec<&EpochFeatures> = inputs.iter().map(|s| &s.features).collect();
        let batch = Batch::new(&feats);
        let mut stats = model.empty_stats();
        let out = model.step(params, &batch, &mut state, Some(&mut stats))?;
        all_stats.push(stats);

        for (w, win) in windows.iter().enumerate() {
            let idx = win.start + t;
            let input = &inputs[w];
            let cands = &input.features.candidates;
            let prior_est = match (cfg.full_window_backprop, tracked[w].take()) {
                (true, Some(prev)) if t > 0 => {
                    let epoch = &win.data.drive.epochs[idx];
                    let dt = epoch.time() - win.data.drive.epochs[idx - 1].time();
                    gnss_update_tracked(predict_tracked(prev, dt, &pipeline.process_noise)?, &epoch.gnss)?
                }
                _ => TrackedEstimate::constant(tape, &input.estimate),
            };
            let probs = out.probs(&batch.groups, w)?;
            let prob_values: Vec<f64> = probs.map_or(Vec::new(), |p| p.value().data().to_vec());
            let label_pos = input.label.and_then(|l| cands.binary_search(&l).ok());
            let picked = argmax(&prob_values);
            let road_pos = if cfg.teacher_forcing { label_pos } else { picked };
            let sigma = out.sigma.slice_rows(w, 1)?;
            let posterior = match road_pos {
                Some(k) => {
                    let seg = &win.data.graph.segments()[cands[k]].geometry;
                    road_update_tracked(prior_est, seg, sigma)?
                }
                None => prior_est,
            };
            match (label_pos, probs) {
                (Some(k), Some(p)) => {
                    let ce = p.cross_entropy(k)?;
                    let truth = win.data.drive.epochs[idx].truth.position;
                    let target = tape.constant(Tensor::column(&[truth.east, truth.north]));
                    let mse = posterior.horizontal()?.squared_error(target)?;
                    ce_sum += ce.item();
                    mse_sum += mse.item();
                    hits += usize::from(picked == Some(k));
                    record.counted += 1;
                    terms.push(ce.add(mse.scale(cfg.lambda))?);
                }
                _ => record.skipped += 1,
            }
            carried[w] = Some(posterior.value());
            tracked[w] = Some(if cfg.full_window_backprop { posterior } else { posterior.detach() });
            priors[w] = PriorProbs::new(cands, &prob_values);
        }
    }

    let loss = if terms.is_empty() {
        None
    } else {
        let n = terms.len() as f64;
        let total = terms.iter().skip(1).try_fold(terms[0], |acc, v| acc.add(*v))?;
        Some(total.scale(1.0 / n))
    };
    if record.counted > 0 {
        let n = record.counted as f64;
        record.ce = ce_sum / n;
        record.mse = mse_sum / n;
        record.accuracy = hits as f64 / n;
        record.loss = record.ce + cfg.lambda * record.mse;
    }
    Ok(Unrolled {
        loss,
        record,
        stats: all_stats,
    })
}

/// Draws `batch` windows uniformly over drives and start epochs.
pub fn sample_windows<'a>(data: &[TrainingDrive<'a>], cfg: &TrainConfig, rng: &mut impl Rng) -> Vec<Window<'a>> {
    (0..cfg.batch_size)
        .map(|_| {
            let d = data[rng.gen_range(0..data.len())];
            let n = d.drive.epochs.len();
            let len = cfg.window.min(n);
            let start = rng.gen_range(0..=n - len);
            Window { data: d, start, len }
        })
        .collect()
}

const SAMPLING_STREAM: u64 = 7;

/// What training leaves behind besides the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Training {
    pub log: Vec<IterationRecord>,
    pub adam: AdamState,
}

/// Trains `model` in place. `on_iteration` sees every record and the model
/// after its update; returning an error stops training.
pub fn train(
    model: &mut Model,
    data: &[TrainingDrive<'_>],
    cfg: &TrainConfig,
    pipeline: &PipelineConfig,
    seed: u64,
    mut on_iteration: impl FnMut(&IterationRecord, &Model) -> Result<()>,
) -> Result<Training> {
    let data: Vec<TrainingDrive<'_>> = data.iter().copied().filter(|d| !d.drive.epochs.is_empty()).collect();
    if data.is_empty() {
        return Err(Error::Invalid("no training drives".into()));
    }
    for d in &data {
        if d.labels.len() != d.drive.epochs.len() || d.gnss_only.len() != d.drive.epochs.len() {
            return Err(Error::Invalid("labels and filter output must cover every epoch".into()));
        }
    }
    let mut rng = stream_rng(seed, SAMPLING_STREAM);
    let mut adam = AdamState::new(model.params());
    let mut log = Vec::with_capacity(cfg.iterations);
    let mut cache = Vec::new();
    for iteration in 0..cfg.iterations {
        let windows = sample_windows(&data, cfg, &mut rng);
        let tape = Tape::new();
        let params = model.bind(&tape);
        let unrolled = unroll(model, &params, &windows, cfg, pipeline, &mut cache, false)?;
        let mut record = unrolled.record;
        record.iteration = iteration;
        if let Some(loss) = unrolled.loss {
            let grads = tape.backward(loss)?;
            let g: Vec<Tensor> = params.iter().map(|&p| grads.get_or_zeros(p)).collect();
            adam_step(model.params_mut(), &g, &mut adam, &cfg.adam);
        }
        for s in &unrolled.stats {
            model.update_running_stats(s);
        }
        on_iteration(&record, model)?;
        log.push(record);
    }
    Ok(Training { log, adam })
}
