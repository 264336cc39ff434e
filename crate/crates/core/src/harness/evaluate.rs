use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::{grid_search, GridResult};
use super::methods::{run_method, Method, MethodInputs};
use super::metrics::{mean_std, ErrorSummary};
use super::pipeline::{horizontal_errors, oracle_labels, run_kf, PipelineConfig, RoadVariances};
use crate::error::{Error, Result};
use crate::kalman::KfEstimate;
use crate::roadnet::RoadGraph;
use crate::sim::DriveRecord;
use crate::tgnn::{train, IterationRecord, Model, ModelConfig, TrainConfig, Training, TrainingDrive};

/// One fold: a road network, its drives and their oracle labels.
pub struct FoldData<'a> {
    pub name: String,
    pub graph: &'a RoadGraph,
    pub drives: &'a [DriveRecord],
    pub labels: Vec<Vec<Option<usize>>>,
}

impl<'a> FoldData<'a> {
    pub fn new(name: impl Into<String>, graph: &'a RoadGraph, drives: &'a [DriveRecord], labels: Vec<Vec<Option<usize>>>) -> Result<Self> {
        if labels.len() != drives.len() || labels.iter().zip(drives).any(|(l, d)| l.len() != d.epochs.len()) {
            return Err(Error::Invalid("labels must cover every drive epoch".into()));
        }
        Ok(Self {
            name: name.into(),
            graph,
            drives,
            labels,
        })
    }

    /// Labels every drive with the offline oracle.
    pub fn labeled(name: impl Into<String>, graph: &'a RoadGraph, drives: &'a [DriveRecord], cfg: &PipelineConfig) -> Result<Self> {
        let labels = drives
            .par_iter()
            .map(|d| oracle_labels(d, graph, cfg))
            .collect::<Result<Vec<_>>>()?;
        Self::new(name, graph, drives, labels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub methods: Vec<Method>,
    /// Seeds of the learned methods.
    pub seeds: Vec<u64>,
    /// Holdout folds to evaluate; all when empty.
    pub holdout: Vec<usize>,
    pub pipeline: PipelineConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Fixed road variances for the learned methods instead of their own.
    pub learned_variances: Option<RoadVariances>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL[..6].to_vec(),
            seeds: (0..10).collect(),
            holdout: Vec::new(),
            pipeline: PipelineConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            learned_variances: None,
        }
    }
}

/// Score of one method on one holdout fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub fold: usize,
    /// Training seed of learned methods.
    pub seed: Option<u64>,
    pub he50_m: f64,
    pub he95_m: f64,
    pub epochs: usize,
    pub drives: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub he50_mean: f64,
    pub he50_std: f64,
    pub he95_mean: f64,
    pub he95_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tuning {
    pub fold: usize,
    pub method: Method,
    pub grid: GridResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub fold: usize,
    pub method: Method,
    pub seed: u64,
    pub log: Vec<IterationRecord>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<MethodSummary>,
    /// Pooled holdout errors of each method (first seed of learned ones).
    pub errors: Vec<(Method, Vec<f64>)>,
    pub tuning: Vec<Tuning>,
    pub training: Vec<TrainingLog>,
}

impl Report {
    pub fn summary_of(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn rows_of(&self, method: Method) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(move |r| r.method == method)
    }
}

/// Trains one model on `folds`.
pub fn train_on(
    folds: &[&FoldData<'_>],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    pipeline: &PipelineConfig,
    seed: u64,
    on_iteration: impl FnMut(&IterationRecord, &Model) -> Result<()>,
) -> Result<(Model, Training)> {
    let gnss_only: Vec<Vec<Vec<KfEstimate>>> = folds
        .iter()
        .map(|f| {
            f.drives
                .par_iter()
                .map(|d| run_kf(d, f.graph, None, pipeline))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let data: Vec<TrainingDrive<'_>> = folds
        .iter()
        .zip(&gnss_only)
        .flat_map(|(f, g)| {
            f.drives.iter().zip(&f.labels).zip(g).map(|((drive, labels), gnss)| TrainingDrive {
                graph: f.graph,
                drive,
                labels,
                gnss_only: gnss,
            })
        })
        .collect();
    let mut model = Model::new(*model_cfg, seed);
    let training = train(&mut model, &data, train_cfg, pipeline, seed, on_iteration)?;
    Ok((model, training))
}

fn score(method: Method, fold: &FoldData<'_>, inputs: &MethodInputs<'_>, cfg: &PipelineConfig) -> Result<Vec<f64>> {
    let per_drive = fold
        .drives
        .par_iter()
        .zip(&fold.labels)
        .map(|(drive, labels)| {
            let inputs = MethodInputs {
                labels: Some(labels),
                ..*inputs
            };
            let pos = run_method(method, drive, fold.graph, &inputs, cfg)?;
            Ok(horizontal_errors(drive, &pos))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_drive.concat())
}

fn row(method: Method, fold: usize, seed: Option<u64>, errors: &[f64], drives: usize) -> ResultRow {
    let s = ErrorSummary::from_errors(errors);
    ResultRow {
        method,
        fold,
        seed,
        he50_m: s.he50,
        he95_m: s.he95,
        epochs: s.epochs,
        drives,
    }
}

/// Leave-one-out cross-validation: for each holdout fold the classical
/// selectors are tuned and the networks trained on the other folds.
pub fn evaluate(folds: &[FoldData<'_>], cfg: &EvaluationConfig, mut progress: impl FnMut(&str)) -> Result<Report> {
    if folds.len() < 2 {
        return Err(Error::Config("cross-validation needs at least two folds".into()));
    }
    let holdout: Vec<usize> = if cfg.holdout.is_empty() {
        (0..folds.len()).collect()
    } else {
        cfg.holdout.clone()
    };
    if let Some(&f) = holdout.iter().find(|&&f| f >= folds.len()) {
        return Err(Error::Config(format!("holdout fold {f} out of range")));
    }
    if cfg.methods.iter().any(|m| m.is_learned()) && cfg.seeds.is_empty() {
        return Err(Error::Config("learned methods need at least one seed".into()));
    }
    let mut report = Report::default();
    let mut pooled: Vec<(Method, Vec<f64>)> = cfg.methods.iter().map(|&m| (m, Vec::new())).collect();
    for &h in &holdout {
        let fold = &folds[h];
        let rest: Vec<&FoldData<'_>> = folds.iter().enumerate().filter(|&(i, _)| i != h).map(|(_, f)| f).collect();
        for (mi, &method) in cfg.methods.iter().enumerate() {
            if method.is_learned() {
                let model_cfg = ModelConfig {
                    kind: method.model_kind().expect("learned method"),
                    ..cfg.model
                };
                progress(&format!("fold {h}: training {method} for {} seeds", cfg.seeds.len()));
                let trained = cfg
                    .seeds
                    .par_iter()
                    .map(|&seed| train_on(&rest, &model_cfg, &cfg.train, &cfg.pipeline, seed, |_, _| Ok(())).map(|r| (seed, r)))
                    .collect::<Result<Vec<_>>>()?;
                for (k, (seed, (model, training))) in trained.into_iter().enumerate() {
                    let inputs = MethodInputs {
                        variances: cfg.learned_variances,
                        model: Some(&model),
                        ..MethodInputs::default()
                    };
                    let errors = score(method, fold, &inputs, &cfg.pipeline)?;
                    let r = row(method, h, Some(seed), &errors, fold.drives.len());
                    progress(&format!("fold {h}: {method} seed {seed} HE@95 {:.3} m", r.he95_m));
                    report.rows.push(r);
                    if k == 0 {
                        pooled[mi].1.extend(errors);
                    }
                    report.training.push(TrainingLog {
                        fold: h,
                        method,
                        seed,
                        log: training.log,
                    });
                }
            } else {
                let mut inputs = MethodInputs::default();
                if method.is_tuned() {
                    progress(&format!("fold {h}: grid search for {method}"));
                    let drives: Vec<(&RoadGraph, &DriveRecord)> =
                        rest.iter().flat_map(|f| f.drives.iter().map(move |d| (f.graph, d))).collect();
                    let grid = grid_search(method, &drives, &cfg.pipeline)?;
                    inputs.variances = Some(grid.best.variances);
                    report.tuning.push(Tuning { fold: h, method, grid });
                }
                let errors = score(method, fold, &inputs, &cfg.pipeline)?;
                let r = row(method, h, None, &errors, fold.drives.len());
                progress(&format!("fold {h}: {method} HE@95 {:.3} m", r.he95_m));
                report.rows.push(r);
                pooled[mi].1.extend(errors);
            }
        }
    }
    report.summary = summarize(&report.rows, &cfg.methods);
    report.errors = pooled;
    Ok(report)
}

/// Fold-averaged HE per seed, then mean ± sample std over seeds.
pub fn summarize(rows: &[ResultRow], methods: &[Method]) -> Vec<MethodSummary> {
    methods
        .iter()
        .filter_map(|&method| {
            let mine: Vec<&ResultRow> = rows.iter().filter(|r| r.method == method).collect();
            if mine.is_empty() {
                return None;
            }
            let mut seeds: Vec<Option<u64>> = mine.iter().map(|r| r.seed).collect();
            seeds.sort();
            seeds.dedup();
            let per_seed = |f: fn(&ResultRow) -> f64| -> Vec<f64> {
                seeds
                    .iter()
                    .map(|s| {
                        let v: Vec<f64> = mine.iter().filter(|r| r.seed == *s).map(|r| f(r)).collect();
                        v.iter().sum::<f64>() / v.len() as f64
                    })
                    .collect()
            };
            let (he50_mean, he50_std) = mean_std(&per_seed(|r| r.he50_m));
            let (he95_mean, he95_std) = mean_std(&per_seed(|r| r.he95_m));
            Some(MethodSummary {
                method,
                he50_mean,
                he50_std,
                he95_mean,
                he95_std,
            })
        })
        .collect()
}
