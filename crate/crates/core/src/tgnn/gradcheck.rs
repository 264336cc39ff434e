use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig};
use super::train::{sample_windows, unroll, TrainConfig, TrainingDrive};
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::harness::PipelineConfig;
use crate::sim::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub blocks: usize,
    pub hidden: usize,
    pub batch_size: usize,
    pub window: usize,
    pub lambda: f64,
    /// Central-difference step. The truncation error grows with its square
    /// and some weights have large third derivatives, so it is small.
    pub step: f64,
    pub tolerance: f64,
    /// Differences below this are rounding noise of the difference quotient.
    /// Biases that feed a batch norm have an identically zero gradient and
    /// land here; any gradient with a norm above `absolute_floor / tolerance`
    /// is still held to the relative tolerance.
    pub absolute_floor: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            blocks: 2,
            hidden: 8,
            batch_size: 2,
            window: 3,
            lambda: 0.01,
            step: 1e-6,
            tolerance: 1e-4,
            absolute_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterCheck {
    pub instance: usize,
    pub name: String,
    pub analytic_norm: f64,
    pub absolute_error: f64,
    /// `‖g_analytic − g_numeric‖ / max(‖g_analytic‖, ‖g_numeric‖)`, or 0
    /// when the difference is below the absolute floor
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub checks: Vec<ParameterCheck>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn worst(&self) -> Option<&ParameterCheck> {
        self.checks.iter().max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
    }

    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.relative_error <= self.tolerance)
    }
}

const GRADCHECK_STREAM: u64 = 11;

/// Compares tape gradients of the training loss with central differences.
///
/// The filter priors and prior-probability features are frozen from the
/// first evaluation, so the loss is the same function of the weights that
/// the tape differentiates.
pub fn gradcheck(data: &[TrainingDrive<'_>], cfg: &GradcheckConfig, pipeline: &PipelineConfig, seed: u64) -> Result<GradcheckReport> {
    if data.is_empty() {
        return Err(Error::Invalid("no drives to check gradients on".into()));
    }
    let train_cfg = TrainConfig {
        batch_size: cfg.batch_size,
        window: cfg.window,
        lambda: cfg.lambda,
        ..TrainConfig::default()
    };
    let mut rng = stream_rng(seed, GRADCHECK_STREAM);
    let mut checks = Vec::new();
    for instance in 0..cfg.instances {
        let mut model = Model::new(
            ModelConfig {
                blocks: cfg.blocks,
                hidden: cfg.hidden,
                ..ModelConfig::default()
            },
            rng.gen(),
        );
        // zero heads would hide most of the gradient paths
        let heads: Vec<usize> = (0..model.names().len()).filter(|&i| model.names()[i].starts_with("head.")).collect();
        for i in heads {
            for v in model.params_mut()[i].data_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
        let windows = sample_windows(data, &train_cfg, &mut rng);
        let mut cache = Vec::new();
        let analytic = {
            let tape = Tape::new();
            let params = model.bind(&tape);
            let out = unroll(&model, &params, &windows, &train_cfg, pipeline, &mut cache, false)?;
            let Some(loss) = out.loss else { continue };
            let grads = tape.backward(loss)?;
            params.iter().map(|&p| grads.get_or_zeros(p)).collect::<Vec<Tensor>>()
        };
        let mut eval = |model: &Model| -> Result<f64> {
            let tape = Tape::new();
            let params = model.bind(&tape);
            let out = unroll(model, &params, &windows, &train_cfg, pipeline, &mut cache, true)?;
            Ok(out.loss.map_or(0.0, |l| l.item()))
        };
        for (i, g) in analytic.iter().enumerate() {
            let mut numeric = Vec::with_capacity(g.len());
            for j in 0..g.len() {
                let orig = model.params()[i].data()[j];
                model.params_mut()[i].data_mut()[j] = orig + cfg.step;
                let up = eval(&model)?;
                model.params_mut()[i].data_mut()[j] = orig - cfg.step;
                let down = eval(&model)?;
                model.params_mut()[i].data_mut()[j] = orig;
                numeric.push((up - down) / (2.0 * cfg.step));
            }
            let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
            let a = norm(&mut g.data().iter().copied());
            let n = norm(&mut numeric.iter().copied());
            let diff = norm(&mut g.data().iter().zip(&numeric).map(|(x, y)| x - y));
            let scale = a.max(n);
            checks.push(ParameterCheck {
                instance,
                name: model.names()[i].clone(),
                analytic_norm: a,
                absolute_error: diff,
                relative_error: if diff <= cfg.absolute_floor { 0.0 } else { diff / scale },
            });
        }
    }
    Ok(GradcheckReport {
        checks,
        tolerance: cfg.tolerance,
    })
}
