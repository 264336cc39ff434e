use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{normalized_adjacency, road_dim, EpochFeatures, FeatureConfig, USER_DIM};
use crate::autodiff::{Groups, SparseMatrix, Tape, Tensor, Var};
use crate::error::{Error, Result, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Graph convolutions, recurrent user path and cross message passing.
    Tgnn,
    /// TGNN without the recurrent cell.
    Gnn,
    /// Per-candidate MLP on user and road features.
    Mlp,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Tgnn => "TGNN",
            ModelKind::Gnn => "GNN",
            ModelKind::Mlp => "MLP",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tgnn" => Ok(ModelKind::Tgnn),
            "gnn" => Ok(ModelKind::Gnn),
            "mlp" => Ok(ModelKind::Mlp),
            _ => Err(Error::Config(format!("unknown model kind '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub blocks: usize,
    pub hidden: usize,
    /// One set of recurrent weights used by every block (each block keeps
    /// its own hidden state).
    pub share_lstm: bool,
    pub features: FeatureConfig,
    /// Bounds on the predicted variances (m²).
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Tgnn,
            blocks: 4,
            hidden: 32,
            share_lstm: true,
            features: FeatureConfig::default(),
            sigma_min: 1e-2,
            sigma_max: 1e6,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

/// Running batch-norm statistics of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: usize,
    b: usize,
    gamma: usize,
    beta: usize,
    bn: usize,
}

#[derive(Debug, Clone, Copy)]
struct Lstm {
    w_ih: usize,
    w_hh: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct GraphBlock {
    mlp_x: Dense,
    mlp_r: Dense,
    gcn: Dense,
    cross_x: Dense,
    cross_r: Dense,
    lstm: Option<Lstm>,
}

#[derive(Debug, Clone)]
enum Body {
    Graph(Vec<GraphBlock>),
    Mlp(Vec<Dense>),
}

#[derive(Debug, Clone)]
struct Layout {
    body: Body,
    w_out: usize,
    w_sigma: usize,
    b_sigma: usize,
}

struct Builder {
    names: Vec<String>,
    params: Vec<Tensor>,
    bn: Vec<BnStats>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn push(&mut self, name: String, t: Tensor) -> usize {
        self.names.push(name);
        self.params.push(t);
        self.params.len() - 1
    }

    fn uniform(&mut self, name: String, rows: usize, cols: usize, bound: f64) -> usize {
        let data = (0..rows * cols).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        self.push(name, Tensor::new(rows, cols, data))
    }

    fn dense(&mut self, name: &str, fan_in: usize, out: usize) -> Dense {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = self.uniform(format!("{name}.w"), fan_in, out, bound);
        let b = self.uniform(format!("{name}.b"), 1, out, bound);
        let gamma = self.push(format!("{name}.bn.gamma"), Tensor::filled(1, out, 1.0));
        let beta = self.push(format!("{name}.bn.beta"), Tensor::zeros(1, out));
        self.bn.push(BnStats {
            mean: vec![0.0; out],
            var: vec![1.0; out],
        });
        Dense {
            w,
            b,
            gamma,
            beta,
            bn: self.bn.len() - 1,
        }
    }

    fn lstm(&mut self, name: &str, h: usize) -> Lstm {
        let bound = 1.0 / (h as f64).sqrt();
        Lstm {
            w_ih: self.uniform(format!("{name}.w_ih"), h, 4 * h, bound),
            w_hh: self.uniform(format!("{name}.w_hh"), h, 4 * h, bound),
            b: self.uniform(format!("{name}.b"), 1, 4 * h, bound),
        }
    }
}

/// Network weights, batch-norm statistics and configuration.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    bn: Vec<BnStats>,
    layout: Layout,
}

/// Inputs of several graphs stacked block-diagonally.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B, USER_DIM]`
    pub user: Tensor,
    /// `[N, road_dim]`, graphs stacked in order
    pub roads: Tensor,
    pub adjacency: Rc<SparseMatrix>,
    pub groups: Rc<Groups>,
}

impl Batch {
    pub fn new(epochs: &[&EpochFeatures]) -> Self {
        let user_rows: Vec<Vec<f64>> = epochs.iter().map(|e| e.user.data().to_vec()).collect();
        let dim = epochs.first().map_or(0, |e| e.roads.cols());
        let total: usize = epochs.iter().map(|e| e.roads.rows()).sum();
        let mut data = Vec::with_capacity(total * dim);
        for e in epochs {
            data.extend_from_slice(e.roads.data());
        }
        let adjs: Vec<&[Vec<usize>]> = epochs.iter().map(|e| e.neighbors.as_slice()).collect();
        let sizes: Vec<usize> = epochs.iter().map(|e| e.candidates.len()).collect();
        Self {
            user: Tensor::from_rows(&user_rows),
            roads: Tensor::new(total, dim, data),
            adjacency: Rc::new(normalized_adjacency(&adjs)),
            groups: Rc::new(Groups::from_sizes(&sizes)),
        }
    }
}

/// Recurrent state on a tape: `(h, c)` per block, created on first use.
pub type TapeState<'t> = Vec<(Var<'t>, Var<'t>)>;

/// Recurrent state between tapes, one `(h, c)` pair per block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HiddenState {
    pub cells: Vec<(Tensor, Tensor)>,
}

impl HiddenState {
    pub fn to_tape<'t>(&self, tape: &'t Tape) -> TapeState<'t> {
        self.cells
            .iter()
            .map(|(h, c)| (tape.constant(h.clone()), tape.constant(c.clone())))
            .collect()
    }

    pub fn from_tape(state: &TapeState<'_>) -> Self {
        Self {
            cells: state.iter().map(|(h, c)| ((*h.value()).clone(), (*c.value()).clone())).collect(),
        }
    }
}

pub struct StepOutput<'t> {
    /// `[N, 1]`, `None` when no graph has candidates
    pub logits: Option<Var<'t>>,
    /// `[B, 2]` road variances `[σ∥², σ⊥²]` in m²
    pub sigma: Var<'t>,
}

impl<'t> StepOutput<'t> {
    /// Probabilities of graph `g` as a `[1, n]` row, `None` if it has no
    /// candidates.
    pub fn probs(&self, groups: &Groups, g: usize) -> Result<Option<Var<'t>>> {
        let range = groups.range(g);
        match self.logits {
            Some(l) if !range.is_empty() => Ok(Some(l.slice_rows(range.start, range.len())?.t().softmax_rows())),
            _ => Ok(None),
        }
    }
}

/// Per-layer batch statistics recorded during a training forward pass.
pub type BatchStats = Vec<Option<(Vec<f64>, Vec<f64>)>>;

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let h = config.hidden;
        let (dx, dr) = (USER_DIM, road_dim(config.features.k_hops));
        let mut b = Builder {
            names: Vec::new(),
            params: Vec::new(),
            bn: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let body = match config.kind {
            ModelKind::Tgnn | ModelKind::Gnn => {
                let recurrent = config.kind == ModelKind::Tgnn;
                let shared = (recurrent && config.share_lstm).then(|| b.lstm("lstm", h));
                let blocks = (0..config.blocks)
                    .map(|l| {
                        let (ix, ir) = if l == 0 { (dx, dr) } else { (h, h) };
                        let p = format!("block{l}");
                        let mlp_x = b.dense(&format!("{p}.mlp_x"), ix, h);
                        let mlp_r = b.dense(&format!("{p}.mlp_r"), ir, h);
                        let gcn = b.dense(&format!("{p}.gcn"), h, h);
                        let lstm = match (recurrent, shared) {
                            (false, _) => None,
                            (true, Some(s)) => Some(s),
                            (true, None) => Some(b.lstm(&format!("{p}.lstm"), h)),
                        };
                        let cross_x = b.dense(&format!("{p}.cross_x"), 2 * h, h);
                        let cross_r = b.dense(&format!("{p}.cross_r"), 2 * h, h);
                        GraphBlock {
                            mlp_x,
                            mlp_r,
                            gcn,
                            cross_x,
                            cross_r,
                            lstm,
                        }
                    })
                    .collect();
                Body::Graph(blocks)
            }
            ModelKind::Mlp => Body::Mlp(
                (0..config.blocks)
                    .map(|l| b.dense(&format!("block{l}.mlp"), if l == 0 { dx + dr } else { h }, h))
                    .collect(),
            ),
        };
        // zero heads: uniform probabilities and unit variances
        let w_out = b.push("head.w_out".into(), Tensor::zeros(h, 1));
        let w_sigma = b.push("head.w_sigma".into(), Tensor::zeros(h, 2));
        let b_sigma = b.push("head.b_sigma".into(), Tensor::zeros(1, 2));
        Self {
            config,
            names: b.names,
            params: b.params,
            bn: b.bn,
            layout: Layout {
                body,
                w_out,
                w_sigma,
                b_sigma,
            },
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn bn_stats(&self) -> &[BnStats] {
        &self.bn
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Replaces weights and statistics, checking count and shapes.
    pub fn load_state(&mut self, params: Vec<Tensor>, bn: Vec<BnStats>) -> Result<()> {
        if params.len() != self.params.len() || bn.len() != self.bn.len() {
            return Err(Error::Invalid(format!(
                "checkpoint has {} tensors and {} norm layers, model expects {} and {}",
                params.len(),
                bn.len(),
                self.params.len(),
                self.bn.len()
            )));
        }
        for (i, (new, old)) in params.iter().zip(&self.params).enumerate() {
            if new.shape() != old.shape() {
                return Err(Error::Invalid(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    self.names[i],
                    new.shape(),
                    old.shape()
                )));
            }
        }
        for (new, old) in bn.iter().zip(&self.bn) {
            if new.mean.len() != old.mean.len() || new.var.len() != old.var.len() {
                return Err(Error::Invalid("batch-norm statistics size mismatch".into()));
            }
        }
        self.params = params;
        self.bn = bn;
        Ok(())
    }

    /// Puts every parameter on `tape` as a trainable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params.iter().map(|p| tape.param(p.clone())).collect()
    }

    pub fn empty_stats(&self) -> BatchStats {
        vec![None; self.bn.len()]
    }

    /// Exponential moving average of the recorded batch statistics.
    pub fn update_running_stats(&mut self, stats: &BatchStats) {
        let m = self.config.bn_momentum;
        for (run, s) in self.bn.iter_mut().zip(stats) {
            if let Some((mean, var)) = s {
                for (r, v) in run.mean.iter_mut().zip(mean) {
                    *r = (1.0 - m) * *r + m * v;
                }
                for (r, v) in run.var.iter_mut().zip(var) {
                    *r = (1.0 - m) * *r + m * v;
                }
            }
        }
    }

    fn dense<'t>(
        &self,
        p: &[Var<'t>],
        d: &Dense,
        x: Var<'t>,
        adjacency: Option<&Rc<SparseMatrix>>,
        stats: &mut Option<&mut BatchStats>,
    ) -> Result<Var<'t>> {
        let tape = x.tape();
        let mut y = x.matmul(p[d.w])?;
        if let Some(a) = adjacency {
            y = tape.propagate(a, y)?;
        }
        let y = y.add(p[d.b])?;
        let eps = self.config.bn_eps;
        let y = match stats {
            Some(s) => {
                let (out, mean, var) = tape.batch_norm_train(y, p[d.gamma], p[d.beta], eps)?;
                s[d.bn] = Some((mean, var));
                out
            }
            None => {
                let run = &self.bn[d.bn];
                tape.batch_norm_eval(y, p[d.gamma], p[d.beta], &run.mean, &run.var, eps)?
            }
        };
        Ok(y.silu())
    }

    fn lstm<'t>(&self, p: &[Var<'t>], l: &Lstm, x: Var<'t>, state: (Var<'t>, Var<'t>)) -> Result<(Var<'t>, Var<'t>)> {
        let h = self.config.hidden;
        let (h0, c0) = state;
        let gates = x.matmul(p[l.w_ih])?.add(h0.matmul(p[l.w_hh])?)?.add(p[l.b])?;
        let i = gates.slice_cols(0, h)?.sigmoid();
        let f = gates.slice_cols(h, h)?.sigmoid();
        let g = gates.slice_cols(2 * h, h)?.tanh();
        let o = gates.slice_cols(3 * h, h)?.sigmoid();
        let c = f.mul(c0)?.add(i.mul(g)?)?;
        let hn = o.mul(c.tanh())?;
        Ok((hn, c))
    }

    /// One epoch for a batch of graphs.
    ///
    /// With `stats` the batch-norm layers normalize with batch statistics and
    /// record them; without, they use the running statistics.
    pub fn step<'t>(
        &self,
        p: &[Var<'t>],
        batch: &Batch,
        state: &mut TapeState<'t>,
        mut stats: Option<&mut BatchStats>,
    ) -> Result<StepOutput<'t>> {
        let tape = p[0].tape();
        let h = self.config.hidden;
        let b = batch.user.rows();
        let n = batch.roads.rows();
        if batch.groups.count() != b || batch.groups.total() != n || batch.adjacency.shape() != [n, n] {
            return Err(TensorError::ShapeMismatch {
                op: "tgnn_step",
                left: [b, n],
                right: [batch.groups.count(), batch.groups.total()],
            }
            .into());
        }
        let groups = &batch.groups;
        let mut x = tape.constant(batch.user.clone());
        let mut r = (n > 0).then(|| tape.constant(batch.roads.clone()));
        match &self.layout.body {
            Body::Graph(blocks) => {
                if state.is_empty() {
                    let z = || tape.constant(Tensor::zeros(b, h));
                    state.extend((0..blocks.len()).map(|_| (z(), z())));
                }
                for (l, blk) in blocks.iter().enumerate() {
                    let xh = self.dense(p, &blk.mlp_x, x, None, &mut stats)?;
                    let xt = match &blk.lstm {
                        Some(cell) => {
                            let (hn, cn) = self.lstm(p, cell, xh, state[l])?;
                            state[l] = (hn, cn);
                            hn
                        }
                        None => xh,
                    };
                    let (pooled, rt) = match r {
                        Some(rv) => {
                            let rh = self.dense(p, &blk.mlp_r, rv, None, &mut stats)?;
                            let rt = self.dense(p, &blk.gcn, rh, Some(&batch.adjacency), &mut stats)?;
                            (rt.group_mean(groups)?, Some(rt))
                        }
                        None => (tape.constant(Tensor::zeros(b, h)), None),
                    };
                    x = self.dense(p, &blk.cross_x, tape.concat_cols(&[xt, pooled])?, None, &mut stats)?;
                    r = match rt {
                        Some(rt) => {
                            let joined = tape.concat_cols(&[rt, xt.group_broadcast(groups)?])?;
                            Some(self.dense(p, &blk.cross_r, joined, None, &mut stats)?)
                        }
                        None => None,
                    };
                }
            }
            Body::Mlp(layers) => {
                if let Some(rv) = r {
                    let mut rows = tape.concat_cols(&[x.group_broadcast(groups)?, rv])?;
                    for d in layers {
                        rows = self.dense(p, d, rows, None, &mut stats)?;
                    }
                    x = rows.group_mean(groups)?;
                    r = Some(rows);
                } else {
                    x = tape.constant(Tensor::zeros(b, h));
                }
            }
        }
        let logits = match r {
            Some(rv) => Some(rv.matmul(p[self.layout.w_out])?),
            None => None,
        };
        let (lo, hi) = (self.config.sigma_min.ln(), self.config.sigma_max.ln());
        let sigma = x
            .matmul(p[self.layout.w_sigma])?
            .add(p[self.layout.b_sigma])?
            .clamp(lo, hi)
            .exp();
        Ok(StepOutput { logits, sigma })
    }

    /// Inference for one graph: probabilities over its candidates (sorted by
    /// id like the candidates) and `[σ∥², σ⊥²]`. Advances `hidden`.
    pub fn infer(&self, features: &EpochFeatures, hidden: &mut HiddenState) -> Result<(Vec<f64>, [f64; 2])> {
        let tape = Tape::new();
        let p: Vec<Var<'_>> = self.params.iter().map(|t| tape.constant(t.clone())).collect();
        let batch = Batch::new(&[features]);
        let mut state = hidden.to_tape(&tape);
        let out = self.step(&p, &batch, &mut state, None)?;
        *hidden = HiddenState::from_tape(&state);
        let probs = match out.probs(&batch.groups, 0)? {
            Some(v) => v.value().data().to_vec(),
            None => Vec::new(),
        };
        let s = out.sigma.value();
        Ok((probs, [s.get(0, 0), s.get(0, 1)]))
    }
}
