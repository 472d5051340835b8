//! Blob-pooled GINE classifier, the JK-GIN and MLP baselines, and task heads.

mod batch;
mod layers;

use rand::Rng;
use thiserror::Error;

use crate::diff::{stream_rng, BatchStats, DiffError, ParamStore, StreamRng, Tape, Tensor, Var};

pub use batch::GraphBatch;
pub use layers::{blob_assign, blob_pool, gumbel_noise, readout, Bound, BLOB_EPS, BN_MOMENTUM};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model configuration: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Numeric {
        stage: String,
        #[source]
        source: DiffError,
    },
}

pub(crate) trait Stage<T> {
    fn at(self, stage: impl Fn() -> String) -> Result<T, ModelError>;
}

impl<T> Stage<T> for Result<T, DiffError> {
    fn at(self, stage: impl Fn() -> String) -> Result<T, ModelError> {
        self.map_err(|source| ModelError::Numeric { stage: stage(), source })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SoftBlobGin,
    GinJk,
    SeqMlp,
    ResidueMlp,
}

impl ModelKind {
    pub fn parse(s: &str) -> Option<ModelKind> {
        Some(match s {
            "softblobgin" | "soft_blob_gin" => ModelKind::SoftBlobGin,
            "gin_jk" | "gin" => ModelKind::GinJk,
            "seq_mlp" => ModelKind::SeqMlp,
            "residue_mlp" => ModelKind::ResidueMlp,
            _ => return None,
        })
    }

    pub fn is_graph_network(self) -> bool {
        matches!(self, ModelKind::SoftBlobGin | ModelKind::GinJk)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// One class per graph.
    Graph,
    /// Independent labels per graph, sigmoid scores.
    Multilabel,
    /// One scalar per graph.
    Regression,
    /// One binary logit per residue.
    Node,
}

impl TaskKind {
    pub fn parse(s: &str) -> Option<TaskKind> {
        Some(match s {
            "graph" | "graph_label" => TaskKind::Graph,
            "multilabel" => TaskKind::Multilabel,
            "regression" | "scalar" => TaskKind::Regression,
            "node" | "node_label" => TaskKind::Node,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub task: TaskKind,
    pub in_dim: usize,
    pub edge_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub blobs: usize,
    /// Output width: classes, labels, or 1 for regression and node tasks.
    pub outputs: usize,
    pub dropout: f64,
    pub mlp_hidden: usize,
    pub mlp_dropout: f64,
    /// Assignment temperature used outside training.
    #[serde(default = "default_eval_tau")]
    pub eval_tau: f64,
}

fn default_eval_tau() -> f64 {
    0.1
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::SoftBlobGin,
            task: TaskKind::Graph,
            in_dim: 1318,
            edge_dim: 18,
            hidden: 256,
            layers: 4,
            blobs: 8,
            outputs: 7,
            dropout: 0.1,
            mlp_hidden: 256,
            mlp_dropout: 0.3,
            eval_tau: default_eval_tau(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.in_dim == 0 || self.hidden == 0 || self.outputs == 0 {
            return bad("in_dim, hidden and outputs must be positive");
        }
        if self.kind.is_graph_network() && self.layers == 0 {
            return bad("graph networks need at least one layer");
        }
        if self.kind == ModelKind::SoftBlobGin && self.blobs == 0 {
            return bad("blob count must be positive");
        }
        if !(self.eval_tau > 0.0 && self.eval_tau.is_finite()) {
            return bad("eval_tau must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.mlp_dropout) {
            return bad("dropout rates must lie in [0,1)");
        }
        if self.task == TaskKind::Node && !self.kind.is_graph_network() {
            return bad("node tasks need a graph network backbone");
        }
        if matches!(self.task, TaskKind::Node | TaskKind::Regression) && self.outputs != 1 {
            return bad("node and regression tasks have a single output");
        }
        Ok(())
    }
}

/// Per-call switches for [`Model::forward`].
pub struct ForwardOptions<'r> {
    pub train: bool,
    pub tau: f64,
    /// Dropout and Gumbel draws; required when `train` is set.
    pub rng: Option<&'r mut StreamRng>,
    /// Replaces the batch node features (feature masks, attribution paths).
    pub x: Option<Var>,
    /// `n_edges × 1` multiplier applied to every message.
    pub edge_weight: Option<Var>,
    /// Explicit Gumbel draws (`n_nodes × K`); overrides `rng` for the assignment.
    pub noise: Option<Tensor>,
}

impl ForwardOptions<'_> {
    pub fn eval() -> Self {
        ForwardOptions { train: false, tau: 1.0, rng: None, x: None, edge_weight: None, noise: None }
    }
}

pub struct ForwardOut {
    /// `G × outputs`, or `N × 1` for node tasks.
    pub logits: Var,
    /// Final node states `N × ħ` (graph networks only).
    pub node_states: Option<Var>,
    /// Soft assignment `N × K`.
    pub assignment: Option<Var>,
    /// Refined blob embeddings `(K·G) × ħ`, row `k·G + g`.
    pub blobs: Option<Var>,
    /// Concatenated layer outputs `N × ħL`.
    pub jk: Option<Var>,
    pub bn_stats: Vec<(String, BatchStats)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Batch-norm running statistics.
    pub buffers: ParamStore,
}

fn linear_init(ps: &mut ParamStore, rng: &mut StreamRng, name: &str, fan_in: usize, fan_out: usize) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut draw = |r, c| {
        let v = (0..r * c).map(|_| rng.random_range(-bound..bound)).collect();
        Tensor::from_vec(r, c, v).expect("sized above")
    };
    let w = draw(fan_in, fan_out);
    let b = draw(1, fan_out);
    ps.add(format!("{name}.weight"), w);
    ps.add(format!("{name}.bias"), b);
}

fn norm_init(ps: &mut ParamStore, name: &str, width: usize) {
    ps.add(format!("{name}.gamma"), Tensor::filled(1, width, 1.0));
    ps.add(format!("{name}.beta"), Tensor::zeros(1, width));
}

fn bn_init(ps: &mut ParamStore, bufs: &mut ParamStore, name: &str, width: usize) {
    norm_init(ps, name, width);
    bufs.add(format!("{name}.running_mean"), Tensor::zeros(1, width));
    bufs.add(format!("{name}.running_var"), Tensor::filled(1, width, 1.0));
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model, ModelError> {
        config.validate()?;
        let mut rng = stream_rng(seed, &[0x1417]);
        let mut p = ParamStore::default();
        let mut b = ParamStore::default();
        let (d, h, c) = (config.in_dim, config.hidden, config.outputs);
        match config.kind {
            ModelKind::SoftBlobGin | ModelKind::GinJk => {
                linear_init(&mut p, &mut rng, "input", d, h);
                for l in 0..config.layers {
                    linear_init(&mut p, &mut rng, &format!("gine.{l}.edge"), config.edge_dim, h);
                    p.add(format!("gine.{l}.eps"), Tensor::scalar(0.0));
                    linear_init(&mut p, &mut rng, &format!("gine.{l}.mlp1"), h, h);
                    bn_init(&mut p, &mut b, &format!("gine.{l}.mlp_bn"), h);
                    linear_init(&mut p, &mut rng, &format!("gine.{l}.mlp2"), h, h);
                    bn_init(&mut p, &mut b, &format!("gine.{l}.bn"), h);
                }
                if config.task == TaskKind::Node {
                    linear_init(&mut p, &mut rng, "node1", h * config.layers, h);
                    linear_init(&mut p, &mut rng, "node2", h, 1);
                } else if config.kind == ModelKind::SoftBlobGin {
                    linear_init(&mut p, &mut rng, "blob_head", h, config.blobs);
                    norm_init(&mut p, "blob_ln", h);
                    linear_init(&mut p, &mut rng, "refiner1", h, h);
                    linear_init(&mut p, &mut rng, "refiner2", h, h);
                    linear_init(&mut p, &mut rng, "cls1", 2 * h, h);
                    bn_init(&mut p, &mut b, "cls_bn", h);
                    linear_init(&mut p, &mut rng, "cls2", h, c);
                } else {
                    linear_init(&mut p, &mut rng, "cls1", 2 * h * config.layers, h);
                    bn_init(&mut p, &mut b, "cls_bn", h);
                    linear_init(&mut p, &mut rng, "cls2", h, c);
                }
            }
            ModelKind::SeqMlp | ModelKind::ResidueMlp => {
                let input = if config.kind == ModelKind::SeqMlp { 20 } else { d };
                let m = config.mlp_hidden;
                linear_init(&mut p, &mut rng, "mlp1", input, m);
                norm_init(&mut p, "mlp_ln1", m);
                linear_init(&mut p, &mut rng, "mlp2", m, m);
                norm_init(&mut p, "mlp_ln2", m);
                linear_init(&mut p, &mut rng, "mlp3", m, c);
            }
        }
        Ok(Model { config, params: p, buffers: b })
    }

    pub fn num_params(&self) -> usize {
        self.params.numel()
    }

    /// Puts every parameter on the tape, as leaves when gradients are wanted.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .tensors()
            .iter()
            .map(|t| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect()
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        batch: &GraphBatch,
        opts: ForwardOptions<'_>,
    ) -> Result<ForwardOut, ModelError> {
        layers::forward(self, tape, pv, batch, opts)
    }

    /// Eval-mode options at the model's stored temperature.
    pub fn eval_options(&self) -> ForwardOptions<'static> {
        ForwardOptions { tau: self.config.eval_tau, ..ForwardOptions::eval() }
    }

    /// Eval-mode logits without gradients.
    pub fn predict_logits(&self, batch: &GraphBatch) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let pv = self.bind(&mut tape, false);
        let out = self.forward(&mut tape, &pv, batch, self.eval_options())?;
        Ok(tape.value(out.logits).clone())
    }

    /// Class probabilities (graph tasks) or sigmoid scores (multilabel, node).
    pub fn predict_scores(&self, batch: &GraphBatch) -> Result<Tensor, ModelError> {
        Ok(task_scores(self.config.task, &self.predict_logits(batch)?))
    }

    /// Folds training-mode statistics into the running buffers.
    pub fn update_running_stats(&mut self, stats: &[(String, BatchStats)], momentum: f64) {
        for (name, s) in stats {
            if let Some(id) = self.buffers.id_of(&format!("{name}.running_mean")) {
                for (r, &m) in self.buffers.get_mut(id).data_mut().iter_mut().zip(&s.mean) {
                    *r = (1.0 - momentum) * *r + momentum * m;
                }
            }
            if let Some(id) = self.buffers.id_of(&format!("{name}.running_var")) {
                for (r, &v) in self.buffers.get_mut(id).data_mut().iter_mut().zip(&s.var) {
                    *r = (1.0 - momentum) * *r + momentum * v;
                }
            }
        }
    }

    pub fn meta_json(&self) -> String {
        serde_json::to_string(&self.config).expect("config serializes")
    }

    pub fn from_checkpoint(ck: &crate::diff::Checkpoint) -> Result<Model, ModelError> {
        let config: ModelConfig =
            serde_json::from_str(&ck.meta).map_err(|e| ModelError::Config(format!("checkpoint metadata: {e}")))?;
        let mut m = Model::new(config, 0)?;
        m.params.load_from(&ck.params).map_err(ModelError::Config)?;
        m.buffers.load_from(&ck.buffers).map_err(ModelError::Config)?;
        Ok(m)
    }

    pub fn to_checkpoint(&self) -> crate::diff::Checkpoint {
        crate::diff::Checkpoint {
            meta: self.meta_json(),
            params: self.params.clone(),
            buffers: self.buffers.clone(),
            optimizer: None,
        }
    }
}

/// Row-wise softmax for graph classification, elementwise sigmoid for
/// multilabel and node heads, identity for regression.
pub fn task_scores(task: TaskKind, logits: &Tensor) -> Tensor {
    match task {
        TaskKind::Graph => {
            let mut out = logits.clone();
            for r in 0..logits.rows() {
                crate::diff::softmax_into(logits.row(r), out.row_mut(r));
            }
            out
        }
        TaskKind::Multilabel | TaskKind::Node => logits.map(crate::diff::sigmoid),
        TaskKind::Regression => logits.clone(),
    }
}

#[cfg(test)]
mod tests;
