//! Training loop: focal loss, augmentation, temperature annealing, early
//! stopping and softmax-averaged seed ensembles.

mod loss;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::diff::{adamw_step, clip_grad_norm, lr_schedule, stream_rng, AdamW, DiffError, OptimizerState, StreamRng, Tape, Tensor, Var};
use crate::evaluation::{accuracy, auroc, fmax};
use crate::graph_builder::ContactGraph;
use crate::models::{task_scores, ForwardOptions, GraphBatch, Model, ModelError, TaskKind, BN_MOMENTUM};
use crate::protein_io::Label;

pub use loss::{binary_logits, class_weights, focal_loss, mse, multilabel_bce};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training configuration: {0}")]
    Config(String),
    #[error("training data: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numeric(#[from] DiffError),
    /// Non-finite loss or gradients; carries the model before the failing step.
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String, last_good: Box<Model>, history: Box<TrainHistory> },
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub warmup: usize,
    /// Focal exponent γ.
    pub gamma: f64,
    /// Label smoothing η.
    pub label_smoothing: f64,
    pub edge_dropout: f64,
    pub feature_mask: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub clip_norm: f64,
    /// Focal loss for node tasks instead of class-weighted cross-entropy.
    pub node_focal: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            weight_decay: 1e-4,
            max_epochs: 200,
            patience: 30,
            warmup: 10,
            gamma: 1.0,
            label_smoothing: 0.05,
            edge_dropout: 0.05,
            feature_mask: 0.05,
            tau_start: 1.0,
            tau_end: 0.1,
            batch_size: 32,
            seed: 42,
            clip_norm: 1.0,
            node_focal: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        for (name, v) in [
            ("weight_decay", self.weight_decay),
            ("label_smoothing", self.label_smoothing),
            ("edge_dropout", self.edge_dropout),
            ("feature_mask", self.feature_mask),
        ] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} = {v} outside [0,1)"));
            }
        }
        if !(self.lr0 > 0.0 && self.lr0 < 1.0) {
            return bad(format!("lr0 = {} outside (0,1)", self.lr0));
        }
        if self.max_epochs == 0 || self.patience >= self.max_epochs {
            return bad(format!("patience {} must be below max_epochs {}", self.patience, self.max_epochs));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.tau_start > 0.0 && self.tau_end > 0.0) {
            return bad("temperatures must be positive".into());
        }
        if self.gamma < 0.0 || !(self.clip_norm > 0.0) {
            return bad("gamma must be non-negative and clip_norm positive".into());
        }
        Ok(())
    }

    fn optimizer(&self, lr: f64) -> AdamW {
        AdamW { lr, weight_decay: self.weight_decay, ..AdamW::default() }
    }
}

/// Linear interpolation from `start` at epoch 0 to `end` at epoch `total − 1`.
pub fn anneal_temperature(epoch: usize, total: usize, start: f64, end: f64) -> f64 {
    if total <= 1 {
        return start;
    }
    start + (end - start) * epoch.min(total - 1) as f64 / (total - 1) as f64
}

/// Training-time copy of `g` with undirected edges dropped with probability
/// `p_edge` and node-feature entries zeroed with probability `p_feat`.
pub fn augment(g: &ContactGraph, rng: &mut StreamRng, p_edge: f64, p_feat: f64) -> ContactGraph {
    let mut out = if p_edge > 0.0 {
        let keep: Vec<bool> = (0..g.num_undirected()).map(|_| rng.random::<f64>() >= p_edge).collect();
        g.with_edges(&keep)
    } else {
        g.clone()
    };
    if p_feat > 0.0 {
        for v in out.node_features.data_mut() {
            if rng.random::<f64>() < p_feat {
                *v = 0.0;
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: Option<f64>,
    pub lr: f64,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainHistory {
    /// Accuracy, AUROC, F_max or RMSE depending on the task.
    pub metric: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop: StopReason,
}

/// Targets in the layout each task's loss expects.
enum Targets {
    Classes(Vec<usize>),
    Dense(Tensor),
}

struct Objective {
    task: TaskKind,
    outputs: usize,
    alpha: Vec<f64>,
    gamma: f64,
    eta: f64,
}

fn graph_label<'g>(g: &'g ContactGraph) -> Result<&'g Label, TrainError> {
    g.graph_label.as_ref().ok_or_else(|| TrainError::Data(format!("{} has no label", g.protein_id)))
}

fn targets(task: TaskKind, outputs: usize, graphs: &[&ContactGraph]) -> Result<Targets, TrainError> {
    let wrong = |g: &ContactGraph| TrainError::Data(format!("{}: label does not fit a {task:?} task", g.protein_id));
    Ok(match task {
        TaskKind::Graph => Targets::Classes(
            graphs
                .iter()
                .map(|g| match graph_label(g)? {
                    Label::Class(c) if *c < outputs => Ok(*c),
                    _ => Err(wrong(g)),
                })
                .collect::<Result<_, _>>()?,
        ),
        TaskKind::Node => {
            let mut y = Vec::new();
            for g in graphs {
                let nl = g.node_labels.as_ref().ok_or_else(|| TrainError::Data(format!("{} has no residue labels", g.protein_id)))?;
                y.extend(nl.iter().map(|&v| usize::from(v > 0)));
            }
            Targets::Classes(y)
        }
        TaskKind::Multilabel => {
            let mut t = Tensor::zeros(graphs.len(), outputs);
            for (r, g) in graphs.iter().enumerate() {
                match graph_label(g)? {
                    Label::Multi(v) => {
                        for &c in v {
                            if c >= outputs {
                                return Err(wrong(g));
                            }
                            t.set(r, c, 1.0);
                        }
                    }
                    _ => return Err(wrong(g)),
                }
            }
            Targets::Dense(t)
        }
        TaskKind::Regression => {
            let v = graphs
                .iter()
                .map(|g| match graph_label(g)? {
                    Label::Scalar(x) => Ok(*x),
                    _ => Err(wrong(g)),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Targets::Dense(Tensor::col_vector(&v))
        }
    })
}

impl Objective {
    fn new(model: &Model, cfg: &TrainConfig, train: &[&ContactGraph]) -> Result<Objective, TrainError> {
        let task = model.config.task;
        let outputs = model.config.outputs;
        let (alpha, gamma, eta) = match (task, targets(task, outputs, train)?) {
            (TaskKind::Graph, Targets::Classes(y)) => (class_weights(&y, outputs)?, cfg.gamma, cfg.label_smoothing),
            (TaskKind::Node, Targets::Classes(y)) => {
                let a = class_weights(&y, 2)?;
                if cfg.node_focal {
                    (a, cfg.gamma, cfg.label_smoothing)
                } else {
                    (a, 0.0, 0.0)
                }
            }
            _ => (Vec::new(), 0.0, 0.0),
        };
        Ok(Objective { task, outputs, alpha, gamma, eta })
    }

    fn loss(&self, t: &mut Tape, logits: Var, graphs: &[&ContactGraph]) -> Result<Var, TrainError> {
        let y = targets(self.task, self.outputs, graphs)?;
        Ok(match (self.task, y) {
            (TaskKind::Graph, Targets::Classes(y)) => focal_loss(t, logits, &y, &self.alpha, self.gamma, self.eta)?,
            (TaskKind::Node, Targets::Classes(y)) => {
                let two = binary_logits(t, logits)?;
                focal_loss(t, two, &y, &self.alpha, self.gamma, self.eta)?
            }
            (TaskKind::Multilabel, Targets::Dense(y)) => multilabel_bce(t, logits, &y)?,
            (TaskKind::Regression, Targets::Dense(y)) => mse(t, logits, &y)?,
            _ => unreachable!("targets follow the task"),
        })
    }
}

fn metric_name(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Graph => "accuracy",
        TaskKind::Node => "auroc",
        TaskKind::Multilabel => "fmax",
        TaskKind::Regression => "rmse",
    }
}

/// Eval-mode loss and task metric over `graphs` at temperature `tau`.
fn evaluate(model: &Model, obj: &Objective, graphs: &[&ContactGraph], tau: f64, batch_size: usize) -> Result<(f64, Option<f64>), TrainError> {
    let mut total = 0.0;
    let mut weight = 0.0;
    let mut scores: Vec<Tensor> = Vec::new();
    for chunk in graphs.chunks(batch_size) {
        let batch = GraphBatch::new(chunk);
        let mut t = Tape::new();
        let pv = model.bind(&mut t, false);
        let out = model.forward(&mut t, &pv, &batch, ForwardOptions { tau, ..ForwardOptions::eval() })?;
        let l = obj.loss(&mut t, out.logits, chunk)?;
        let w = if obj.task == TaskKind::Node { batch.n_nodes() } else { chunk.len() } as f64;
        total += t.value(l).item() * w;
        weight += w;
        scores.push(task_scores(obj.task, t.value(out.logits)));
    }
    let rows: Vec<Vec<f64>> = scores.iter().flat_map(|s| (0..s.rows()).map(move |r| s.row(r).to_vec())).collect();
    let metric = match targets(obj.task, obj.outputs, graphs)? {
        Targets::Classes(y) if obj.task == TaskKind::Graph => {
            let pred: Vec<usize> = rows.iter().map(|r| crate::diff::argmax(r)).collect();
            Some(accuracy(&pred, &y))
        }
        Targets::Classes(y) => {
            let s: Vec<f64> = rows.iter().map(|r| r[0]).collect();
            let pos: Vec<bool> = y.iter().map(|&v| v == 1).collect();
            auroc(&s, &pos).ok()
        }
        Targets::Dense(y) if obj.task == TaskKind::Multilabel => {
            let truth: Vec<Vec<usize>> = (0..y.rows()).map(|r| (0..y.cols()).filter(|&c| y.get(r, c) > 0.5).collect()).collect();
            let s = Tensor::from_rows(&rows).map_err(TrainError::Numeric)?;
            fmax(&s, &truth).ok()
        }
        Targets::Dense(y) => {
            let se: f64 = rows.iter().zip(y.data()).map(|(r, v)| (r[0] - v).powi(2)).sum();
            Some((se / y.rows().max(1) as f64).sqrt())
        }
    };
    Ok((total / weight.max(1.0), metric))
}

/// Shuffled batches; a trailing single graph joins the previous batch so
/// batch norm always sees at least two rows.
fn batches(n: usize, size: usize, rng: &mut StreamRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("checked");
        out.last_mut().expect("checked").extend(last);
    }
    out
}

fn diverged(epoch: usize, reason: String, model: &Model, history: &TrainHistory) -> TrainError {
    TrainError::Diverged { epoch, reason, last_good: Box::new(model.clone()), history: Box::new(history.clone()) }
}

/// Trains `model` in place of a fresh copy and returns the best-validation
/// model with its history.
pub fn train(mut model: Model, train: &[ContactGraph], val: &[ContactGraph], cfg: &TrainConfig) -> Result<(Model, TrainHistory), TrainError> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::Data("training and validation splits must be non-empty".into()));
    }
    let train_refs: Vec<&ContactGraph> = train.iter().collect();
    let val_refs: Vec<&ContactGraph> = val.iter().collect();
    let obj = Objective::new(&model, cfg, &train_refs)?;
    targets(obj.task, obj.outputs, &val_refs)?;

    let mut state = OptimizerState::new(&model.params);
    let mut history = TrainHistory {
        metric: metric_name(obj.task).to_string(),
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stop: StopReason::MaxEpochs,
    };
    let mut best = model.clone();

    for epoch in 0..cfg.max_epochs {
        let lr = lr_schedule(epoch, cfg.max_epochs, cfg.warmup, cfg.lr0);
        let tau = anneal_temperature(epoch, cfg.max_epochs, cfg.tau_start, cfg.tau_end);
        let hp = cfg.optimizer(lr);
        let mut rng = stream_rng(cfg.seed, &[0x7a11, epoch as u64]);
        let mut epoch_loss = 0.0;
        let mut epoch_weight = 0.0;
        for idx in batches(train.len(), cfg.batch_size, &mut rng) {
            let augmented: Vec<ContactGraph> =
                idx.iter().map(|&i| augment(&train[i], &mut rng, cfg.edge_dropout, cfg.feature_mask)).collect();
            let refs: Vec<&ContactGraph> = augmented.iter().collect();
            let batch = GraphBatch::new(&refs);
            let mut t = Tape::new();
            let pv = model.bind(&mut t, true);
            let step = (|| {
                let out = model.forward(&mut t, &pv, &batch, ForwardOptions { train: true, tau, rng: Some(&mut rng), ..ForwardOptions::eval() })?;
                let l = obj.loss(&mut t, out.logits, &refs)?;
                Ok::<_, TrainError>((l, out.bn_stats))
            })();
            let (l, stats) = match step {
                Ok(v) => v,
                Err(TrainError::Model(ModelError::Numeric { stage, source })) => {
                    return Err(diverged(epoch, format!("{stage}: {source}"), &model, &history));
                }
                Err(e) => return Err(e),
            };
            let lv = t.value(l).item();
            if !lv.is_finite() {
                return Err(diverged(epoch, format!("loss is {lv}"), &model, &history));
            }
            let mut grads_all = t.backward(l)?;
            let mut grads: Vec<Tensor> = pv
                .iter()
                .zip(model.params.tensors())
                .map(|(&v, p)| grads_all.take(v).unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols())))
                .collect();
            clip_grad_norm(&mut grads, cfg.clip_norm);
            if let Err(e) = adamw_step(&mut model.params, &grads, &mut state, &hp) {
                return Err(diverged(epoch, e.to_string(), &model, &history));
            }
            model.update_running_stats(&stats, BN_MOMENTUM);
            let w = if obj.task == TaskKind::Node { batch.n_nodes() } else { refs.len() } as f64;
            epoch_loss += lv * w;
            epoch_weight += w;
        }
        let (val_loss, val_metric) = evaluate(&model, &obj, &val_refs, tau, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                reason: format!("validation loss is {val_loss}"),
                last_good: Box::new(best),
                history: Box::new(history),
            });
        }
        history.epochs.push(EpochRecord { epoch, train_loss: epoch_loss / epoch_weight, val_loss, val_metric, lr, tau });
        log::debug!("epoch {epoch}: train {:.4} val {val_loss:.4} {}={val_metric:?}", epoch_loss / epoch_weight, history.metric);
        if val_loss < history.best_val_loss {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best = model.clone();
            best.config.eval_tau = tau;
        } else if epoch - history.best_epoch >= cfg.patience {
            history.stop = StopReason::Patience;
            break;
        }
    }
    Ok((best, history))
}

/// Task scores averaged over models that share one architecture.
pub fn ensemble_predict(models: &[Model], batch: &GraphBatch) -> Result<Tensor, TrainError> {
    let first = models.first().ok_or_else(|| TrainError::Config("empty ensemble".into()))?;
    let mut mean: Option<Tensor> = None;
    for (k, m) in models.iter().enumerate() {
        let same = m.config.kind == first.config.kind
            && m.config.task == first.config.task
            && m.params.same_layout(&first.params)
            && m.buffers.same_layout(&first.buffers);
        if !same {
            return Err(TrainError::Config("ensemble members differ in architecture".into()));
        }
        let s = m.predict_scores(batch)?;
        // running mean: identical members leave the first output untouched
        mean = Some(match mean {
            Some(a) => a.zip_map(&s, |a, s| a + (s - a) / (k + 1) as f64),
            None => s,
        });
    }
    Ok(mean.expect("non-empty"))
}
