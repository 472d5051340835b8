//! Post-hoc explanations: optimised soft edge/feature masks and integrated
//! gradients along a straight path from a baseline.

use std::io::{self, Write};

use thiserror::Error;

use crate::diff::{adamw_step, argmax, AdamW, DiffError, OptimizerState, ParamStore, Tape, Tensor, Var};
use crate::graph_builder::{ContactGraph, FeatureConfig};
use crate::models::{GraphBatch, Model, ModelError, TaskKind};
use crate::training::binary_logits;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("explainer configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numeric(#[from] DiffError),
    #[error("{protein_id}: non-finite objective at step {step}")]
    NonFinite { protein_id: String, step: usize, trace: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExplainerConfig {
    pub steps: usize,
    pub lr: f64,
    /// Weights of edge size, edge entropy, feature size and feature entropy.
    pub lambdas: [f64; 4],
    /// Starting logit of every mask entry.
    pub init_logit: f64,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        Self { steps: 300, lr: 1e-2, lambdas: [0.005, 0.1, 0.1, 0.1], init_logit: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExplanationMask {
    pub protein_id: String,
    /// One value per undirected edge.
    pub edge_mask: Vec<f64>,
    /// One value per node-feature dimension.
    pub feature_mask: Vec<f64>,
    pub target: usize,
    /// Probability of `target` on the unmasked graph.
    pub confidence: f64,
    pub trace: Vec<f64>,
}

fn graph_task(model: &Model) -> Result<(), ExplainError> {
    if model.config.task == TaskKind::Node {
        return Err(ExplainError::Config("explanations target graph-level outputs".into()));
    }
    Ok(())
}

/// Column `c` of each row of `logits`, as the scalar being explained.
fn target_output(t: &mut Tape, task: TaskKind, logits: Var, c: usize) -> Result<Var, DiffError> {
    let v = if task == TaskKind::Graph { t.log_softmax(logits)? } else { logits };
    let col = t.slice_cols(v, c, c + 1)?;
    t.sum(col)
}

/// Undirected index of every directed edge.
fn directed_to_undirected(g: &ContactGraph) -> Vec<usize> {
    (0..g.edges.len()).map(|e| e / 2).collect()
}

/// Eval-mode logits of `g` with messages scaled by `edge_mask` (both
/// directions) and feature columns scaled by `feature_mask`.
pub fn masked_logits(model: &Model, g: &ContactGraph, edge_mask: &[f64], feature_mask: &[f64]) -> Result<Tensor, ExplainError> {
    if edge_mask.len() != g.num_undirected() || feature_mask.len() != g.node_dim() {
        return Err(ExplainError::Config("mask sizes do not match the graph".into()));
    }
    let batch = GraphBatch::single(g);
    let mut t = Tape::new();
    let pv = model.bind(&mut t, false);
    let m = t.constant(Tensor::col_vector(edge_mask));
    let f = t.constant(Tensor::row_vector(feature_mask));
    let xc = t.constant(batch.x.clone());
    let x = t.mul(xc, f)?;
    let ew = if g.edges.is_empty() { None } else { Some(t.gather_rows(m, &directed_to_undirected(g))?) };
    let out = model.forward(&mut t, &pv, &batch, crate::models::ForwardOptions { x: Some(x), edge_weight: ew, ..model.eval_options() })?;
    Ok(t.value(out.logits).clone())
}

/// Mean binary entropy of `sigmoid(logits)`.
fn mean_entropy(t: &mut Tape, logits: Var, probs: Var) -> Result<Var, DiffError> {
    let two = binary_logits(t, logits)?;
    let logp = t.log_softmax(two)?;
    let log_off = t.slice_cols(logp, 0, 1)?;
    let log_on = t.slice_cols(logp, 1, 2)?;
    let off = t.affine(probs, -1.0, 1.0)?;
    let a = t.mul(probs, log_on)?;
    let b = t.mul(off, log_off)?;
    let s = t.add(a, b)?;
    let m = t.mean(s)?;
    t.scale(m, -1.0)
}

/// Optimises sigmoid-parameterised edge and feature masks that keep the
/// model's prediction while staying small and near-binary.
pub fn gnn_explain(model: &Model, g: &ContactGraph, cfg: &ExplainerConfig) -> Result<ExplanationMask, ExplainError> {
    graph_task(model)?;
    if !(cfg.lr > 0.0) || cfg.lambdas.iter().any(|&l| l < 0.0) {
        return Err(ExplainError::Config("learning rate must be positive and λ non-negative".into()));
    }
    let batch = GraphBatch::single(g);
    let base = model.predict_scores(&batch)?;
    let target = argmax(base.row(0));
    let confidence = base.get(0, target);
    let (u, d) = (g.num_undirected(), g.node_dim());
    let mut masks = ParamStore::default();
    let mid = masks.add("edge", Tensor::filled(u.max(1), 1, cfg.init_logit));
    let fid = masks.add("feature", Tensor::filled(1, d, cfg.init_logit));
    let mut state = OptimizerState::new(&masks);
    let hp = AdamW { lr: cfg.lr, weight_decay: 0.0, ..AdamW::default() };
    let d2u = directed_to_undirected(g);
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let objective = |masks: &ParamStore, grads: bool| -> Result<(f64, Vec<Tensor>), ExplainError> {
        let mut t = Tape::new();
        let pv = model.bind(&mut t, false);
        let ml = t.leaf(masks.get(mid).clone());
        let fl = t.leaf(masks.get(fid).clone());
        let m = t.sigmoid(ml)?;
        let f = t.sigmoid(fl)?;
        let xc = t.constant(batch.x.clone());
        let x = t.mul(xc, f)?;
        let ew = if u == 0 { None } else { Some(t.gather_rows(m, &d2u)?) };
        let out = model.forward(&mut t, &pv, &batch, crate::models::ForwardOptions { x: Some(x), edge_weight: ew, ..model.eval_options() })?;
        let fit = target_output(&mut t, model.config.task, out.logits, target)?;
        let mut total = t.scale(fit, -1.0)?;
        let [l1, l2, l3, l4] = cfg.lambdas;
        let mut terms = Vec::new();
        if u > 0 {
            let size = t.mean(m)?;
            terms.push((l1, size));
            terms.push((l2, mean_entropy(&mut t, ml, m)?));
        }
        let fsize = t.mean(f)?;
        terms.push((l3, fsize));
        terms.push((l4, mean_entropy(&mut t, fl, f)?));
        for (l, term) in terms {
            if l != 0.0 {
                let s = t.scale(term, l)?;
                total = t.add(total, s)?;
            }
        }
        let value = t.value(total).item();
        if !grads || !value.is_finite() {
            return Ok((value, Vec::new()));
        }
        let mut gr = t.backward(total)?;
        let zero = |id| Tensor::zeros(masks.get(id).rows(), masks.get(id).cols());
        Ok((value, vec![gr.take(ml).unwrap_or_else(|| zero(mid)), gr.take(fl).unwrap_or_else(|| zero(fid))]))
    };
    for step in 0..cfg.steps {
        let (value, grads) = objective(&masks, true)?;
        trace.push(value);
        if !value.is_finite() {
            return Err(ExplainError::NonFinite { protein_id: g.protein_id.clone(), step, trace });
        }
        if adamw_step(&mut masks, &grads, &mut state, &hp).is_err() {
            return Err(ExplainError::NonFinite { protein_id: g.protein_id.clone(), step, trace });
        }
    }
    let (last, _) = objective(&masks, false)?;
    trace.push(last);
    if !last.is_finite() {
        return Err(ExplainError::NonFinite { protein_id: g.protein_id.clone(), step: cfg.steps, trace });
    }
    let sig = |v: &f64| crate::diff::sigmoid(*v);
    Ok(ExplanationMask {
        protein_id: g.protein_id.clone(),
        edge_mask: masks.get(mid).data()[..u].iter().map(sig).collect(),
        feature_mask: masks.get(fid).data().iter().map(sig).collect(),
        target,
        confidence,
        trace,
    })
}

/// Per-residue score: the largest mask value over incident edges, divided
/// by the protein maximum. Isolated residues score 0.
pub fn node_importance(edge_mask: &[f64], g: &ContactGraph) -> Vec<f64> {
    let mut s = vec![0.0f64; g.n_nodes];
    for (u, &m) in edge_mask.iter().enumerate() {
        let (i, j) = g.undirected(u);
        s[i] = s[i].max(m);
        s[j] = s[j].max(m);
    }
    let top = s.iter().copied().fold(0.0, f64::max);
    if top > 0.0 {
        for v in &mut s {
            *v /= top;
        }
    }
    s
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FeatureGroup {
    pub block: String,
    pub dims: usize,
    pub total: f64,
    pub mean: f64,
}

/// Feature-mask mass per node-feature block, largest total first.
pub fn feature_groups(feature_mask: &[f64], cfg: &FeatureConfig) -> Vec<FeatureGroup> {
    let mut out: Vec<FeatureGroup> = cfg
        .layout()
        .into_iter()
        .filter(|&(_, s, e)| e <= feature_mask.len() && e > s)
        .map(|(b, s, e)| {
            let total: f64 = feature_mask[s..e].iter().map(|v| v.abs()).sum();
            FeatureGroup { block: b.name().to_string(), dims: e - s, total, mean: total / (e - s) as f64 }
        })
        .collect();
    out.sort_by(|a, b| b.total.total_cmp(&a.total));
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attribution {
    pub protein_id: String,
    pub target: usize,
    /// `N × d` attributions.
    pub values: Tensor,
    pub f_input: f64,
    pub f_baseline: f64,
    pub steps: usize,
}

impl Attribution {
    /// `|Σ IG − (f(x) − f(x'))|`.
    pub fn completeness_gap(&self) -> f64 {
        (self.values.sum() - (self.f_input - self.f_baseline)).abs()
    }

    /// Attribution summed over the features of each residue.
    pub fn per_residue(&self) -> Vec<f64> {
        (0..self.values.rows()).map(|r| self.values.row(r).iter().sum()).collect()
    }
}

/// Explained output and its input gradient at features `x`.
fn output_and_grad(model: &Model, batch: &GraphBatch, x: &Tensor, target: usize) -> Result<(f64, Tensor), ExplainError> {
    let mut t = Tape::new();
    let pv = model.bind(&mut t, false);
    let xv = t.leaf(x.clone());
    let out = model.forward(&mut t, &pv, batch, crate::models::ForwardOptions { x: Some(xv), ..model.eval_options() })?;
    let f = target_logit(&mut t, out.logits, target)?;
    let mut g = t.backward(f)?;
    let grad = g.take(xv).unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols()));
    Ok((t.value(f).item(), grad))
}

fn target_logit(t: &mut Tape, logits: Var, c: usize) -> Result<Var, DiffError> {
    let col = t.slice_cols(logits, c, c + 1)?;
    t.sum(col)
}

/// Trapezoidal integrated gradients of a scalar function along the straight
/// path from `x0` to `x`; `eval` returns the value and gradient at a point.
/// Returns the attributions with `f(x)` and `f(x0)`.
pub fn integrate_path(
    x: &Tensor,
    x0: &Tensor,
    steps: usize,
    mut eval: impl FnMut(&Tensor) -> Result<(f64, Tensor), ExplainError>,
) -> Result<(Tensor, f64, f64), ExplainError> {
    if steps == 0 {
        return Err(ExplainError::Config("integrated gradients needs at least one step".into()));
    }
    if x0.shape() != x.shape() {
        return Err(ExplainError::Config(format!("baseline shape {:?} differs from features {:?}", x0.shape(), x.shape())));
    }
    let diff = x.zip_map(x0, |a, b| a - b);
    let mut avg = Tensor::zeros(x.rows(), x.cols());
    let (mut f_input, mut f_baseline) = (0.0, 0.0);
    for k in 0..=steps {
        let alpha = k as f64 / steps as f64;
        let xa = x0.zip_map(&diff, |b, dv| b + alpha * dv);
        let (f, grad) = eval(&xa)?;
        if k == 0 {
            f_baseline = f;
        }
        if k == steps {
            f_input = f;
        }
        let w = (if k == 0 || k == steps { 0.5 } else { 1.0 }) / steps as f64;
        for (a, gv) in avg.data_mut().iter_mut().zip(grad.data()) {
            *a += w * gv;
        }
    }
    Ok((diff.zip_map(&avg, |dv, a| dv * a), f_input, f_baseline))
}

/// Integrated gradients of the predicted logit over `steps` intervals.
/// The baseline defaults to all zeros.
pub fn integrated_gradients(model: &Model, g: &ContactGraph, baseline: Option<&Tensor>, steps: usize) -> Result<Attribution, ExplainError> {
    graph_task(model)?;
    let batch = GraphBatch::single(g);
    let zeros = Tensor::zeros(batch.x.rows(), batch.x.cols());
    let x0 = baseline.unwrap_or(&zeros);
    let target = argmax(model.predict_logits(&batch)?.row(0));
    let (values, f_input, f_baseline) = integrate_path(&batch.x, x0, steps, |xa| output_and_grad(model, &batch, xa, target))?;
    Ok(Attribution { protein_id: g.protein_id.clone(), target, values, f_input, f_baseline, steps })
}

pub fn write_edge_masks<W: Write>(w: &mut W, items: &[(&ContactGraph, &ExplanationMask)]) -> io::Result<()> {
    writeln!(w, "protein_id,edge_i,edge_j,M")?;
    for (g, m) in items {
        for (u, v) in m.edge_mask.iter().enumerate() {
            let (i, j) = g.undirected(u);
            writeln!(w, "{},{i},{j},{v}", m.protein_id)?;
        }
    }
    Ok(())
}

pub fn write_feature_masks<W: Write>(w: &mut W, masks: &[&ExplanationMask]) -> io::Result<()> {
    writeln!(w, "protein_id,feature_index,F")?;
    for m in masks {
        for (k, v) in m.feature_mask.iter().enumerate() {
            writeln!(w, "{},{k},{v}", m.protein_id)?;
        }
    }
    Ok(())
}

/// Non-zero attributions as `protein_id,residue,feature_index,IG`.
pub fn write_attributions<W: Write>(w: &mut W, items: &[&Attribution]) -> io::Result<()> {
    writeln!(w, "protein_id,residue,feature_index,IG")?;
    for a in items {
        for r in 0..a.values.rows() {
            for (k, v) in a.values.row(r).iter().enumerate() {
                if *v != 0.0 {
                    writeln!(w, "{},{r},{k},{v}", a.protein_id)?;
                }
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExplanationSummary {
    pub protein_id: String,
    pub target: usize,
    pub confidence: f64,
    pub final_objective: f64,
    pub objective_trace: Vec<f64>,
    pub mean_edge_mask: f64,
    pub sparsity: f64,
    pub node_aggregation: String,
    pub lambdas: [f64; 4],
    pub feature_groups: Vec<FeatureGroup>,
}

pub fn summarize(m: &ExplanationMask, cfg: &ExplainerConfig, features: &FeatureConfig) -> ExplanationSummary {
    let mean = if m.edge_mask.is_empty() { 0.0 } else { m.edge_mask.iter().sum::<f64>() / m.edge_mask.len() as f64 };
    ExplanationSummary {
        protein_id: m.protein_id.clone(),
        target: m.target,
        confidence: m.confidence,
        final_objective: m.trace.last().copied().unwrap_or(f64::NAN),
        objective_trace: m.trace.clone(),
        mean_edge_mask: mean,
        sparsity: crate::evaluation::sparsity(&m.edge_mask),
        node_aggregation: "incident_edge_max".into(),
        lambdas: cfg.lambdas,
        feature_groups: feature_groups(&m.feature_mask, features),
    }
}

#[cfg(test)]
mod tests;
