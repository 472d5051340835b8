use std::collections::BTreeMap;

use softblob::diff::Tensor;
use softblob::evaluation::{auroc, classification_metrics, fmax, mcc, top_fraction_precision};
use softblob::graph_builder::ContactGraph;
use softblob::models::{GraphBatch, Model, TaskKind};
use softblob::protein_io::Label;
use softblob::training::ensemble_predict;

use crate::error::{CliError, CliResult};

pub mod bioeval;
pub mod blobs;
pub mod eval;
pub mod explain;
pub mod featurize;
pub mod report;
pub mod synth;
pub mod train;

const PREDICT_CHUNK: usize = 64;

/// Output width implied by the labels of `graphs`.
pub fn infer_outputs(task: TaskKind, graphs: &[ContactGraph]) -> CliResult<usize> {
    match task {
        TaskKind::Regression | TaskKind::Node => Ok(1),
        TaskKind::Graph | TaskKind::Multilabel => {
            let mut top = None;
            for g in graphs {
                let m = match &g.graph_label {
                    Some(Label::Class(c)) => Some(*c),
                    Some(Label::Multi(v)) => v.iter().copied().max(),
                    _ => None,
                };
                top = top.max(m);
            }
            top.map(|t| t + 1).ok_or_else(|| CliError::Config("no class labels found; set labels and label_kind".into()))
        }
    }
}

/// Scores of `models` (one model, or their average) on `graphs`, stacked in order.
pub fn predict(models: &[Model], graphs: &[&ContactGraph]) -> CliResult<Tensor> {
    let mut rows: Vec<f64> = Vec::new();
    let mut cols = 0;
    for chunk in graphs.chunks(PREDICT_CHUNK) {
        let batch = GraphBatch::new(chunk);
        let s = ensemble_predict(models, &batch)?;
        cols = s.cols();
        rows.extend_from_slice(s.data());
    }
    Ok(Tensor::from_vec(rows.len() / cols.max(1), cols, rows).expect("stacked rows"))
}

fn class_of(g: &ContactGraph) -> CliResult<usize> {
    match g.graph_label {
        Some(Label::Class(c)) => Ok(c),
        _ => Err(CliError::Data(format!("{} has no class label", g.protein_id))),
    }
}

/// Task metrics of stacked `scores` against the labels of `graphs`.
pub fn task_metrics(task: TaskKind, scores: &Tensor, graphs: &[&ContactGraph]) -> CliResult<BTreeMap<String, f64>> {
    let mut m = BTreeMap::new();
    match task {
        TaskKind::Graph => {
            let labels = graphs.iter().map(|g| class_of(g)).collect::<CliResult<Vec<_>>>()?;
            let c = classification_metrics(scores, &labels);
            m.insert("accuracy".into(), c.accuracy);
            m.insert("macro_f1".into(), c.macro_f1);
            m.insert("mcc".into(), c.mcc);
            if let Some(a) = c.macro_auroc {
                m.insert("macro_auroc".into(), a);
            }
        }
        TaskKind::Multilabel => {
            let truth = graphs
                .iter()
                .map(|g| match &g.graph_label {
                    Some(Label::Multi(v)) => Ok(v.clone()),
                    _ => Err(CliError::Data(format!("{} has no label set", g.protein_id))),
                })
                .collect::<CliResult<Vec<_>>>()?;
            m.insert("fmax".into(), fmax(scores, &truth)?);
        }
        TaskKind::Regression => {
            let mut se = 0.0;
            let mut ae = 0.0;
            for (r, g) in graphs.iter().enumerate() {
                let Some(Label::Scalar(y)) = g.graph_label else {
                    return Err(CliError::Data(format!("{} has no scalar target", g.protein_id)));
                };
                let d = scores.get(r, 0) - y;
                se += d * d;
                ae += d.abs();
            }
            let n = graphs.len().max(1) as f64;
            m.insert("rmse".into(), (se / n).sqrt());
            m.insert("mae".into(), ae / n);
        }
        TaskKind::Node => {
            let (mut all, mut pos, mut precisions) = (Vec::new(), Vec::new(), Vec::new());
            let mut offset = 0;
            for g in graphs {
                let labels = g.node_labels.as_ref().ok_or_else(|| CliError::Data(format!("{} has no residue labels", g.protein_id)))?;
                let s: Vec<f64> = (offset..offset + g.n_nodes).map(|i| scores.get(i, 0)).collect();
                let p: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
                offset += g.n_nodes;
                if !s.is_empty() {
                    precisions.push(top_fraction_precision(&s, &p, 0.1));
                }
                all.extend(s);
                pos.extend(p);
            }
            if pos.iter().any(|&p| p) && pos.iter().any(|&p| !p) {
                m.insert("auroc".into(), auroc(&all, &pos)?);
            }
            let pred: Vec<usize> = all.iter().map(|&s| usize::from(s >= 0.5)).collect();
            let truth: Vec<usize> = pos.iter().map(|&p| usize::from(p)).collect();
            m.insert("mcc".into(), mcc(&pred, &truth, 2));
            m.insert("top10_precision".into(), precisions.iter().sum::<f64>() / precisions.len().max(1) as f64);
        }
    }
    Ok(m)
}

pub fn select<'a>(graphs: &'a [ContactGraph], idx: &[usize]) -> Vec<&'a ContactGraph> {
    idx.iter().map(|&i| &graphs[i]).collect()
}
