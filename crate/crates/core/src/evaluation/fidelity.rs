use std::collections::BTreeMap;

use super::EvalError;
use crate::diff::argmax;
use crate::graph_builder::ContactGraph;
use crate::models::{GraphBatch, Model};

/// Sparsity levels reported in fidelity tables.
pub const SPARSITY_LEVELS: [f64; 6] = [0.05, 0.1, 0.2, 0.3, 0.5, 0.7];

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FidelityRow {
    pub level: f64,
    pub fid_plus: f64,
    pub fid_minus: f64,
    pub graphs: usize,
}

/// Keep flags for the `k` highest-mask undirected edges (ties → lower index).
pub fn keep_top_count(mask: &[f64], k: usize) -> Vec<bool> {
    let mut keep = vec![false; mask.len()];
    for i in super::top_k_indices(mask, k) {
        keep[i] = true;
    }
    keep
}

/// Keep flags for the top `⌈s·U⌉` undirected edges.
pub fn keep_top_edges(mask: &[f64], s: f64) -> Result<Vec<bool>, EvalError> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(EvalError::Param(format!("sparsity level {s} outside (0,1]")));
    }
    let k = (s * mask.len() as f64).ceil() as usize;
    Ok(keep_top_count(mask, k.min(mask.len())))
}

/// Fraction of undirected edges with mask below 0.5.
pub fn sparsity(mask: &[f64]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    mask.iter().filter(|&&m| m < 0.5).count() as f64 / mask.len() as f64
}

fn predicted_class(model: &Model, g: &ContactGraph) -> Result<usize, EvalError> {
    let logits = model.predict_logits(&GraphBatch::single(g))?;
    Ok(argmax(logits.row(0)))
}

/// `(sufficient, broken)` indicators for one graph when its top `k` edges
/// are kept alone and removed, respectively.
pub fn fidelity_at_count(model: &Model, g: &ContactGraph, mask: &[f64], k: usize) -> Result<(bool, bool), EvalError> {
    if mask.len() != g.num_undirected() {
        return Err(EvalError::Param(format!("{}: {} mask values for {} edges", g.protein_id, mask.len(), g.num_undirected())));
    }
    let y = predicted_class(model, g)?;
    let keep = keep_top_count(mask, k);
    let complement: Vec<bool> = keep.iter().map(|&b| !b).collect();
    let kept = predicted_class(model, &g.with_edges(&keep))?;
    let removed = predicted_class(model, &g.with_edges(&complement))?;
    Ok((kept == y, removed != y))
}

pub fn fidelity_at(model: &Model, g: &ContactGraph, mask: &[f64], s: f64) -> Result<(bool, bool), EvalError> {
    let keep = keep_top_edges(mask, s)?;
    fidelity_at_count(model, g, mask, keep.iter().filter(|&&b| b).count())
}

/// Mean Fid⁺ and Fid⁻ over graphs at each level.
pub fn fidelity_suite(
    model: &Model,
    graphs: &[&ContactGraph],
    masks: &[Vec<f64>],
    levels: &[f64],
) -> Result<Vec<FidelityRow>, EvalError> {
    if graphs.len() != masks.len() {
        return Err(EvalError::Param("one mask per graph is required".into()));
    }
    let mut rows = Vec::new();
    for &s in levels {
        let (mut plus, mut minus) = (0usize, 0usize);
        for (g, m) in graphs.iter().zip(masks) {
            let (a, b) = fidelity_at(model, g, m, s)?;
            plus += a as usize;
            minus += b as usize;
        }
        let n = graphs.len().max(1) as f64;
        rows.push(FidelityRow { level: s, fid_plus: plus as f64 / n, fid_minus: minus as f64 / n, graphs: graphs.len() });
    }
    Ok(rows)
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(dot / (na * nb))
    }
}

/// Mean pairwise cosine similarity of feature masks within each class;
/// classes with fewer than two masks are omitted.
pub fn class_stability(feature_masks: &[Vec<f64>], classes: &[usize]) -> BTreeMap<usize, f64> {
    let mut by_class: BTreeMap<usize, Vec<&Vec<f64>>> = BTreeMap::new();
    for (f, &c) in feature_masks.iter().zip(classes) {
        by_class.entry(c).or_default().push(f);
    }
    let mut out = BTreeMap::new();
    for (c, fs) in by_class {
        let mut vals = Vec::new();
        for a in 0..fs.len() {
            for b in a + 1..fs.len() {
                if let Some(v) = cosine(fs[a], fs[b]) {
                    vals.push(v);
                }
            }
        }
        if !vals.is_empty() {
            out.insert(c, vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_edges_tie_break_low_index() {
        assert_eq!(keep_top_edges(&[0.5, 0.9, 0.5, 0.1], 0.5).unwrap(), vec![true, true, false, false]);
        assert_eq!(keep_top_edges(&[0.2; 3], 1.0).unwrap(), vec![true; 3]);
        assert!(keep_top_edges(&[0.2; 3], 0.0).is_err());
        assert!(keep_top_edges(&[0.2; 3], 1.5).is_err());
    }

    #[test]
    fn sparsity_counts_low_entries() {
        assert_eq!(sparsity(&[0.1, 0.6, 0.4, 0.5]), 0.5);
    }

    #[test]
    fn stability_of_identical_masks() {
        let s = class_stability(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![1.0, 0.0]], &[0, 0, 1]);
        assert!((s[&0] - 1.0).abs() < 1e-12);
        assert!(!s.contains_key(&1));
    }
}
