use statrs::distribution::{ContinuousCDF, StudentsT};

use super::EvalError;
use crate::diff::{argmax, Tensor};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Mean one-vs-rest AUROC over classes with both positives and negatives.
    pub macro_auroc: Option<f64>,
    pub mcc: f64,
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

/// `confusion[true][pred]`.
pub fn confusion(pred: &[usize], labels: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; classes]; classes];
    for (&p, &l) in pred.iter().zip(labels) {
        m[l][p] += 1;
    }
    m
}

/// Unweighted mean of per-class F1 over all `classes`; a class with no
/// true or predicted members contributes 0.
pub fn macro_f1(pred: &[usize], labels: &[usize], classes: usize) -> f64 {
    let m = confusion(pred, labels, classes);
    let mut total = 0.0;
    for c in 0..classes {
        let tp = m[c][c] as f64;
        let fp: f64 = (0..classes).filter(|&r| r != c).map(|r| m[r][c] as f64).sum();
        let fn_: f64 = (0..classes).filter(|&p| p != c).map(|p| m[c][p] as f64).sum();
        let denom = 2.0 * tp + fp + fn_;
        if denom > 0.0 {
            total += 2.0 * tp / denom;
        }
    }
    total / classes as f64
}

/// Multiclass Matthews correlation; 0 when either marginal is constant.
pub fn mcc(pred: &[usize], labels: &[usize], classes: usize) -> f64 {
    let m = confusion(pred, labels, classes);
    let s = labels.len() as f64;
    let c: f64 = (0..classes).map(|k| m[k][k] as f64).sum();
    let t: Vec<f64> = (0..classes).map(|k| m[k].iter().sum::<usize>() as f64).collect();
    let p: Vec<f64> = (0..classes).map(|k| (0..classes).map(|r| m[r][k]).sum::<usize>() as f64).collect();
    let tp: f64 = t.iter().zip(&p).map(|(a, b)| a * b).sum();
    let den = ((s * s - p.iter().map(|v| v * v).sum::<f64>()) * (s * s - t.iter().map(|v| v * v).sum::<f64>())).sqrt();
    if den == 0.0 {
        0.0
    } else {
        (c * s - tp) / den
    }
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Rank-sum AUROC with tie correction.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Result<f64, EvalError> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::Undefined("AUROC needs both positive and negative examples".into()));
    }
    let ranks = average_ranks(scores);
    let r_pos: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((r_pos - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Mean one-vs-rest AUROC; classes lacking positives or negatives are skipped.
pub fn macro_auroc(probs: &Tensor, labels: &[usize]) -> Result<f64, EvalError> {
    let mut vals = Vec::new();
    for c in 0..probs.cols() {
        let scores: Vec<f64> = (0..probs.rows()).map(|r| probs.get(r, c)).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        if let Ok(a) = auroc(&scores, &pos) {
            vals.push(a);
        }
    }
    if vals.is_empty() {
        return Err(EvalError::Undefined("macro-AUROC needs at least two classes present".into()));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn classification_metrics(probs: &Tensor, labels: &[usize]) -> ClassificationMetrics {
    let classes = probs.cols();
    let pred: Vec<usize> = (0..probs.rows()).map(|r| argmax(probs.row(r))).collect();
    ClassificationMetrics {
        accuracy: accuracy(&pred, labels),
        macro_f1: macro_f1(&pred, labels, classes),
        macro_auroc: macro_auroc(probs, labels).ok(),
        mcc: mcc(&pred, labels, classes),
    }
}

/// Threshold grid `0.00, 0.01, …, 1.00`.
pub fn fmax_thresholds() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// Protein-centric maximum F1 over the threshold grid.
///
/// A label is predicted at threshold `t` when its score is `≥ t` and
/// positive; a zero score is never a prediction. At each threshold precision
/// is averaged over proteins with at least one prediction and recall over all
/// proteins with a non-empty truth set.
pub fn fmax(scores: &Tensor, truth: &[Vec<usize>]) -> Result<f64, EvalError> {
    if truth.iter().all(Vec::is_empty) {
        return Err(EvalError::Undefined("F_max needs at least one annotated protein".into()));
    }
    let mut best: f64 = 0.0;
    for t in fmax_thresholds() {
        let (mut p_sum, mut p_n, mut r_sum, mut r_n) = (0.0, 0usize, 0.0, 0usize);
        for (i, tr) in truth.iter().enumerate() {
            let predicted: Vec<usize> = (0..scores.cols()).filter(|&c| scores.get(i, c) >= t && scores.get(i, c) > 0.0).collect();
            let hits = predicted.iter().filter(|c| tr.contains(c)).count() as f64;
            if !predicted.is_empty() {
                p_sum += hits / predicted.len() as f64;
                p_n += 1;
            }
            if !tr.is_empty() {
                r_sum += hits / tr.len() as f64;
                r_n += 1;
            }
        }
        if p_n == 0 || r_n == 0 {
            continue;
        }
        let (p, r) = (p_sum / p_n as f64, r_sum / r_n as f64);
        if p + r > 0.0 {
            best = best.max(2.0 * p * r / (p + r));
        }
    }
    Ok(best)
}

/// Precision among the top `fraction` of scores (at least one item; ties by index).
pub fn top_fraction_precision(scores: &[f64], positive: &[bool], fraction: f64) -> f64 {
    let k = ((fraction * scores.len() as f64).ceil() as usize).clamp(1, scores.len().max(1));
    let top = top_k_indices(scores, k);
    top.iter().filter(|&&i| positive[i]).count() as f64 / k as f64
}

/// Indices of the `k` largest values, ties resolved toward the lower index.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    pub p_value: f64,
    /// `"exact_permutation"` or `"t_approximation"`.
    pub method: String,
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

/// Largest sample size that gets an exact permutation p-value.
pub const SPEARMAN_EXACT_MAX_N: usize = 10;

/// Spearman rank correlation with a two-sided p-value.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<SpearmanResult, EvalError> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(EvalError::Param("spearman needs two equal-length samples of size ≥ 3".into()));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let rho = pearson(&rx, &ry).ok_or_else(|| EvalError::Undefined("zero rank variance".into()))?;
    let n = x.len();
    if n <= SPEARMAN_EXACT_MAX_N {
        let mut perm = ry.clone();
        let mut extreme = 0u64;
        let mut total = 0u64;
        let tol = 1e-12;
        heap_permutations(&mut perm, &mut |p| {
            total += 1;
            if let Some(r) = pearson(&rx, p) {
                if r.abs() >= rho.abs() - tol {
                    extreme += 1;
                }
            }
        });
        return Ok(SpearmanResult { rho, p_value: extreme as f64 / total as f64, method: "exact_permutation".into() });
    }
    let df = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok(SpearmanResult { rho, p_value, method: "t_approximation".into() })
}

/// Visits every permutation of `a` (Heap's algorithm, iterative).
pub fn heap_permutations(a: &mut [f64], visit: &mut impl FnMut(&[f64])) {
    let n = a.len();
    let mut c = vec![0usize; n];
    visit(a);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            visit(a);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let probs = Tensor::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8], vec![0.7, 0.3]]).unwrap();
        let m = classification_metrics(&probs, &[0, 1, 0]);
        assert_eq!((m.accuracy, m.macro_f1, m.macro_auroc, m.mcc), (1.0, 1.0, Some(1.0), 1.0));
    }

    #[test]
    fn constant_scores_auroc_half() {
        assert_eq!(auroc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn hand_auroc() {
        assert_eq!(auroc(&[0.9, 0.4, 0.6], &[true, false, true]).unwrap(), 1.0);
    }

    #[test]
    fn fmax_extremes() {
        let truth = vec![vec![0, 2], vec![1]];
        let ind = Tensor::from_rows(&[vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(fmax(&ind, &truth).unwrap(), 1.0);
        assert_eq!(fmax(&Tensor::zeros(2, 3), &truth).unwrap(), 0.0);
        assert!(fmax(&ind, &[vec![], vec![]]).is_err());
    }

    #[test]
    fn spearman_orderings() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = spearman(&x, &[2.0, 4.0, 6.0, 8.0, 10.0]).unwrap();
        assert!((r.rho - 1.0).abs() < 1e-12);
        assert!((r.p_value - 2.0 / 120.0).abs() < 1e-12);
        let r = spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap();
        assert!((r.rho + 1.0).abs() < 1e-12);
        assert!(spearman(&x, &[1.0; 5]).is_err());
    }

    #[test]
    fn mcc_bounds_and_f1_absent_class() {
        assert_eq!(mcc(&[0, 1, 0, 1], &[1, 0, 1, 0], 2), -1.0);
        // class 2 never appears: contributes 0 to the macro average
        assert!((macro_f1(&[0, 1], &[0, 1], 3) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn heap_visits_all() {
        let mut a = [1.0, 2.0, 3.0, 4.0];
        let mut n = 0;
        heap_permutations(&mut a, &mut |_| n += 1);
        assert_eq!(n, 24);
    }
}
