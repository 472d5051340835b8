use super::TrainError;
use crate::diff::{DiffError, Tape, Tensor, Var};

/// Class-weighted focal loss with label smoothing, averaged over rows.
///
/// Row `r` contributes `−Σ_c α_c (1−p_c)^γ q̃_c log p_c` with
/// `p = softmax(logits_r)` and `q̃_c = 1−η` for the true class, `η/(C−1)` otherwise.
pub fn focal_loss(t: &mut Tape, logits: Var, labels: &[usize], alpha: &[f64], gamma: f64, eta: f64) -> Result<Var, DiffError> {
    let (g, c) = t.value(logits).shape();
    if labels.len() != g || alpha.len() != c {
        return Err(DiffError::Shape(format!("{g}×{c} logits with {} labels and {} weights", labels.len(), alpha.len())));
    }
    if c < 2 {
        return Err(DiffError::Param("focal loss needs at least two classes".into()));
    }
    if !(0.0..1.0).contains(&eta) || gamma < 0.0 || alpha.iter().any(|&a| !(a > 0.0)) {
        return Err(DiffError::Param(format!("focal loss parameters γ={gamma}, η={eta}")));
    }
    let mut q = Tensor::zeros(g, c);
    for (r, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(DiffError::Param(format!("label {y} outside {c} classes")));
        }
        for k in 0..c {
            let target = if k == y { 1.0 - eta } else { eta / (c - 1) as f64 };
            q.set(r, k, -alpha[k] * target / g as f64);
        }
    }
    let logp = t.log_softmax(logits)?;
    let mut term = logp;
    if gamma != 0.0 {
        let p = t.exp(logp)?;
        let one_minus = t.affine(p, -1.0, 1.0)?;
        // rounding can push 1 − p a hair below zero
        let one_minus = t.relu(one_minus)?;
        let w = t.powf(one_minus, gamma)?;
        term = t.mul(w, logp)?;
    }
    let q = t.constant(q);
    let weighted = t.mul(term, q)?;
    t.sum(weighted)
}

/// Two-column logits `[0 ‖ x]`, whose softmax is `(1−σ(x), σ(x))`.
pub fn binary_logits(t: &mut Tape, x: Var) -> Result<Var, DiffError> {
    let zero = t.constant(Tensor::zeros(t.value(x).rows(), 1));
    t.concat_cols(&[zero, x])
}

/// Mean binary cross-entropy over every entry of `logits`.
pub fn multilabel_bce(t: &mut Tape, logits: Var, targets: &Tensor) -> Result<Var, DiffError> {
    let (g, l) = t.value(logits).shape();
    if targets.shape() != (g, l) {
        return Err(DiffError::Shape("multilabel targets differ from logits".into()));
    }
    let mut total: Option<Var> = None;
    for c in 0..l {
        let col = t.slice_cols(logits, c, c + 1)?;
        let two = binary_logits(t, col)?;
        let labels: Vec<usize> = (0..g).map(|r| usize::from(targets.get(r, c) > 0.5)).collect();
        let loss = focal_loss(t, two, &labels, &[1.0, 1.0], 0.0, 0.0)?;
        total = Some(match total {
            Some(acc) => t.add(acc, loss)?,
            None => loss,
        });
    }
    let total = total.ok_or_else(|| DiffError::Shape("no labels".into()))?;
    t.scale(total, 1.0 / l as f64)
}

pub fn mse(t: &mut Tape, pred: Var, targets: &Tensor) -> Result<Var, DiffError> {
    if t.value(pred).shape() != targets.shape() {
        return Err(DiffError::Shape("regression targets differ from predictions".into()));
    }
    let y = t.constant(targets.clone());
    let d = t.sub(pred, y)?;
    let sq = t.mul(d, d)?;
    t.mean(sq)
}

/// Inverse-frequency weights scaled to mean 1.
pub fn class_weights(labels: &[usize], n_classes: usize) -> Result<Vec<f64>, TrainError> {
    let mut counts = vec![0usize; n_classes];
    for &y in labels {
        if y >= n_classes {
            return Err(TrainError::Config(format!("label {y} outside {n_classes} classes")));
        }
        counts[y] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(TrainError::Config(format!("class {c} has no training examples")));
    }
    let inv: Vec<f64> = counts.iter().map(|&n| labels.len() as f64 / n as f64).collect();
    let mean = inv.iter().sum::<f64>() / n_classes as f64;
    Ok(inv.iter().map(|w| w / mean).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn value(logits: &[Vec<f64>], y: &[usize], alpha: &[f64], gamma: f64, eta: f64) -> f64 {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_rows(logits).unwrap());
        let l = focal_loss(&mut t, x, y, alpha, gamma, eta).unwrap();
        t.value(l).item()
    }

    #[test]
    fn uniform_seven_classes() {
        let v = value(&[vec![0.3; 7]], &[2], &[1.0; 7], 0.0, 0.0);
        assert!((v - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gamma_shrinks_confident_loss() {
        let logits = [vec![4.0, 0.0, -1.0]];
        let l0 = value(&logits, &[0], &[1.0; 3], 0.0, 0.0);
        let l1 = value(&logits, &[0], &[1.0; 3], 1.0, 0.0);
        assert!(l1 <= l0 && l1 > 0.0);
        assert!(value(&[vec![60.0, 0.0, 0.0]], &[0], &[1.0; 3], 0.0, 0.0) < 1e-20);
    }

    #[test]
    fn smoothing_spreads_target() {
        // uniform prediction: loss is log C whatever the smoothing
        let v = value(&[vec![0.0; 4]], &[1], &[1.0; 4], 0.0, 0.3);
        assert!((v - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn weights_ratio() {
        let mut labels = vec![0; 90];
        labels.extend(vec![1; 10]);
        let a = class_weights(&labels, 2).unwrap();
        assert!((a[1] / a[0] - 9.0).abs() < 1e-12);
        assert!(((a[0] + a[1]) / 2.0 - 1.0).abs() < 1e-12);
        assert_eq!(class_weights(&[0, 1, 2, 0, 1, 2], 3).unwrap(), vec![1.0; 3]);
        let err = class_weights(&[0, 0, 2], 3).unwrap_err();
        assert!(err.to_string().contains("class 1"));
    }

    #[test]
    fn bce_matches_closed_form() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_rows(&[vec![0.5, -2.0], vec![3.0, 0.0]]).unwrap());
        let y = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let l = multilabel_bce(&mut t, x, &y).unwrap();
        let s = crate::diff::sigmoid;
        let want = -((s(0.5)).ln() + (1.0 - s(-2.0)).ln() + (1.0 - s(3.0)).ln() + s(0.0).ln()) / 4.0;
        assert!((t.value(l).item() - want).abs() < 1e-12);
    }
}
