use super::{DiffError, ParamStore, Tensor};

/// AdamW hyperparameters (decoupled weight decay).
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// First and second moment estimates, aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        Self { step: 0, m: zeros.clone(), v: zeros }
    }
}

/// One AdamW update: `p ← p − lr·(m̂/(√v̂+eps) + wd·p)`.
///
/// Nothing is modified when any gradient is non-finite.
pub fn adamw_step(
    params: &mut ParamStore,
    grads: &[Tensor],
    state: &mut OptimizerState,
    hp: &AdamW,
) -> Result<(), DiffError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(DiffError::Shape(format!(
            "{} gradients / {} moments for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params.tensors()[i].shape() {
            return Err(DiffError::Shape(format!("gradient for {} has shape {:?}", params.name(i), g.shape())));
        }
        if !g.is_finite() {
            return Err(DiffError::NonFiniteGrad { name: params.name(i).to_string() });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let p = params.tensor_mut_at(i).data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for k in 0..p.len() {
            let gk = g.data()[k];
            m[k] = hp.beta1 * m[k] + (1.0 - hp.beta1) * gk;
            v[k] = hp.beta2 * v[k] + (1.0 - hp.beta2) * gk * gk;
            let mh = m[k] / bc1;
            let vh = v[k] / bc2;
            p[k] -= hp.lr * (mh / (vh.sqrt() + hp.eps) + hp.weight_decay * p[k]);
        }
    }
    Ok(())
}

/// Linear warmup to `lr0` over `warmup` epochs, then cosine decay to zero
/// over the remaining epochs.
pub fn lr_schedule(epoch: usize, total_epochs: usize, warmup: usize, lr0: f64) -> f64 {
    if epoch < warmup {
        return lr0 * (epoch + 1) as f64 / warmup as f64;
    }
    let remaining = total_epochs.saturating_sub(warmup).max(1);
    let progress = (epoch - warmup) as f64 / remaining as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
}

/// Rescales all gradients together so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::default();
        s.add("p", Tensor::row_vector(values));
        s
    }

    #[test]
    fn decay_only_shrinks_by_lr_times_wd() {
        let mut p = store(&[1.0, -2.0]);
        let mut st = OptimizerState::new(&p);
        let hp = AdamW { lr: 1e-3, weight_decay: 0.1, ..AdamW::default() };
        adamw_step(&mut p, &[Tensor::zeros(1, 2)], &mut st, &hp).unwrap();
        let got = p.tensors()[0].data();
        assert!((got[0] - (1.0 - 1e-4)).abs() < 1e-15);
        assert!((got[1] + 2.0 * (1.0 - 1e-4)).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        // t=1: m̂ = g, v̂ = g², so the step is lr·g/(|g|+eps).
        let mut p = store(&[0.5, 0.5, 0.5]);
        let mut st = OptimizerState::new(&p);
        let hp = AdamW { weight_decay: 0.0, ..AdamW::default() };
        let g = Tensor::row_vector(&[3.0, -0.25, 1e-3]);
        adamw_step(&mut p, &[g.clone()], &mut st, &hp).unwrap();
        for k in 0..3 {
            let gk = g.data()[k];
            let expected = 0.5 - 1e-3 * gk / (gk.abs() + 1e-8);
            assert!((p.tensors()[0].data()[k] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut p = store(&[0.3, 0.7]);
        let mut st = OptimizerState::new(&p);
        let hp = AdamW { weight_decay: 0.0, ..AdamW::default() };
        adamw_step(&mut p, &[Tensor::zeros(1, 2)], &mut st, &hp).unwrap();
        assert_eq!(p.tensors()[0].data(), &[0.3, 0.7]);
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut p = store(&[0.3]);
        let mut st = OptimizerState::new(&p);
        let err = adamw_step(&mut p, &[Tensor::row_vector(&[f64::NAN])], &mut st, &AdamW::default());
        assert!(matches!(err, Err(DiffError::NonFiniteGrad { .. })));
        assert_eq!(p.tensors()[0].data(), &[0.3]);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn schedule_endpoints() {
        let lr0 = 1e-3;
        assert!((lr_schedule(0, 200, 10, lr0) - lr0 / 10.0).abs() < 1e-18);
        assert!((lr_schedule(9, 200, 10, lr0) - lr0).abs() < 1e-18);
        assert!((lr_schedule(10, 200, 10, lr0) - lr0).abs() < 1e-18);
        for total in [100, 150, 200] {
            assert!(lr_schedule(total - 1, total, 10, lr0) < lr0 * 1e-3);
        }
    }

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::row_vector(&[3.0, 4.0])];
        clip_grad_norm(&mut g, 1.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15 && (g[0].data()[1] - 0.8).abs() < 1e-15);
        let mut g = vec![Tensor::row_vector(&[0.3, 0.4])];
        clip_grad_norm(&mut g, 1.0);
        assert_eq!(g[0].data(), &[0.3, 0.4]);
        let mut g = vec![Tensor::zeros(1, 3)];
        clip_grad_norm(&mut g, 1.0);
        assert_eq!(g[0].data(), &[0.0; 3]);
    }
}
