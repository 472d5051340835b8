use super::{DiffError, Tape, Tensor, Var};

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// max over coordinates of `|g_ad − g_fd| / max(1, |g_fd|)`.
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Coordinates whose step had to shrink to stay off a ReLU or max kink.
    pub coords_refined: usize,
    /// Coordinates that sit on a kink even at the smallest step; not compared.
    pub coords_on_kink: usize,
}

/// Central finite differences vs. tape gradients for a scalar function of several inputs.
///
/// Each perturbed evaluation is compared against the kink signature of the
/// unperturbed one; if the step crosses a non-smooth point the step is
/// shrunk (down to `h·1e-3`) until both sides stay on the same piece.
pub fn grad_check_multi<F>(f: F, xs: &[Tensor], h: f64) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, DiffError>,
{
    let eval = |inputs: &[Tensor]| -> Result<(f64, u64), DiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape.value(out).item(), tape.kink_signature()))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let base_sig = tape.kink_signature();
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport::default();
    let mut inputs: Vec<Tensor> = xs.to_vec();
    for (t, &v) in vars.iter().enumerate() {
        let analytic = grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(xs[t].rows(), xs[t].cols()));
        for i in 0..xs[t].len() {
            let x0 = xs[t].data()[i];
            let mut step = h;
            let mut fd = None;
            while step >= h * 1e-3 {
                inputs[t].data_mut()[i] = x0 + step;
                let (fp, sp) = eval(&inputs)?;
                inputs[t].data_mut()[i] = x0 - step;
                let (fm, sm) = eval(&inputs)?;
                inputs[t].data_mut()[i] = x0;
                if sp == base_sig && sm == base_sig {
                    fd = Some((fp - fm) / (2.0 * step));
                    break;
                }
                step *= 0.1;
            }
            match fd {
                Some(g_fd) => {
                    if step < h {
                        report.coords_refined += 1;
                    }
                    let err = (analytic.data()[i] - g_fd).abs() / g_fd.abs().max(1.0);
                    report.max_rel_error = report.max_rel_error.max(err);
                    report.coords_checked += 1;
                }
                None => report.coords_on_kink += 1,
            }
        }
    }
    Ok(report)
}

/// Single-input form of [`grad_check_multi`].
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, DiffError>,
{
    grad_check_multi(|t, v| f(t, v[0]), std::slice::from_ref(x), h)
}
