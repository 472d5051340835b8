//! Browser bindings for three interactive views of the model: Gumbel-softmax
//! blob assignment under a temperature, ε-contact graphs of small Cα traces,
//! and the focal loss as a function of the true-class probability.
//!
//! Build with `wasm-pack build crates/web --target web --out-dir www/pkg`
//! and serve `crates/web/www/`.

use rand::Rng;
use softblob::diff::{softmax, stream_rng, Tape, Tensor};
use softblob::graph_builder::contact_pairs;
use softblob::models::gumbel_noise;
use softblob::synthetic::{planted_graph, Motif, MotifDatasetConfig};
use softblob::training::{anneal_temperature, focal_loss};
use wasm_bindgen::prelude::*;

/// Soft assignment of `n` residues to `k` blobs at temperature `tau`, row-major.
///
/// Logits and noise are fixed by `seed`, so moving `tau` alone changes the output.
#[wasm_bindgen]
pub fn blob_assignment(n: usize, k: usize, tau: f64, seed: u64, noise: bool) -> Result<Vec<f64>, String> {
    if n == 0 || k == 0 {
        return Err("need at least one residue and one blob".into());
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(format!("temperature must be positive, got {tau}"));
    }
    let mut rng = stream_rng(seed, &[0]);
    let logits: Vec<f64> = (0..n * k).map(|_| rng.random_range(-2.0..2.0)).collect();
    let g = if noise { gumbel_noise(&mut stream_rng(seed, &[1]), n, k) } else { Tensor::zeros(n, k) };
    let mut out = Vec::with_capacity(n * k);
    for r in 0..n {
        let row: Vec<f64> = (0..k).map(|c| (logits[r * k + c] + g.get(r, c)) / tau).collect();
        out.extend(softmax(&row));
    }
    Ok(out)
}

/// Mean row maximum and mean row entropy (nats) of a row-major `k`-column assignment.
#[wasm_bindgen]
pub fn assignment_summary(a: &[f64], k: usize) -> Vec<f64> {
    let rows: Vec<&[f64]> = a.chunks(k.max(1)).collect();
    let n = rows.len().max(1) as f64;
    let max = rows.iter().map(|r| r.iter().copied().fold(0.0, f64::max)).sum::<f64>() / n;
    let ent = rows.iter().map(|r| -r.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()).sum::<f64>() / n;
    vec![max, ent]
}

/// Linear temperature schedule over `epochs`.
#[wasm_bindgen]
pub fn tau_schedule(epochs: usize, start: f64, end: f64) -> Vec<f64> {
    (0..epochs).map(|e| anneal_temperature(e, epochs, start, end)).collect()
}

fn trace(shape: &str, n: usize, seed: u64) -> Result<Vec<[f64; 3]>, String> {
    let n = n.max(2);
    match shape {
        // ideal α-helix: 1.5 Å rise and 100° turn per residue on a 2.3 Å radius
        "helix" => Ok((0..n)
            .map(|i| {
                let t = (i as f64 * 100.0).to_radians();
                [2.3 * t.cos(), 2.3 * t.sin(), 1.5 * i as f64]
            })
            .collect()),
        // two antiparallel strands joined by a turn
        "hairpin" => {
            let half = n.div_ceil(2);
            Ok((0..n)
                .map(|i| if i < half { [0.0, 0.0, 3.3 * i as f64] } else { [4.8, 0.0, 3.3 * (n - 1 - i) as f64] })
                .collect())
        }
        "ring" | "star" | "prism" | "clique" => {
            let motif = Motif::ALL[["ring", "star", "prism", "clique"].iter().position(|&m| m == shape).expect("matched")];
            let mut cfg = MotifDatasetConfig::default();
            let background = n.saturating_sub(6 + cfg.bridges).max(1);
            (cfg.min_background, cfg.max_background) = (background, background);
            let p = planted_graph(motif, &cfg, &mut stream_rng(seed, &[2]), "demo").map_err(|e| e.to_string())?;
            Ok(p.graph.coords)
        }
        other => Err(format!("unknown shape {other:?}")),
    }
}

/// Cα trace of about `n` residues and its ε-contacts as JSON: `{coords, pairs, long_range, mean_degree}`.
/// Contacts with `|i − j| ≥ seq_sep` count as long range.
#[wasm_bindgen]
pub fn contact_graph(shape: &str, n: usize, epsilon: f64, seq_sep: usize, seed: u64) -> Result<String, String> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(format!("ε must be positive, got {epsilon}"));
    }
    let coords = trace(shape, n, seed)?;
    let pairs = contact_pairs(&coords, epsilon);
    let long_range = pairs.iter().filter(|(i, j)| j - i >= seq_sep).count();
    let v = serde_json::json!({
        "coords": coords,
        "pairs": pairs,
        "long_range": long_range,
        "mean_degree": 2.0 * pairs.len() as f64 / coords.len() as f64,
    });
    Ok(v.to_string())
}

/// Focal loss of one example whose true-class probability runs over `points`
/// values in `(0, 1)`, the remaining mass split evenly over the other classes.
#[wasm_bindgen]
pub fn focal_curve(gamma: f64, smoothing: f64, classes: usize, points: usize) -> Result<Vec<f64>, String> {
    if classes < 2 {
        return Err("need at least two classes".into());
    }
    let alpha = vec![1.0; classes];
    (1..=points)
        .map(|s| {
            let p = s as f64 / (points + 1) as f64;
            let rest = ((1.0 - p) / (classes - 1) as f64).ln();
            let row: Vec<f64> = (0..classes).map(|c| if c == 0 { p.ln() } else { rest }).collect();
            let mut t = Tape::new();
            let logits = t.constant(Tensor::from_vec(1, classes, row).expect("sized"));
            let loss = focal_loss(&mut t, logits, &[0], &alpha, gamma, smoothing).map_err(|e| e.to_string())?;
            Ok(t.value(loss).item())
        })
        .collect()
}

/// Probabilities at which `focal_curve` is evaluated.
#[wasm_bindgen]
pub fn focal_grid(points: usize) -> Vec<f64> {
    (1..=points).map(|s| s as f64 / (points + 1) as f64).collect()
}
